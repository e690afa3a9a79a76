//! Model bundle files: one ASCII header line, then every parameter as
//! raw 64-bit little-endian reals.
//!
//! Header: `swd-model generator=<w0,w1,...> classifier=<w0,w1,...> seed=<u64>\n`.
//! Payload order: generator, C1, C2; per layer the weight matrix
//! (row-major, input×output) then the bias row. The round trip is
//! bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use swd_core::models::{init_bundle, LayerParams, MlpSpec, ModelBundle};

use crate::{CliError, CliResult};

fn push_net(out: &mut Vec<u8>, net: &[LayerParams]) {
    for layer in net {
        for &v in layer.weight.values().iter().chain(layer.bias.values()) {
            out.extend(v.to_le_bytes());
        }
    }
}

pub fn write_bundle(path: &Path, bundle: &ModelBundle) -> CliResult<()> {
    let header = format!(
        "swd-model generator={} classifier={} seed={}\n",
        join(bundle.generator_spec().widths()),
        join(bundle.classifier_spec().widths()),
        bundle.init_seed(),
    );
    let mut bytes = header.into_bytes();
    push_net(&mut bytes, &bundle.generator);
    push_net(&mut bytes, &bundle.c1);
    push_net(&mut bytes, &bundle.c2);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

fn join(widths: &[usize]) -> String {
    widths
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_widths(text: &str, what: &str) -> CliResult<Vec<usize>> {
    text.split(',')
        .map(|p| p.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::Runtime(format!("model file: bad {what} widths `{text}`")))
}

fn fill_net(net: &mut [LayerParams], data: &mut impl Iterator<Item = f64>) -> CliResult<()> {
    for layer in net {
        for slot in layer
            .weight
            .values_mut()
            .iter_mut()
            .chain(layer.bias.values_mut())
        {
            *slot = data
                .next()
                .ok_or_else(|| CliError::Runtime("model file: payload too short".into()))?;
        }
    }
    Ok(())
}

pub fn read_bundle(path: &Path) -> CliResult<ModelBundle> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CliError::Runtime("model file: missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| CliError::Runtime("model file: header is not ASCII".into()))?;

    let mut generator_widths = None;
    let mut classifier_widths = None;
    let mut seed = 0u64;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("swd-model") {
        return Err(CliError::Runtime("model file: unrecognized header".into()));
    }
    for field in fields {
        if let Some(text) = field.strip_prefix("generator=") {
            generator_widths = Some(parse_widths(text, "generator")?);
        } else if let Some(text) = field.strip_prefix("classifier=") {
            classifier_widths = Some(parse_widths(text, "classifier")?);
        } else if let Some(text) = field.strip_prefix("seed=") {
            seed = text
                .parse()
                .map_err(|_| CliError::Runtime("model file: bad seed".into()))?;
        } else {
            return Err(CliError::Runtime(format!(
                "model file: unknown header field `{field}`"
            )));
        }
    }
    let generator_widths =
        generator_widths.ok_or_else(|| CliError::Runtime("model file: missing generator widths".into()))?;
    let classifier_widths = classifier_widths
        .ok_or_else(|| CliError::Runtime("model file: missing classifier widths".into()))?;

    let gspec = MlpSpec::new(generator_widths).map_err(CliError::runtime)?;
    let cspec = MlpSpec::new(classifier_widths).map_err(CliError::runtime)?;
    let mut bundle = init_bundle(&gspec, &cspec, seed).map_err(CliError::runtime)?;

    let payload = &bytes[newline + 1..];
    let expected = (gspec.param_count() + 2 * cspec.param_count()) * 8;
    if payload.len() != expected {
        return Err(CliError::Runtime(format!(
            "model file: payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let mut reals = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    fill_net(&mut bundle.generator, &mut reals)?;
    fill_net(&mut bundle.c1, &mut reals)?;
    fill_net(&mut bundle.c2, &mut reals)?;
    Ok(bundle)
}
