//! MLP feature generator and twin classifiers with seeded init.
//!
//! The generator is a relu MLP whose final layer is also relu-activated
//! (non-negative feature maps); classifiers are relu MLPs ending in a
//! plain affine layer (raw logits). Test-time prediction averages the
//! two classifiers' softmax outputs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Fully-connected architecture: input, hidden..., output widths.
/// Hidden activation is relu; the last layer's activation depends on
/// the role (generator vs classifier).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    layer_widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::Argument(
                "an MLP needs at least input and output widths".into(),
            ));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::Argument("all layer widths must be positive".into()));
        }
        Ok(MlpSpec { layer_widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Number of affine layers.
    pub fn layer_count(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Total parameter count: Σ (w_i·w_{i+1} + w_{i+1}).
    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// One affine layer: weight is input×output, bias is 1×output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Parameters of the generator G and classifiers C1, C2.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    generator_spec: MlpSpec,
    classifier_spec: MlpSpec,
    pub generator: Vec<LayerParams>,
    pub c1: Vec<LayerParams>,
    pub c2: Vec<LayerParams>,
    init_seed: u64,
}

impl ModelBundle {
    pub fn generator_spec(&self) -> &MlpSpec {
        &self.generator_spec
    }

    pub fn classifier_spec(&self) -> &MlpSpec {
        &self.classifier_spec
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn class_count(&self) -> usize {
        self.classifier_spec.output_width()
    }

    /// Flat size list over G, C1, C2 in serialization order
    /// (per layer: weight then bias), for optimizer-state setup.
    pub fn param_sizes(net: &[LayerParams]) -> Vec<usize> {
        net.iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect()
    }
}

/// Initializes a bundle with Kaiming-uniform weights
/// (bound = sqrt(6 / fan_in)) and zero biases. C1 and C2 draw from
/// distinct seed streams derived from `seed`, so they are
/// shape-congruent but numerically distinct. Deterministic per seed.
pub fn init_bundle(gspec: &MlpSpec, cspec: &MlpSpec, seed: u64) -> Result<ModelBundle> {
    if gspec.output_width() != cspec.input_width() {
        return Err(Error::Shape(format!(
            "generator output width {} does not feed classifier input width {}",
            gspec.output_width(),
            cspec.input_width()
        )));
    }
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let g_seed: u64 = seeder.random();
    let c1_seed: u64 = seeder.random();
    let c2_seed: u64 = seeder.random();
    Ok(ModelBundle {
        generator: init_mlp(gspec, g_seed)?,
        c1: init_mlp(cspec, c1_seed)?,
        c2: init_mlp(cspec, c2_seed)?,
        generator_spec: gspec.clone(),
        classifier_spec: cspec.clone(),
        init_seed: seed,
    })
}

fn init_mlp(spec: &MlpSpec, seed: u64) -> Result<Vec<LayerParams>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.layer_count());
    for w in spec.widths().windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / fan_in as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        layers.push(LayerParams {
            weight: Tensor::new(fan_in, fan_out, data)?.requiring_grad(),
            bias: Tensor::zeros(1, fan_out).requiring_grad(),
        });
    }
    Ok(layers)
}

/// Node handles of one staged network, aligned with its layers.
pub type StagedNet = Vec<(NodeId, NodeId)>;

/// Handles of all three staged networks on one tape.
pub struct StagedBundle {
    pub generator: StagedNet,
    pub c1: StagedNet,
    pub c2: StagedNet,
}

/// Copies every parameter of the bundle onto the tape as leaves.
pub fn stage_bundle(tape: &mut Tape, bundle: &ModelBundle) -> StagedBundle {
    StagedBundle {
        generator: stage_net(tape, &bundle.generator),
        c1: stage_net(tape, &bundle.c1),
        c2: stage_net(tape, &bundle.c2),
    }
}

pub fn stage_net(tape: &mut Tape, net: &[LayerParams]) -> StagedNet {
    net.iter()
        .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
        .collect()
}

fn mlp_forward_node(
    tape: &mut Tape,
    layers: &[(NodeId, NodeId)],
    x: NodeId,
    relu_last: bool,
) -> Result<NodeId> {
    let mut h = x;
    let last = layers.len() - 1;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let affine = tape.matmul(h, w)?;
        h = tape.add_bias(affine, b)?;
        if i < last || relu_last {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Generator forward on the tape: affine + relu per layer, final layer
/// relu-activated too.
pub fn generator_forward_node(tape: &mut Tape, net: &[(NodeId, NodeId)], x: NodeId) -> Result<NodeId> {
    mlp_forward_node(tape, net, x, true)
}

/// Classifier forward on the tape: affine + relu chain, last layer
/// affine only (raw logits).
pub fn classifier_forward_node(
    tape: &mut Tape,
    net: &[(NodeId, NodeId)],
    features: NodeId,
) -> Result<NodeId> {
    mlp_forward_node(tape, net, features, false)
}

fn forward_value(net: &[LayerParams], x: &Tensor, relu_last: bool) -> Result<Tensor> {
    let mut tape = Tape::new();
    let staged = stage_net(&mut tape, net);
    let input = tape.leaf(x.clone());
    let out = mlp_forward_node(&mut tape, &staged, input, relu_last)?;
    Ok(tape.value(out).clone())
}

/// Feature map of a batch: n×d_in → n×d_feat.
pub fn forward_generator(bundle: &ModelBundle, x: &Tensor) -> Result<Tensor> {
    if x.cols() != bundle.generator_spec.input_width() {
        return Err(Error::Shape(format!(
            "input width {} does not match generator input {}",
            x.cols(),
            bundle.generator_spec.input_width()
        )));
    }
    forward_value(&bundle.generator, x, true)
}

/// Raw logits of one classifier head on a feature batch.
pub fn forward_classifier(net: &[LayerParams], features: &Tensor) -> Result<Tensor> {
    if features.cols() != net[0].weight.rows() {
        return Err(Error::Shape(format!(
            "feature width {} does not match classifier input {}",
            features.cols(),
            net[0].weight.rows()
        )));
    }
    forward_value(net, features, false)
}

/// Row-wise softmax of a logits tensor (value-level helper).
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (n, k) = logits.shape();
    let mut data = vec![0.0; n * k];
    for r in 0..n {
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for c in 0..k {
            let e = (row[c] - max).exp();
            data[r * k + c] = e;
            sum += e;
        }
        for c in 0..k {
            data[r * k + c] /= sum;
        }
    }
    Tensor::new(n, k, data).expect("softmax of finite logits is finite")
}

/// Predicted class per row: argmax of the mean of the two classifiers'
/// softmax outputs, ties resolved to the lower class index.
pub fn predict(bundle: &ModelBundle, x: &Tensor) -> Result<Vec<usize>> {
    let features = forward_generator(bundle, x)?;
    let p1 = softmax_rows(&forward_classifier(&bundle.c1, &features)?);
    let p2 = softmax_rows(&forward_classifier(&bundle.c2, &features)?);
    let (n, k) = p1.shape();
    let mut out = Vec::with_capacity(n);
    for r in 0..n {
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for c in 0..k {
            let score = 0.5 * (p1.get(r, c) + p2.get(r, c));
            if score > best_score {
                best_score = score;
                best = c;
            }
        }
        out.push(best);
    }
    Ok(out)
}
