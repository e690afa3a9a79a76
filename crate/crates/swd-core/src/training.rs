//! Three-step adversarial adaptation and its fused gradient-reversal
//! variant.
//!
//! Per outer iteration (three_step mode):
//!
//! 1. supervised step on the labeled source batch — all networks
//!    descend the mean of both classifiers' cross-entropies;
//! 2. classifier step on source + target batches — C1/C2 descend
//!    `L_s − L_DIS(target)` while the generator stays bitwise frozen;
//! 3. generator step(s) on the target batch — G descends `L_DIS` while
//!    the classifiers stay bitwise frozen.
//!
//! `L_DIS` is the sliced Wasserstein discrepancy between the two
//! classifier outputs (or the mean-absolute-difference baseline).
//! Projections are resampled every outer iteration for step 2 and, by
//! default, reused in step 3.
//!
//! grl mode folds the adversarial game into one pass: the combined
//! loss is `L_s + grad_reverse(L_DIS, λ)`, so the backward pass hits
//! the reversal before reaching both classifiers and generator. At
//! λ = 1 the classifier gradients equal step 2's `−L_DIS` term and the
//! generator gradient equals −1 × its step-3 gradient.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{NodeId, OptimizerKind, OptimizerState, Tape, Tensor};
use crate::data::{minibatches, LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::models::{
    classifier_forward_node, generator_forward_node, init_bundle, predict, stage_bundle,
    LayerParams, MlpSpec, ModelBundle, StagedBundle,
};
use crate::ot::{sample_projections, swd_node, CostKind, ProjectionSet};

/// Discrepancy measure between the two classifier outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiscrepancyKind {
    /// Sliced Wasserstein discrepancy (the default).
    #[default]
    Swd,
    /// Mean absolute difference of the two outputs (the classic
    /// maximum-classifier-discrepancy baseline).
    L1,
}

/// What the discrepancy compares: softmax outputs (default) or raw
/// logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiscrepancyInput {
    #[default]
    Softmax,
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainMode {
    #[default]
    ThreeStep,
    Grl,
}

/// Every knob of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub outer_iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub num_projections: usize,
    pub cost: CostKind,
    pub reuse_projections_in_step3: bool,
    pub discrepancy: DiscrepancyKind,
    pub discrepancy_input: DiscrepancyInput,
    pub mode: TrainMode,
    pub grl_lambda: f64,
    /// Generator updates per outer iteration in step 3.
    pub n_step3: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            outer_iterations: 400,
            batch_size: 128,
            learning_rate: 2e-3,
            optimizer: OptimizerKind::Adam,
            weight_decay: 0.0,
            num_projections: 128,
            cost: CostKind::Quadratic,
            reuse_projections_in_step3: true,
            discrepancy: DiscrepancyKind::Swd,
            discrepancy_input: DiscrepancyInput::Softmax,
            mode: TrainMode::ThreeStep,
            grl_lambda: 1.0,
            n_step3: 4,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iterations == 0 || self.batch_size == 0 || self.num_projections == 0 || self.n_step3 == 0 {
            return Err(Error::Argument(
                "iterations, batch size, projection count, and n_step3 must all be at least 1".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Argument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Argument("weight decay must be non-negative".into()));
        }
        if !self.grl_lambda.is_finite() {
            return Err(Error::Argument("grl lambda must be finite".into()));
        }
        Ok(())
    }
}

/// Per-iteration history entry.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub source_loss: f64,
    pub discrepancy_before_step3: f64,
    pub discrepancy_after_step3: f64,
    pub source_accuracy: f64,
    /// NaN when no target labels were provided for evaluation.
    pub target_accuracy: f64,
}

/// One optimizer state per network, so freezing a network also leaves
/// its moments and step counter untouched.
#[derive(Debug, Clone)]
pub struct OptimizerBank {
    pub generator: OptimizerState,
    pub c1: OptimizerState,
    pub c2: OptimizerState,
}

impl OptimizerBank {
    pub fn for_bundle(config: &TrainConfig, bundle: &ModelBundle) -> Result<Self> {
        let make = |net: &[LayerParams]| {
            OptimizerState::new(
                config.optimizer,
                config.learning_rate,
                config.weight_decay,
                &ModelBundle::param_sizes(net),
            )
        };
        Ok(OptimizerBank {
            generator: make(&bundle.generator)?,
            c1: make(&bundle.c1)?,
            c2: make(&bundle.c2)?,
        })
    }
}

// ── Seed streams ─────────────────────────────────────────────────────
// All randomness of a run derives from TrainConfig::seed through
// disjoint splitmix64 streams, so runs are reproducible bit-for-bit.

const STREAM_INIT: u64 = 1;
const STREAM_SOURCE_BATCH: u64 = 2;
const STREAM_TARGET_BATCH: u64 = 3;
const STREAM_PROJECTIONS: u64 = 4;
const STREAM_PROJECTIONS_STEP3: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for (stream, index) under a base seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(splitmix64(index))))
}

/// Epoch-cycling mini-batch iterator: reshuffles with a fresh derived
/// seed whenever an epoch is exhausted.
struct BatchCycler {
    n_items: usize,
    batch_size: usize,
    base_seed: u64,
    stream: u64,
    epoch: u64,
    queue: VecDeque<Vec<usize>>,
}

impl BatchCycler {
    fn new(n_items: usize, batch_size: usize, base_seed: u64, stream: u64) -> Self {
        BatchCycler {
            n_items,
            batch_size,
            base_seed,
            stream,
            epoch: 0,
            queue: VecDeque::new(),
        }
    }

    fn next(&mut self) -> Result<Vec<usize>> {
        if self.queue.is_empty() {
            let seed = derive_seed(self.base_seed, self.stream, self.epoch);
            self.queue = minibatches(self.n_items, self.batch_size, seed)?.into();
            self.epoch += 1;
        }
        Ok(self.queue.pop_front().expect("refilled queue"))
    }
}

// ── Loss graph builders ──────────────────────────────────────────────

fn source_loss_node(
    tape: &mut Tape,
    staged: &StagedBundle,
    points: &Tensor,
    labels: &[usize],
) -> Result<NodeId> {
    let x = tape.leaf(points.clone());
    let features = generator_forward_node(tape, &staged.generator, x)?;
    let logits1 = classifier_forward_node(tape, &staged.c1, features)?;
    let logits2 = classifier_forward_node(tape, &staged.c2, features)?;
    let ce1 = tape.softmax_cross_entropy_mean(logits1, labels)?;
    let ce2 = tape.softmax_cross_entropy_mean(logits2, labels)?;
    // L_s = mean of the two classifiers' cross-entropies.
    let sum = tape.add(ce1, ce2)?;
    tape.scale(sum, 0.5)
}

/// Forwards the target batch and returns the discrepancy node between
/// the two classifier outputs.
fn discrepancy_branch(
    tape: &mut Tape,
    staged: &StagedBundle,
    target_points: &Tensor,
    dirs: &ProjectionSet,
    config: &TrainConfig,
) -> Result<NodeId> {
    let x = tape.leaf(target_points.clone());
    let features = generator_forward_node(tape, &staged.generator, x)?;
    let logits1 = classifier_forward_node(tape, &staged.c1, features)?;
    let logits2 = classifier_forward_node(tape, &staged.c2, features)?;
    discrepancy_node(tape, logits1, logits2, dirs, config)
}

/// Discrepancy between two logit nodes per the config: optional
/// softmax, then SWD or the mean-absolute-difference baseline.
pub fn discrepancy_node(
    tape: &mut Tape,
    logits1: NodeId,
    logits2: NodeId,
    dirs: &ProjectionSet,
    config: &TrainConfig,
) -> Result<NodeId> {
    let (p1, p2) = match config.discrepancy_input {
        DiscrepancyInput::Softmax => (tape.softmax(logits1)?, tape.softmax(logits2)?),
        DiscrepancyInput::Logits => (logits1, logits2),
    };
    match config.discrepancy {
        DiscrepancyKind::Swd => swd_node(tape, p1, p2, dirs, config.cost),
        DiscrepancyKind::L1 => {
            let diff = tape.sub(p1, p2)?;
            let abs = tape.abs(diff)?;
            let sum = tape.sum_all(abs)?;
            let entries = tape.value(p1).len() as f64;
            tape.scale(sum, 1.0 / entries)
        }
    }
}

// ── Parameter updates ────────────────────────────────────────────────

fn net_grads<'t>(tape: &'t Tape, staged: &[(NodeId, NodeId)]) -> Vec<&'t [f64]> {
    let mut grads = Vec::with_capacity(staged.len() * 2);
    for &(w, b) in staged {
        grads.push(tape.grad(w).expect("gradient after backward"));
        grads.push(tape.grad(b).expect("gradient after backward"));
    }
    grads
}

fn apply_update(
    state: &mut OptimizerState,
    net: &mut [LayerParams],
    grads: &[&[f64]],
) -> Result<()> {
    let mut params: Vec<&mut Tensor> = Vec::with_capacity(net.len() * 2);
    for layer in net.iter_mut() {
        params.push(&mut layer.weight);
        params.push(&mut layer.bias);
    }
    state.step(&mut params, grads)
}

// ── The three steps ──────────────────────────────────────────────────

/// Step 1: one optimizer step on the supervised source loss; all three
/// networks update. Returns the loss value.
pub fn step_source(
    bundle: &mut ModelBundle,
    bank: &mut OptimizerBank,
    source_points: &Tensor,
    source_labels: &[usize],
) -> Result<f64> {
    let mut tape = Tape::new();
    let staged = stage_bundle(&mut tape, bundle);
    let loss = source_loss_node(&mut tape, &staged, source_points, source_labels)?;
    tape.backward(loss)?;
    apply_update(&mut bank.generator, &mut bundle.generator, &net_grads(&tape, &staged.generator))?;
    apply_update(&mut bank.c1, &mut bundle.c1, &net_grads(&tape, &staged.c1))?;
    apply_update(&mut bank.c2, &mut bundle.c2, &net_grads(&tape, &staged.c2))?;
    tape.scalar(loss)
}

/// Step 2: one optimizer step on `L_s − L_DIS(target)` for the
/// classifiers only; the generator is bitwise untouched (values and
/// optimizer state). Returns (source loss, discrepancy) values.
pub fn step_max_discrepancy(
    bundle: &mut ModelBundle,
    bank: &mut OptimizerBank,
    source_points: &Tensor,
    source_labels: &[usize],
    target_points: &Tensor,
    dirs: &ProjectionSet,
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let staged = stage_bundle(&mut tape, bundle);
    let source_loss = source_loss_node(&mut tape, &staged, source_points, source_labels)?;
    let discrepancy = discrepancy_branch(&mut tape, &staged, target_points, dirs, config)?;
    let objective = tape.sub(source_loss, discrepancy)?;
    tape.backward(objective)?;
    apply_update(&mut bank.c1, &mut bundle.c1, &net_grads(&tape, &staged.c1))?;
    apply_update(&mut bank.c2, &mut bundle.c2, &net_grads(&tape, &staged.c2))?;
    Ok((tape.scalar(source_loss)?, tape.scalar(discrepancy)?))
}

/// Step 3: one optimizer step on `L_DIS(target)` for the generator
/// only; both classifiers are bitwise untouched. Returns the
/// discrepancy value at evaluation (before this update).
pub fn step_min_discrepancy(
    bundle: &mut ModelBundle,
    bank: &mut OptimizerBank,
    target_points: &Tensor,
    dirs: &ProjectionSet,
    config: &TrainConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let staged = stage_bundle(&mut tape, bundle);
    let discrepancy = discrepancy_branch(&mut tape, &staged, target_points, dirs, config)?;
    tape.backward(discrepancy)?;
    apply_update(&mut bank.generator, &mut bundle.generator, &net_grads(&tape, &staged.generator))?;
    tape.scalar(discrepancy)
}

/// Fused pass: one backward over `L_s + grad_reverse(L_DIS, λ)` and a
/// simultaneous optimizer step on all parameters. Returns
/// (source loss, discrepancy) values.
pub fn grl_step(
    bundle: &mut ModelBundle,
    bank: &mut OptimizerBank,
    source_points: &Tensor,
    source_labels: &[usize],
    target_points: &Tensor,
    dirs: &ProjectionSet,
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let staged = stage_bundle(&mut tape, bundle);
    let source_loss = source_loss_node(&mut tape, &staged, source_points, source_labels)?;
    let discrepancy = discrepancy_branch(&mut tape, &staged, target_points, dirs, config)?;
    let reversed = tape.grad_reverse(discrepancy, config.grl_lambda)?;
    let total = tape.add(source_loss, reversed)?;
    tape.backward(total)?;
    apply_update(&mut bank.generator, &mut bundle.generator, &net_grads(&tape, &staged.generator))?;
    apply_update(&mut bank.c1, &mut bundle.c1, &net_grads(&tape, &staged.c1))?;
    apply_update(&mut bank.c2, &mut bundle.c2, &net_grads(&tape, &staged.c2))?;
    Ok((tape.scalar(source_loss)?, tape.scalar(discrepancy)?))
}

/// Discrepancy value on a target batch with the current parameters
/// (no update). Uses the same graph as the training steps.
pub fn discrepancy_value(
    bundle: &ModelBundle,
    target_points: &Tensor,
    dirs: &ProjectionSet,
    config: &TrainConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let staged = stage_bundle(&mut tape, bundle);
    let node = discrepancy_branch(&mut tape, &staged, target_points, dirs, config)?;
    tape.scalar(node)
}

/// Fraction of rows where [`predict`] matches the labels.
pub fn evaluate(bundle: &ModelBundle, dataset: &LabeledDataset) -> Result<f64> {
    let predicted = predict(bundle, dataset.points())?;
    let hits = predicted
        .iter()
        .zip(dataset.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}

fn check_dimensions(
    config: &TrainConfig,
    gspec: &MlpSpec,
    cspec: &MlpSpec,
    source: &LabeledDataset,
    target: &UnlabeledDataset,
    target_labels: Option<&[usize]>,
) -> Result<()> {
    config.validate()?;
    if source.dim() != gspec.input_width() || target.dim() != gspec.input_width() {
        return Err(Error::Shape(format!(
            "dataset dimension {} / {} does not match generator input {}",
            source.dim(),
            target.dim(),
            gspec.input_width()
        )));
    }
    if source.class_count() > cspec.output_width() {
        return Err(Error::Shape(format!(
            "{} classes exceed classifier output width {}",
            source.class_count(),
            cspec.output_width()
        )));
    }
    if let Some(labels) = target_labels {
        if labels.len() != target.len() {
            return Err(Error::Shape(format!(
                "{} target labels for {} target points",
                labels.len(),
                target.len()
            )));
        }
        if labels.iter().any(|&l| l >= cspec.output_width()) {
            return Err(Error::Index("target label out of classifier range".into()));
        }
    }
    Ok(())
}

fn record_accuracies(
    bundle: &ModelBundle,
    source: &LabeledDataset,
    target_eval: Option<&LabeledDataset>,
) -> Result<(f64, f64)> {
    let source_accuracy = evaluate(bundle, source)?;
    let target_accuracy = match target_eval {
        Some(eval) => evaluate(bundle, eval)?,
        None => f64::NAN,
    };
    Ok((source_accuracy, target_accuracy))
}

fn target_eval_set(
    target: &UnlabeledDataset,
    target_labels: Option<&[usize]>,
    class_count: usize,
) -> Result<Option<LabeledDataset>> {
    match target_labels {
        Some(labels) => Ok(Some(LabeledDataset::new(
            target.points().clone(),
            labels.to_vec(),
            class_count,
        )?)),
        None => Ok(None),
    }
}

/// Runs the full adversarial loop and returns the trained bundle plus
/// one [`StepRecord`] per outer iteration. Fully deterministic per
/// `config.seed`. `target_labels`, when given, are used only to fill
/// `target_accuracy` in the history — never for optimization.
pub fn train(
    config: &TrainConfig,
    generator_spec: &MlpSpec,
    classifier_spec: &MlpSpec,
    source: &LabeledDataset,
    target: &UnlabeledDataset,
    target_labels: Option<&[usize]>,
) -> Result<(ModelBundle, Vec<StepRecord>)> {
    check_dimensions(config, generator_spec, classifier_spec, source, target, target_labels)?;
    let mut bundle = init_bundle(
        generator_spec,
        classifier_spec,
        derive_seed(config.seed, STREAM_INIT, 0),
    )?;
    let mut bank = OptimizerBank::for_bundle(config, &bundle)?;
    let target_eval = target_eval_set(target, target_labels, classifier_spec.output_width())?;
    let mut source_batches = BatchCycler::new(
        source.len(),
        config.batch_size,
        config.seed,
        STREAM_SOURCE_BATCH,
    );
    let mut target_batches = BatchCycler::new(
        target.len(),
        config.batch_size,
        config.seed,
        STREAM_TARGET_BATCH,
    );
    let disc_dim = classifier_spec.output_width();

    let mut history = Vec::with_capacity(config.outer_iterations);
    for iteration in 0..config.outer_iterations {
        let (source_points, source_labels) = source.batch(&source_batches.next()?)?;
        let target_points = target.batch(&target_batches.next()?)?;
        let dirs = sample_projections(
            config.num_projections,
            disc_dim,
            derive_seed(config.seed, STREAM_PROJECTIONS, iteration as u64),
        )?;

        let (source_loss, discrepancy_before, discrepancy_after) = match config.mode {
            TrainMode::ThreeStep => {
                let source_loss =
                    step_source(&mut bundle, &mut bank, &source_points, &source_labels)?;
                step_max_discrepancy(
                    &mut bundle,
                    &mut bank,
                    &source_points,
                    &source_labels,
                    &target_points,
                    &dirs,
                    config,
                )?;
                let before = discrepancy_value(&bundle, &target_points, &dirs, config)?;
                for inner in 0..config.n_step3 {
                    if config.reuse_projections_in_step3 {
                        step_min_discrepancy(&mut bundle, &mut bank, &target_points, &dirs, config)?;
                    } else {
                        let fresh = sample_projections(
                            config.num_projections,
                            disc_dim,
                            derive_seed(
                                config.seed,
                                STREAM_PROJECTIONS_STEP3,
                                (iteration * config.n_step3 + inner) as u64,
                            ),
                        )?;
                        step_min_discrepancy(&mut bundle, &mut bank, &target_points, &fresh, config)?;
                    }
                }
                // Before/after are both measured with the step-2
                // projections so the pair is comparable.
                let after = discrepancy_value(&bundle, &target_points, &dirs, config)?;
                (source_loss, before, after)
            }
            TrainMode::Grl => {
                let (source_loss, before) = grl_step(
                    &mut bundle,
                    &mut bank,
                    &source_points,
                    &source_labels,
                    &target_points,
                    &dirs,
                    config,
                )?;
                let after = discrepancy_value(&bundle, &target_points, &dirs, config)?;
                (source_loss, before, after)
            }
        };

        let (source_accuracy, target_accuracy) =
            record_accuracies(&bundle, source, target_eval.as_ref())?;
        history.push(StepRecord {
            iteration,
            source_loss,
            discrepancy_before_step3: discrepancy_before,
            discrepancy_after_step3: discrepancy_after,
            source_accuracy,
            target_accuracy,
        });
    }
    Ok((bundle, history))
}

/// Supervised-only baseline: runs the same outer loop, batch streams,
/// and projection draws, but applies only the source step. The
/// recorded discrepancies are diagnostic (no adversarial update
/// happens, so before == after).
pub fn train_source_only(
    config: &TrainConfig,
    generator_spec: &MlpSpec,
    classifier_spec: &MlpSpec,
    source: &LabeledDataset,
    target: &UnlabeledDataset,
    target_labels: Option<&[usize]>,
) -> Result<(ModelBundle, Vec<StepRecord>)> {
    check_dimensions(config, generator_spec, classifier_spec, source, target, target_labels)?;
    let mut bundle = init_bundle(
        generator_spec,
        classifier_spec,
        derive_seed(config.seed, STREAM_INIT, 0),
    )?;
    let mut bank = OptimizerBank::for_bundle(config, &bundle)?;
    let target_eval = target_eval_set(target, target_labels, classifier_spec.output_width())?;
    let mut source_batches = BatchCycler::new(
        source.len(),
        config.batch_size,
        config.seed,
        STREAM_SOURCE_BATCH,
    );
    let mut target_batches = BatchCycler::new(
        target.len(),
        config.batch_size,
        config.seed,
        STREAM_TARGET_BATCH,
    );
    let disc_dim = classifier_spec.output_width();

    let mut history = Vec::with_capacity(config.outer_iterations);
    for iteration in 0..config.outer_iterations {
        let (source_points, source_labels) = source.batch(&source_batches.next()?)?;
        let target_points = target.batch(&target_batches.next()?)?;
        let dirs = sample_projections(
            config.num_projections,
            disc_dim,
            derive_seed(config.seed, STREAM_PROJECTIONS, iteration as u64),
        )?;
        let source_loss = step_source(&mut bundle, &mut bank, &source_points, &source_labels)?;
        let discrepancy = discrepancy_value(&bundle, &target_points, &dirs, config)?;
        let (source_accuracy, target_accuracy) =
            record_accuracies(&bundle, source, target_eval.as_ref())?;
        history.push(StepRecord {
            iteration,
            source_loss,
            discrepancy_before_step3: discrepancy,
            discrepancy_after_step3: discrepancy,
            source_accuracy,
            target_accuracy,
        });
    }
    Ok((bundle, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gaussian_blobs, make_moons, ShiftSpec};
    use alloc::vec;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            outer_iterations: 2,
            batch_size: 16,
            learning_rate: 1e-3,
            num_projections: 8,
            n_step3: 1,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn specs() -> (MlpSpec, MlpSpec) {
        (
            MlpSpec::new(vec![2, 8, 8]).unwrap(),
            MlpSpec::new(vec![8, 8, 2]).unwrap(),
        )
    }

    fn moons_pair() -> (LabeledDataset, UnlabeledDataset, Vec<usize>) {
        let source = make_moons(40, 0.05, 1).unwrap();
        let shift = ShiftSpec::new(0.5, vec![0.2, 0.1]).unwrap();
        let target = make_moons(40, 0.05, 2).unwrap().shifted(&shift).unwrap();
        let labels = target.labels().to_vec();
        (source, target.to_unlabeled(), labels)
    }

    #[test]
    fn source_loss_on_zero_init_is_ln2() {
        let (g, c) = specs();
        let mut bundle = init_bundle(&g, &c, 0).unwrap();
        for net in [&mut bundle.generator, &mut bundle.c1, &mut bundle.c2] {
            for layer in net.iter_mut() {
                layer.weight.values_mut().fill(0.0);
                layer.bias.values_mut().fill(0.0);
            }
        }
        // Zero params → zero logits → each head's CE is ln 2; the
        // combined loss is the mean of the two, still ln 2.
        let config = tiny_config();
        let mut bank = OptimizerBank::for_bundle(&config, &bundle).unwrap();
        let x = Tensor::from_rows(&[vec![0.4, -0.3], vec![1.0, 0.2]]).unwrap();
        let loss = step_source(&mut bundle, &mut bank, &x, &[0, 1]).unwrap();
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn repeated_source_steps_descend_on_fixed_batch() {
        let (g, c) = specs();
        let mut bundle = init_bundle(&g, &c, 3).unwrap();
        let config = TrainConfig {
            learning_rate: 0.05,
            ..tiny_config()
        };
        let mut bank = OptimizerBank::for_bundle(&config, &bundle).unwrap();
        let source = make_moons(20, 0.02, 4).unwrap();
        let idx: Vec<usize> = (0..source.len()).collect();
        let (x, y) = source.batch(&idx).unwrap();
        let first = step_source(&mut bundle, &mut bank, &x, &y).unwrap();
        let mut last = first;
        for _ in 0..19 {
            last = step_source(&mut bundle, &mut bank, &x, &y).unwrap();
        }
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn saturated_correct_logits_leave_params_unchanged() {
        // Identity generator, classifier scoring class 0 at +1000:
        // the softmax−onehot gradient underflows to exactly zero.
        let spec = MlpSpec::new(vec![2, 2]).unwrap();
        let eye = LayerParams {
            weight: Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])
                .unwrap()
                .requiring_grad(),
            bias: Tensor::zeros(1, 2).requiring_grad(),
        };
        let head = LayerParams {
            weight: Tensor::from_rows(&[vec![1000.0, 0.0], vec![0.0, 0.0]])
                .unwrap()
                .requiring_grad(),
            bias: Tensor::zeros(1, 2).requiring_grad(),
        };
        let mut bundle = init_bundle(&spec, &spec, 0).unwrap();
        bundle.generator = vec![eye];
        bundle.c1 = vec![head.clone()];
        bundle.c2 = vec![head];
        let before = bundle.clone();
        let config = tiny_config();
        let mut bank = OptimizerBank::for_bundle(&config, &bundle).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        step_source(&mut bundle, &mut bank, &x, &[0]).unwrap();
        assert_eq!(bundle, before);
    }

    #[test]
    fn step2_freezes_generator_step3_freezes_classifiers() {
        let (g, c) = specs();
        let config = tiny_config();
        let (source, target, _) = moons_pair();
        let mut bundle = init_bundle(&g, &c, 11).unwrap();
        let mut bank = OptimizerBank::for_bundle(&config, &bundle).unwrap();
        let idx: Vec<usize> = (0..16).collect();
        let (sx, sy) = source.batch(&idx).unwrap();
        let tx = target.batch(&idx).unwrap();
        let dirs = sample_projections(config.num_projections, 2, 9).unwrap();

        let gen_before = bundle.generator.clone();
        step_max_discrepancy(&mut bundle, &mut bank, &sx, &sy, &tx, &dirs, &config).unwrap();
        assert_eq!(bundle.generator, gen_before);

        let c1_before = bundle.c1.clone();
        let c2_before = bundle.c2.clone();
        step_min_discrepancy(&mut bundle, &mut bank, &tx, &dirs, &config).unwrap();
        assert_eq!(bundle.c1, c1_before);
        assert_eq!(bundle.c2, c2_before);
    }

    #[test]
    fn identical_heads_give_zero_l1_discrepancy_and_zero_gradients() {
        let (g, c) = specs();
        let mut bundle = init_bundle(&g, &c, 13).unwrap();
        bundle.c2 = bundle.c1.clone();
        let config = TrainConfig {
            discrepancy: DiscrepancyKind::L1,
            ..tiny_config()
        };
        let tx = Tensor::from_rows(&[vec![0.5, 0.5], vec![-0.2, 1.0]]).unwrap();
        let dirs = sample_projections(4, 2, 1).unwrap();

        let mut tape = Tape::new();
        let staged = stage_bundle(&mut tape, &bundle);
        let node = discrepancy_branch(&mut tape, &staged, &tx, &dirs, &config).unwrap();
        assert_eq!(tape.scalar(node).unwrap(), 0.0);
        tape.backward(node).unwrap();
        for (w, b) in staged.c1.iter().chain(&staged.c2) {
            assert!(tape.grad(*w).unwrap().iter().all(|&v| v == 0.0));
            assert!(tape.grad(*b).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identical_heads_give_zero_swd_gradient_for_generator() {
        let (g, c) = specs();
        let mut bundle = init_bundle(&g, &c, 29).unwrap();
        bundle.c2 = bundle.c1.clone();
        let config = tiny_config();
        let mut bank = OptimizerBank::for_bundle(&config, &bundle).unwrap();
        let tx = Tensor::from_rows(&[vec![0.5, 0.5], vec![-0.2, 1.0]]).unwrap();
        let dirs = sample_projections(4, 2, 1).unwrap();
        let gen_before = bundle.generator.clone();
        let value = step_min_discrepancy(&mut bundle, &mut bank, &tx, &dirs, &config).unwrap();
        assert_eq!(value, 0.0);
        // First step with exactly zero gradient leaves parameters put.
        assert_eq!(bundle.generator, gen_before);
    }

    #[test]
    fn one_iteration_updates_every_network() {
        let (g, c) = specs();
        let (source, target, labels) = moons_pair();
        let config = TrainConfig {
            outer_iterations: 1,
            ..tiny_config()
        };
        let init = init_bundle(&g, &c, derive_seed(config.seed, STREAM_INIT, 0)).unwrap();
        let (trained, history) =
            train(&config, &g, &c, &source, &target, Some(&labels)).unwrap();
        assert_eq!(history.len(), 1);
        assert_ne!(trained.generator, init.generator);
        assert_ne!(trained.c1, init.c1);
        assert_ne!(trained.c2, init.c2);
    }

    #[test]
    fn training_history_is_bitwise_reproducible() {
        let (g, c) = specs();
        let (source, target, labels) = moons_pair();
        let config = tiny_config();
        let (b1, h1) = train(&config, &g, &c, &source, &target, Some(&labels)).unwrap();
        let (b2, h2) = train(&config, &g, &c, &source, &target, Some(&labels)).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn grl_mode_runs_and_records() {
        let (g, c) = specs();
        let (source, target, labels) = moons_pair();
        let config = TrainConfig {
            mode: TrainMode::Grl,
            ..tiny_config()
        };
        let (_, history) = train(&config, &g, &c, &source, &target, Some(&labels)).unwrap();
        assert_eq!(history.len(), config.outer_iterations);
        assert!(history.iter().all(|r| r.source_loss.is_finite()));
    }

    #[test]
    fn evaluate_perfect_and_flipped() {
        // Hand-built boundary at x0 = 0.5 (see models tests).
        let spec = MlpSpec::new(vec![2, 2]).unwrap();
        let eye = LayerParams {
            weight: Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])
                .unwrap()
                .requiring_grad(),
            bias: Tensor::zeros(1, 2).requiring_grad(),
        };
        let head = LayerParams {
            weight: Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]])
                .unwrap()
                .requiring_grad(),
            bias: Tensor::new(1, 2, vec![0.0, -0.5]).unwrap().requiring_grad(),
        };
        let mut bundle = init_bundle(&spec, &spec, 0).unwrap();
        bundle.generator = vec![eye];
        bundle.c1 = vec![head.clone()];
        bundle.c2 = vec![head];
        let points = Tensor::from_rows(&[vec![0.9, 0.0], vec![0.1, 0.0]]).unwrap();
        let right = LabeledDataset::new(points.clone(), vec![1, 0], 2).unwrap();
        let wrong = LabeledDataset::new(points, vec![0, 1], 2).unwrap();
        assert_eq!(evaluate(&bundle, &right).unwrap(), 1.0);
        assert_eq!(evaluate(&bundle, &wrong).unwrap(), 0.0);
    }

    #[test]
    fn random_init_accuracy_sits_in_chance_band() {
        let (g, c) = specs();
        // Both classes drawn from the same cloud: labels carry no
        // positional information, so any fixed predictor hits ≈ 1/2.
        let data = gaussian_blobs(&[vec![0.0, 0.0], vec![0.0, 0.0]], 1.0, 50, 77).unwrap();
        for seed in 0..20 {
            let bundle = init_bundle(&g, &c, seed).unwrap();
            let acc = evaluate(&bundle, &data).unwrap();
            assert!((0.3..=0.7).contains(&acc), "seed {seed}: accuracy {acc}");
        }
    }

    #[test]
    fn config_validation_rejects_zero_counts() {
        let mut config = tiny_config();
        config.outer_iterations = 0;
        assert!(config.validate().is_err());
        let mut config = tiny_config();
        config.learning_rate = -1.0;
        assert!(config.validate().is_err());
    }
}
