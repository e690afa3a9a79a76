//! Sliced Wasserstein discrepancy (SWD) for adversarial domain adaptation.
//!
//! The crate provides four layers, each usable on its own:
//!
//! * [`autodiff`] — a minimal reverse-mode tape over dense 2-D `f64`
//!   tensors, including the sort/gather primitives and the gradient
//!   reversal op that the SWD loss needs, plus SGD-momentum and Adam.
//! * [`ot`] — unit-sphere projection sampling, the closed-form 1-D
//!   Wasserstein distance, the differentiable SWD built from tape
//!   primitives, and a factorial brute-force EMD oracle for validation.
//! * [`models`] — seeded MLP feature generator and twin classifiers.
//! * [`training`] — the three-step adversarial loop (supervised source
//!   step, classifier discrepancy maximization, generator discrepancy
//!   minimization) and its fused gradient-reversal variant.
//! * [`data`] — two-moons and Gaussian-blob synthesis, rigid-motion
//!   domain shifts, and seeded mini-batching.
//!
//! The crate is `no_std`-compatible (with `alloc`); disable the default
//! `std` feature for embedded or wasm use. File formats, CSV/PGM output,
//! and the experiment CLI live in the companion `swd-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod models;
pub mod ot;
pub mod training;

pub use autodiff::{
    finite_diff_gradient, sort_permutation, NodeId, OptimizerKind, OptimizerState, Tape, Tensor,
};
pub use data::{
    gaussian_blobs, make_moons, minibatches, LabeledDataset, ShiftSpec, UnlabeledDataset,
};
pub use error::{Error, Result};
pub use models::{init_bundle, predict, MlpSpec, ModelBundle};
pub use ot::{
    emd_exact, monge_map_exists_check, project, sample_projections, swd, swd_node, wasserstein_1d,
    CostKind, Coupling, DiscreteMeasure, GroundCost, ProjectionSet,
};
pub use training::{
    evaluate, train, train_source_only, DiscrepancyInput, DiscrepancyKind, StepRecord,
    TrainConfig, TrainMode,
};
