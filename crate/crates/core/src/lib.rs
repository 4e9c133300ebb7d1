//! Causal direction inference from generalization gaps.
//!
//! A model trained on one distribution and evaluated on an intervened one
//! keeps its loss when it factorizes along the causal direction (the
//! mechanism is invariant) and loses accuracy otherwise. This crate provides:
//!
//! - [`prob`]: exact categorical arithmetic (joints, conditionals, entropy,
//!   KL, conditional KL) and random train/transfer pairs.
//! - [`models`]: count-MLE and softmax tables, a mixture marginal,
//!   linear-Gaussian regression and a two-layer network.
//! - [`direction`]: the gap score, the KL and gradient-norm alternatives,
//!   and the adaptation-speed meta-learner used as a baseline.
//! - [`replearn`]: a rotation encoder trained so that one direction of the
//!   learned representation generalizes across interventions.
//! - [`experiments`]: scenario runners and CSV/SVG output.

pub mod data;
pub mod direction;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod models;
pub mod prob;
pub mod replearn;
pub mod rng;

pub use data::{CountTable, Dataset, RealDataset, RealPair, SamplePair};
pub use error::{Error, Result};
pub use exec::Exec;
pub use prob::{Categorical, ConditionalTable, Direction, DistributionPair, EntropyDelta, JointTable};
