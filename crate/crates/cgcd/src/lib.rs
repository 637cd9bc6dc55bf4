//! Continual generalized category discovery at desk scale.
//!
//! The crate trains a small encoder + projection head with supervised and
//! unsupervised contrastive losses on a labelled base session, then walks a
//! stream of unlabelled incremental sessions combining
//! neighborhood-commonality self-distillation (new-class structure) with
//! bi-level contrastive distillation against a frozen teacher (old-class
//! retention). Evaluation clusters encoder features over the cumulative test
//! set and reports Hungarian-matched accuracy on All/Old/New classes.
//!
//! Start with the runnable programs under `examples/`; the `cgcd` binary
//! wraps the same library entry points behind `train-base`, `run-stream`,
//! `evaluate`, `gradcheck`, `sweep`, and `ablate` subcommands.

pub mod bckd;
pub mod cli;
pub mod diffmath;
pub mod eval;
pub mod model;
pub mod ncrl;
pub mod objectives;
pub mod registry;
pub mod rng;
pub mod sessions;
