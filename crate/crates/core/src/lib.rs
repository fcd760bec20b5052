//! Allocation-only core of the MetaDefa single-domain-generalization trainer.
//!
//! Everything in this crate is pure computation over `f64` buffers: a small
//! set of hand-differentiated primitives ([`ops`]), a tiny CNN that exposes
//! its class activation maps ([`model`]), the feature-alignment objective
//! ([`losses`]), mask-driven domain enhancement ([`augment`]), the episodic
//! first-order meta-training loop ([`metaloop`]) and a synthetic multi-domain
//! shape benchmark ([`data`]). File formats, IO and the command line live in
//! the `metadefa` companion crate.
#![no_std]

extern crate alloc;

pub mod augment;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metaloop;
pub mod model;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;

pub use augment::{CorruptionConfig, CorruptionKind, LabeledImage};
pub use data::{DomainDataset, DomainStyle, SyntheticSpec};
pub use error::{Error, Result};
pub use losses::{LossBreakdown, LossTerms, LossWeights};
pub use metaloop::{EpochRecord, Learner, MetaConfig, Task, TrainSetup};
pub use model::{ActivationBundle, TinyCnn, TinyCnnConfig};
pub use params::ParamSet;
pub use tensor::Tensor;
