//! Two-domain image translation with a shared content space, learned
//! per-domain content mappings and per-domain styles.
//!
//! A content encoder splits into a per-domain downsampler, whose output is
//! the domain-specific code `h`, and a residual projector that produces the
//! shared code `c`. For translation, `c` is mapped into the target domain's
//! content space before the target generator renders it with a style code.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod losses;
pub mod model;
pub(crate) mod nn;
pub mod optim;
pub mod par;
pub mod params;
pub mod seeding;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{CodeKind, ContentCode, DomainId, ImageBatch, Model, ModelConfig, StyleCode};
pub use tensor::Tensor;
