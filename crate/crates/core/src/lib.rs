//! Group-distributional preference alignment at desk scale.
//!
//! The crate generates synthetic belief-conditioned preference data,
//! trains small autoregressive policies with supervised fine-tuning, DPO,
//! GDPO and KTO-GDPO objectives, and evaluates how well the policy's belief
//! distribution matches a target population.

pub mod align;
pub mod belief;
pub mod datagen;
pub mod error;
pub mod evalkit;
pub mod policy;
pub mod train;
pub mod vocab;

pub use error::{Error, ErrorKind, Result};
