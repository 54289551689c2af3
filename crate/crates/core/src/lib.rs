//! Gradient coordination toolkit for debiasing multimodal classifiers.
//!
//! The pieces compose in a fixed order per training step: loss construction
//! with distribution-adapted weights ([`losses`]), gradient coordination
//! across the joint and unimodal losses ([`gms`]), then per-group gradient
//! descent ([`mho`]). [`harness`] wires them around the small classifier in
//! [`model`] and the changing-priors corpora of [`datagen`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod gms;
pub mod harness;
pub mod losses;
pub mod mho;
pub mod model;
pub mod numeric;

pub use error::{CedoError, Result};
