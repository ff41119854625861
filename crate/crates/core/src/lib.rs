//! Statistical bias-attribute detection and bias-reduced dataset
//! construction over attribute-tagged corpora.
//!
//! Pipeline: [`corpus`] records are counted into a [`stats::ContingencyTable`];
//! [`stab`] picks one bias attribute per class; [`editplan`] turns the
//! detections into bias-edit and target-edit instructions; an [`editor`]
//! backend applies them; [`builder`] assembles the augmented dataset; and
//! [`eval`] measures bias-aligned / bias-conflict accuracy of a reference
//! linear classifier. [`synth`] generates corpora with planted biases.

pub mod builder;
pub mod corpus;
pub mod editor;
pub mod editplan;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fixtures;
pub mod par;
pub mod rng;
pub mod stab;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
