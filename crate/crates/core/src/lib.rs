//! Predicting stock percent change from news headlines.
//!
//! The pipeline: [`data`] loads or synthesizes headline/price records,
//! [`modality`] turns each record into model input text and a target,
//! [`tokenizer`] maps text to fixed-length id sequences, [`model`] is a small
//! BERT-style encoder with a scalar regression head trained by [`training`],
//! [`lstm`] is a price-history baseline, and [`evaluation`] scores and
//! compares the resulting predictions. [`experiment`] wires these together
//! per dataset, and [`config`] reads `key = value` settings files.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod lstm;
pub mod modality;
pub mod model;
pub mod numerics;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
