//! Statistical fingerprints of numeric tabular datasets, sentence embeddings
//! and canonical-correlation similarity between datasets.

pub mod cluster;
pub mod datamodel;
pub mod descriptors;
pub mod embed;
pub mod harness;
pub mod error;
pub mod privacy;
pub mod serialize;
pub mod similarity;
pub mod spectral;
pub mod stats;

pub use error::{Error, ErrorClass, Result};
