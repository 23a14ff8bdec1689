//! Perceptual material fingerprints.
//!
//! A fingerprint is a vector of 16 perceptual attribute values in `[-1, 1]`.
//! This crate turns raw slider ratings into fingerprints, predicts them from
//! a pair of photographs (non-specular and near-specular), compares them with
//! a correlation/L1 similarity, and computes the evaluation statistics used to
//! judge a predictor against human data.

pub mod database;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod features;
pub mod fingerprint;
pub mod imaging;
pub mod mds;
pub mod mfx;
pub mod model;
pub mod ratings;
pub mod schema;
pub mod service;
pub mod stats;

pub use database::{CategorySet, Database};
pub use diagnostics::Warning;
pub use error::{Error, Result};
pub use fingerprint::{
    rank_by_attribute, retrieve, similarity, similarity_matrix, typicality, Fingerprint,
    MaterialId, MaterialRecord, ScoredMaterial, SimilarityParams,
};
pub use schema::{AttributeSchema, ATTRIBUTE_COUNT};
