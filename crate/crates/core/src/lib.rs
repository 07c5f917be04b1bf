//! Multimodal patient-data insight engine.
//!
//! Loads a patient directory, mines statistical data facts from sensing and
//! survey series, synthesizes and narrates clinician-facing insights, and
//! assembles the dashboard bundle served to the review UI.

pub mod analyzer;
pub mod bundle;
pub mod config;
pub mod datagen;
pub mod ingest;
pub mod model;
pub mod narrator;
pub mod pipeline;
pub mod registry;
pub mod synthesizer;
pub mod text;

pub use config::Config;
pub use model::{DataFact, FactAttribute, FactType, Insight, PatientRecord};

#[cfg(test)]
mod fixtures;
