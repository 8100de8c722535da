//! Core library for the SNOW note-to-outcome pipeline.
//!
//! The pipeline turns a cohort of patients with unstructured clinical notes
//! into a structured feature matrix and evaluates feature sets against a
//! biochemical-failure outcome:
//!
//! - [`cohort`]: domain model, cohort file IO, inclusion criteria, matrix assembly
//! - [`outcome`]: biochemical-failure labeling from PSA series
//! - [`llm`]: chat-completion client with schema validation, record/replay, mock
//! - [`agents`]: discovery / extraction / validation-loop / aggregation orchestration
//! - [`aggdsl`]: restricted aggregation expression language (parser + interpreter)
//! - [`clfg`]: clinician-guided extraction templates and clinical derivations
//! - [`rfg`]: bag-of-words / TF-IDF features with truncated SVD reduction
//! - [`eval`]: logistic regression, nested cross-validation, AUC reporting
//! - [`synth`]: synthetic cohort generator with ground-truth manifest and mock backend

pub mod aggdsl;
pub mod agents;
pub mod clfg;
pub mod cohort;
pub mod eval;
pub mod llm;
pub mod outcome;
pub mod rfg;
pub mod synth;
