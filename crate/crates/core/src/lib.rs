//! Multimodal sequential diagnosis prediction under uncertain missing visit
//! data, trained end to end on configurable synthetic hierarchical-EHR
//! cohorts.
//!
//! The pipeline: a CMAG-fusion teacher is trained on complete records with
//! curriculum-scheduled random data erasing, then frozen and distilled into a
//! MAG-fusion student that trains on spec-corrupted records. Distillation
//! matches the teacher at every representation level: per-modality encoders
//! (contrastive + MSE), randomly selected transformer features, the fusion
//! output, and both prediction heads. Evaluation is top-k accuracy over the
//! next visit's category codes, overall and per presence pattern.
//!
//! Everything is `f64` and deterministic: each stochastic step draws from a
//! `(seed, domain, key)` ChaCha stream, so parallel and sequential execution
//! produce bit-identical results.

pub mod cli;
pub mod distill;
pub mod ehr;
pub mod exec;
pub mod missingness;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;
