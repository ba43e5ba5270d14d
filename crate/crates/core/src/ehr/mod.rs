//! Hierarchical multimodal EHR data model and synthetic dataset machinery.
//!
//! A dataset is a set of patients, each a time-ordered visit sequence. Every
//! visit carries three modalities: demographic field indices, a clinical-note
//! token sequence, and a set of leaf diagnosis codes structured by a
//! three-level ontology (unique -> category -> typing). The task downstream is
//! to predict the next visit's category codes from the visits before it.

mod encode;
mod generate;
mod io;
mod ontology;
mod split;
mod types;

pub use encode::{encode_missing, EncodedVisit};
pub use generate::{generate_dataset, generate_dataset_with, ontology_for, DatasetStats};
pub use io::{deserialize_dataset, serialize_dataset, DatasetFile};
pub use ontology::{build_ontology, Ontology};
pub use split::{split_dataset, SplitParts};
pub use types::{DataError, DatasetConfig, PatientRecord, Presence, Visit};
