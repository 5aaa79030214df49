//! Event-specific concept bank: ontology, tag mining, image encoding,
//! training-image selection, concept detectors, semantic query matching,
//! video representation, zero-shot retrieval and evaluation.

pub mod corpus;
pub mod detect;
pub mod encode;
pub mod error;
pub mod metrics;
pub mod numeric;
pub mod ontology;
pub mod pipeline;
pub mod retrieve;
pub mod select;
pub mod semmatch;
pub mod videorep;

pub use error::{Error, Result};
