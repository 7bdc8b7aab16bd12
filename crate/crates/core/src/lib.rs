//! Extraction of menstrual-health attributes from free-text clinical notes.
//!
//! Notes are split into segments, the segments most related to a fixed
//! menstrual-health query are kept by hybrid BM25 + embedding retrieval, and
//! five attributes are then classified by rendering the retained text
//! through cloze templates and mapping mask-position scores to labels with
//! verbalizers. A single shared scorer can be trained on all five tasks at
//! once.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod icl;
#[cfg(feature = "mock-server")]
pub mod mock;
pub mod model;
pub mod prompting;
pub mod retrieval;
pub mod segmenter;
pub mod training;

pub use error::{Error, Result};
