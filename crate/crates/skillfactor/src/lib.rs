//! skillfactor converts a library of free-form markdown skill documents into
//! typed pseudocode contracts with deterministic quality control, rewrites
//! the parent documents around verified `invoke(contract, args)` placeholders,
//! and renders retrieval-time bundles that pair each placeholder with its
//! typed contract and the concrete action template it replaced.
//!
//! The pipeline runs in stages, each with a durable artifact:
//!
//! 1. [`parser`] — markdown documents into parents and procedural units
//! 2. [`propose`] — frame extraction and single-linkage candidate clustering
//! 3. [`extract`] — one completion-backend call per cluster, schema-validated
//! 4. [`verify`] — four deterministic checks and a three-tier decision
//! 5. [`calibrate`] — synthetic negative controls and threshold grid search
//! 6. [`refactor`] — call-site detection, binding extraction, rewrite, cleanup
//! 7. [`bundle`] — hierarchical retrieval pool and substituted bundles
//!
//! The `skillfactor` binary orchestrates the stages; see the book under
//! `book/` for a guided tour of each concept.

pub mod backend;
pub mod bundle;
pub mod calibrate;
pub mod embed;
pub mod error;
pub mod extract;
pub mod parser;
pub mod pipeline;
pub mod propose;
pub mod refactor;
pub mod text;
pub mod verify;

pub use error::{Error, Result};
