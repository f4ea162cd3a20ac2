//! Region-based conceptual image retrieval with interactive relevance feedback.
//!
//! The crate is `no_std` and only needs `alloc`. It holds the data model
//! (images, regions, thesaurus, term-region associations, visual
//! categories), region feature extraction, similarity ranking, the
//! per-session feedback loop, association learning, and a simulated-user
//! evaluation harness with exact nonparametric tests.
//!
//! IO, file formats, persistence and the HTTP service live in the `voir`
//! crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod catalog;
pub mod error;
pub mod eval;
pub mod features;
pub mod feedback;
pub mod ids;
pub mod learning;
pub mod model;
pub mod similarity;
pub mod stats;
pub mod thesaurus;

#[cfg(feature = "serde")]
mod serde_pairs;

pub use catalog::{Association, Catalog, Origin};
pub use error::{Error, Result};
pub use ids::{CategoryId, ImageId, RegionId, TermId};
pub use model::{BlockSpec, Bounds, BoundingBox, FeatureSchema, FeatureVector, ImageRecord, Region, RunMask, VisualCategory};
pub use similarity::Mode;
pub use thesaurus::{Term, Thesaurus};
