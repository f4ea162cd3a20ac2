//! Persistence, text formats, ingestion, the HTTP service and the command
//! line for the `voir-core` retrieval engine.

pub mod cli;
pub mod error;
pub mod formats;
pub mod index;
pub mod ingest;
pub mod journal;
pub mod raster;
pub mod service;

pub use error::{Error, Result};
pub use index::{load_index, save_index, IndexManifest};
