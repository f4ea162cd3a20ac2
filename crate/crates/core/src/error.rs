use alloc::string::String;

use crate::ids::{CategoryId, ImageId, RegionId, TermId};

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown term {0}")]
    UnknownTerm(TermId),
    #[error("unknown region {0}")]
    UnknownRegion(RegionId),
    #[error("unknown image {0}")]
    UnknownImage(ImageId),
    #[error("unknown visual category {0}")]
    UnknownCategory(CategoryId),
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("invalid thesaurus: {0}")]
    InvalidThesaurus(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("unsupported in {mode} mode: {what}")]
    ModeViolation { mode: crate::similarity::Mode, what: &'static str },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("degenerate sample: {0}")]
    DegenerateSample(&'static str),
    #[error("cannot compose query: {0}")]
    CannotComposeQuery(String),
}
