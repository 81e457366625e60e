use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::SimplexId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("simplex {id} is degenerate: {detail}")]
    DegenerateSimplex { id: SimplexId, detail: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("facet index {index} out of range for simplex {id} (dimension {dim})")]
    FacetIndex { id: SimplexId, index: usize, dim: usize },

    #[error("unknown vertex label {label} referenced by simplex {id}")]
    UnknownVertex { id: SimplexId, label: u32 },

    #[error("duplicate {what} {value}")]
    Duplicate { what: &'static str, value: u32 },

    #[error("simplex {0} has no restricted facet")]
    NoRestrictedFacet(SimplexId),

    #[error("triangulation is not point-symmetric about the origin: {0}")]
    Asymmetric(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown mode '{0}'")]
    UnknownMode(String),

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("serialization failed: {0}")]
    Serialize(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
