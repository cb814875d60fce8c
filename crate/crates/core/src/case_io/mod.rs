//! Case-file parsing plus dataset and checkpoint persistence.

mod case;
mod checkpoint;
mod dataset;
mod matpower;

use std::path::Path;

pub use case::{Branch, Bus, BusKind, Generator, GridCase, QuadCost};
pub use checkpoint::{Checkpoint, NamedArray, FORMAT_VERSION};
pub use dataset::{channel_names, read_dataset, write_dataset, DatasetFile, DatasetHeader};
pub use matpower::{parse_matpower_case, parse_matpower_case_with, write_matpower_case, ParseOptions};

#[derive(Debug, thiserror::Error)]
pub enum CaseError {
    #[error("malformed case data: {0}")]
    MalformedBlock(String),
    #[error("unsupported generator cost: {0}")]
    UnsupportedCost(String),
    #[error("live topology splits into {islands} islands")]
    DisconnectedCase { islands: usize },
    #[error("case declares no reference bus")]
    NoRefBus,
    #[error("dataset header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("non-finite value at row {row}, column {column}")]
    NonFiniteValue { row: usize, column: usize },
    #[error("checkpoint format version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Read and parse a MATPOWER case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase, CaseError> {
    parse_matpower_case(&std::fs::read_to_string(path)?)
}

/// Write via a sibling temp file and rename, so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CaseError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
