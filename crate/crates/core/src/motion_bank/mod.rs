//! Contiguous multi-clip motion storage.
//!
//! Clips are read from single-file `.mbank` containers, concatenated field by
//! field into one [`MotionBank`], and served to many environments at once as
//! fixed-horizon [`ReferenceWindow`]s addressed through `g(m, t) = O_m + min(t, L_m - 1)`.

mod bank;
mod clip;
mod shard;

pub use bank::{FeatureSet, MotionBank, ReferenceWindow};
pub use clip::{
    ingest_clip, read_clip, write_clip, FieldSpec, MotionClip, MotionHeader, SourceId,
    CONTAINER_MAGIC, FIELD_NAMES,
};
pub use shard::shard_bank;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum BankError {
    #[error("malformed motion file: {0}")]
    MalformedFile(String),
    #[error("non-unit quaternion at frame {frame}, body {body} (norm {norm})")]
    NonUnitQuaternion { frame: usize, body: usize, norm: f64 },
    #[error("bad frame rate {0}")]
    BadRate(f64),
    #[error("clips disagree on {what}: {expected} vs {found}")]
    HeterogeneousSchema { what: &'static str, expected: String, found: String },
    #[error("motion bank needs at least one clip")]
    EmptyBank,
    #[error("motion {motion} out of range (bank holds {count})")]
    MotionOutOfRange { motion: usize, count: usize },
    #[error("shard rank {rank} invalid for world size {world}")]
    BadRank { rank: usize, world: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Lists the `.mbank` files directly inside `dir`, sorted by file name.
pub fn list_clip_files(dir: &std::path::Path) -> Result<Vec<PathBuf>, BankError> {
    let io = |source| BankError::Io { path: dir.to_path_buf(), source };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "mbank") {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Reads every clip in `dir` (sorted by name) and builds one bank.
pub fn load_bank_dir(dir: &std::path::Path) -> Result<MotionBank, BankError> {
    let clips = list_clip_files(dir)?
        .iter()
        .map(|p| ingest_clip(p))
        .collect::<Result<Vec<_>, _>>()?;
    MotionBank::build(&clips)
}
