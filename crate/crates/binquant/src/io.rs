//! Atomic file output and BQT1 tensor files on disk.

use std::fs;
use std::io::Write;
use std::path::Path;

use binquant_core::numerics::DenseMatrix;
use binquant_core::tensor::{DType, TensorFile};
use tempfile::NamedTempFile;

use crate::error::TensorIoError;

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`. Readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_tensor(path: &Path, t: &TensorFile) -> Result<(), TensorIoError> {
    write_atomic(path, &t.encode()).map_err(|source| TensorIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_tensor(path: &Path) -> Result<TensorFile, TensorIoError> {
    let bytes = fs::read(path).map_err(|source| TensorIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TensorFile::decode(&bytes).map_err(|source| TensorIoError::Format {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a rank-2 real tensor.
pub fn read_matrix(path: &Path) -> Result<DenseMatrix, TensorIoError> {
    let t = read_tensor(path)?;
    let real = t.dtype() != DType::Sign;
    real.then(|| t.to_matrix())
        .flatten()
        .ok_or_else(|| TensorIoError::Kind {
            path: path.to_path_buf(),
            expected: "a rank-2 f32 or f64 tensor",
        })
}

pub fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<(), TensorIoError> {
    write_tensor(path, &TensorFile::from_matrix_f64(m))
}
