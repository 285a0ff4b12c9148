//! Versioned checkpoint container shared by all model families.
//!
//! Layout: `LDBC` magic, u32 format version, u32 header length, header as
//! JSON, u64 parameter count, then the flat parameter vector as
//! little-endian f64 in declared order.

use super::ModelError;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"LDBC";
const FORMAT_VERSION: u32 = 1;

/// Which stage of the unlearning lifecycle a parameter vector represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Freshly initialized, untrained.
    Random,
    /// Trained on the full dataset.
    Original,
    /// Produced by an unlearning method.
    Unlearned,
    /// Retrained from scratch on the retain set only.
    Oracle,
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Random => "random",
            Role::Original => "original",
            Role::Unlearned => "unlearned",
            Role::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model_kind: String,
    pub role: Role,
    pub seed: u64,
    /// Digest of the frozen encoding the model was built against.
    pub domain_digest: String,
    /// Family-specific hyperparameters.
    pub hyper: serde_json::Value,
}

pub fn write_checkpoint(
    path: &Path,
    header: &CheckpointHeader,
    params: &[f64],
) -> Result<(), ModelError> {
    let io_err = |e: std::io::Error| ModelError::CheckpointIo(format!("{}: {e}", path.display()));
    let header_json = serde_json::to_vec(header)
        .map_err(|e| ModelError::CheckpointIo(format!("header encode: {e}")))?;
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(MAGIC).map_err(io_err)?;
    f.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
    f.write_all(&(header_json.len() as u32).to_le_bytes()).map_err(io_err)?;
    f.write_all(&header_json).map_err(io_err)?;
    f.write_all(&(params.len() as u64).to_le_bytes()).map_err(io_err)?;
    let mut buf = Vec::with_capacity(params.len() * 8);
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    f.write_all(&buf).map_err(io_err)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f64>), ModelError> {
    let io_err = |e: std::io::Error| ModelError::CheckpointIo(format!("{}: {e}", path.display()));
    let mut f = fs::File::open(path).map_err(io_err)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(ModelError::CheckpointIo(format!("{}: bad magic", path.display())));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf).map_err(io_err)?;
    let version = u32::from_le_bytes(u32buf);
    if version != FORMAT_VERSION {
        return Err(ModelError::CheckpointIo(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    f.read_exact(&mut u32buf).map_err(io_err)?;
    let header_len = u32::from_le_bytes(u32buf) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json).map_err(io_err)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)
        .map_err(|e| ModelError::CheckpointIo(format!("header decode: {e}")))?;
    let mut u64buf = [0u8; 8];
    f.read_exact(&mut u64buf).map_err(io_err)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut raw = vec![0u8; count * 8];
    f.read_exact(&mut raw).map_err(io_err)?;
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exact() {
        let dir = std::env::temp_dir().join(format!("lethe_ckpt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let header = CheckpointHeader {
            format_version: 1,
            model_kind: "mdn".into(),
            role: Role::Original,
            seed: 42,
            domain_digest: "deadbeef".into(),
            hyper: serde_json::json!({"hidden": 128, "components": 30}),
        };
        let params = vec![0.1, -2.5, f64::MIN_POSITIVE, 1e300, -0.0];
        write_checkpoint(&path, &header, &params).unwrap();
        let (h, p) = read_checkpoint(&path).unwrap();
        assert_eq!(h, header);
        let bits_in: Vec<u64> = params.iter().map(|v| v.to_bits()).collect();
        let bits_out: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_in, bits_out);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn rejects_garbage() {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("lethe_garbage_{}.ckpt", std::process::id()));
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(read_checkpoint(&path).is_err());
        std::fs::remove_file(path).ok();
    }
}
