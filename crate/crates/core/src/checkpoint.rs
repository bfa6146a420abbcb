//! Binary policy checkpoints.
//!
//! Layout: the magic bytes `BQAC`, a little-endian `u32` format version, a
//! `u32` header length, a JSON header, then every parameter as a
//! little-endian `f64` in flat order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyDims, PolicyMode, PolicyParams};

const MAGIC: &[u8; 4] = b"BQAC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dims: PolicyDims,
    pub mode: PolicyMode,
    /// Round that produced the parameters; 0 for an initial policy.
    pub round: usize,
    /// Fingerprint of the configuration that produced them.
    pub config_fingerprint: String,
}

/// Stable hex fingerprint of any serializable configuration.
pub fn fingerprint<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    Ok(format!("{h:016x}"))
}

/// Hex digest of every parameter value, for telling snapshots apart.
pub fn params_digest(params: &PolicyParams) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for i in 0..params.flat_len() {
        for b in params.flat_get(i).to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    format!("{h:016x}")
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &PolicyParams, round: usize, config_fingerprint: &str) -> Result<()> {
    params.validate()?;
    let header = CheckpointHeader {
        dims: params.dims,
        mode: params.mode,
        round,
        config_fingerprint: config_fingerprint.to_string(),
    };
    let header = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let n = params.flat_len();
    let mut buf = Vec::with_capacity(n * 8);
    for i in 0..n {
        buf.extend_from_slice(&params.flat_get(i).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(PolicyParams, CheckpointHeader)> {
    let bad = |m: &str| Error::Input(format!("not a policy checkpoint: {m}"));
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| bad("too short"))?;
    if &word != MAGIC {
        return Err(bad("bad magic"));
    }
    r.read_exact(&mut word).map_err(|_| bad("too short"))?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    r.read_exact(&mut word).map_err(|_| bad("too short"))?;
    let len = u32::from_le_bytes(word) as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&header).map_err(|e| bad(&e.to_string()))?;
    header.dims.validate()?;
    let mut params = PolicyParams::zeros(header.dims, header.mode);
    let n = params.flat_len();
    let mut body = Vec::with_capacity(n * 8);
    r.read_to_end(&mut body)?;
    if body.len() != n * 8 {
        return Err(bad(&format!("expected {} parameter bytes, found {}", n * 8, body.len())));
    }
    for (i, chunk) in body.chunks_exact(8).enumerate() {
        params.flat_set(i, f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
    }
    params.validate()?;
    Ok((params, header))
}

/// Write atomically: a temporary sibling file is renamed into place.
pub fn save_checkpoint(path: impl AsRef<Path>, params: &PolicyParams, round: usize, config_fingerprint: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let file = std::fs::File::create(&tmp)?;
        let mut w = std::io::BufWriter::new(file);
        write_checkpoint(&mut w, params, round, config_fingerprint)?;
        w.into_inner().map_err(|e| Error::Io(e.into_error()))?.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(PolicyParams, CheckpointHeader)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Input(format!("cannot open checkpoint {}: {e}", path.display())))?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PolicyDims {
        PolicyDims { vocab_size: 64, embed_dim: 4, hidden_dim: 3, max_context_len: 490 }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for mode in [PolicyMode::TwoHead, PolicyMode::SpanOnly] {
            let p = PolicyParams::random(small(), mode, 9, 0.3);
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &p, 4, "abc").unwrap();
            let (q, h) = read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(h.round, 4);
            assert_eq!(h.config_fingerprint, "abc");
            assert_eq!(q.mode, mode);
            for i in 0..p.flat_len() {
                assert_eq!(p.flat_get(i).to_bits(), q.flat_get(i).to_bits());
            }
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let p = PolicyParams::random(small(), PolicyMode::TwoHead, 1, 0.3);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, 0, "").unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(read_checkpoint(wrong.as_slice()).is_err());
        assert!(read_checkpoint(&b"BQ"[..]).is_err());
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck/round-1.bqac");
        let p = PolicyParams::random(small(), PolicyMode::TwoHead, 2, 0.3);
        save_checkpoint(&path, &p, 1, &fingerprint(&small()).unwrap()).unwrap();
        let (q, _) = load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn digest_changes_with_any_parameter() {
        let mut p = PolicyParams::random(small(), PolicyMode::TwoHead, 2, 0.3);
        let a = params_digest(&p);
        p.flat_set(p.flat_len() - 1, p.flat_get(p.flat_len() - 1) + 1e-9);
        assert_ne!(a, params_digest(&p));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = fingerprint(&small()).unwrap();
        assert_eq!(a, fingerprint(&small()).unwrap());
        let other = PolicyDims { embed_dim: 5, ..small() };
        assert_ne!(a, fingerprint(&other).unwrap());
    }
}
