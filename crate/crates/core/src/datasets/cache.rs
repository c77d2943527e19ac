//! Binary feature cache.
//!
//! Layout, little-endian:
//!
//! | bytes   | field                                   |
//! |---------|-----------------------------------------|
//! | 4       | magic `b"BSCF"`                         |
//! | 4       | `u32` format version                    |
//! | 8       | `u64` rows `n`                          |
//! | 8       | `u64` dimension `D`                     |
//! | 32      | scattering configuration digest         |
//! | 8·n·D   | row-major `f64` body                    |
//! | 32      | SHA-256 of everything above             |

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"BSCF";
pub const CACHE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 32;
const FOOTER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub digest: [u8; 32],
    /// Rows are samples.
    pub features: DMatrix<f64>,
}

impl FeatureCache {
    pub fn new(digest: [u8; 32], features: DMatrix<f64>) -> Self {
        FeatureCache { digest, features }
    }

    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("cached features".into()));
        }
        let (n, d) = self.features.shape();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * n * d + FOOTER_LEN);
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(d as u64).to_le_bytes());
        out.extend_from_slice(&self.digest);
        for r in 0..n {
            for c in 0..d {
                out.extend_from_slice(&self.features[(r, c)].to_le_bytes());
            }
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        Ok(out)
    }

    /// Parses a cache; with `expected_digest`, rejects caches built from a
    /// different scattering configuration.
    pub fn decode(bytes: &[u8], path: &Path, expected_digest: Option<&[u8; 32]>) -> Result<Self> {
        let bad = |message: String| Error::Format { path: path.to_path_buf(), message };
        if bytes.len() < HEADER_LEN + FOOTER_LEN || &bytes[..4] != CACHE_MAGIC {
            return Err(bad("not a feature cache (missing BSCF magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(bad(format!("unsupported cache version {version}")));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let body = n
            .checked_mul(d)
            .and_then(|v| v.checked_mul(8))
            .and_then(|v| usize::try_from(v).ok())
            .ok_or_else(|| bad("header dimensions overflow".into()))?;
        if bytes.len() != HEADER_LEN + body + FOOTER_LEN {
            return Err(bad(format!(
                "file has {} bytes, header implies {}",
                bytes.len(),
                HEADER_LEN + body + FOOTER_LEN
            )));
        }
        let split = bytes.len() - FOOTER_LEN;
        if Sha256::digest(&bytes[..split]).as_slice() != &bytes[split..] {
            return Err(Error::ChecksumMismatch);
        }
        let digest: [u8; 32] = bytes[24..56].try_into().unwrap();
        if let Some(want) = expected_digest {
            if want != &digest {
                return Err(Error::ConfigDigestMismatch);
            }
        }
        let (n, d) = (n as usize, d as usize);
        let mut values = bytes[HEADER_LEN..split].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let features = DMatrix::from_fn(n, d, |_, _| 0.0);
        let mut features = features;
        for r in 0..n {
            for c in 0..d {
                features[(r, c)] = values.next().unwrap();
            }
        }
        Ok(FeatureCache { digest, features })
    }
}

pub fn write_cache(path: &Path, cache: &FeatureCache) -> Result<()> {
    fs::write(path, cache.encode()?).map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: &Path, expected_digest: Option<&[u8; 32]>) -> Result<FeatureCache> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureCache::decode(&bytes, path, expected_digest)
}
