//! Named random substreams derived from one experiment seed.

use sha2::{Digest, Sha256};

/// Deterministic child seed for `(seed, name)`; distinct names give
/// independent-looking streams.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
