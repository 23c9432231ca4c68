//! Content hashes for label volumes.

use sha2::{Digest, Sha256};

use crate::volume::LabelVolume;

/// SHA-256 over the three dims (u64 little-endian) followed by the label
/// bytes, as lowercase hex.
pub fn content_hash(v: &LabelVolume) -> String {
    let mut h = Sha256::new();
    for d in v.dims() {
        h.update((d as u64).to_le_bytes());
    }
    h.update(v.labels());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
