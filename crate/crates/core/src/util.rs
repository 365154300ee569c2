//! Small shared helpers: deterministic sub-seed derivation and hashing.

use sha2::{Digest, Sha256};

/// SplitMix64 step. Used to derive independent sub-seeds from a master
/// seed plus a stream index so that per-group / per-operator RNG streams
/// never overlap and never depend on iteration order.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the sub-seed for `stream` from a master seed. Streams are
/// separated by walking the SplitMix64 sequence `stream + 1` steps.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut s = master;
    for _ in 0..=stream {
        s = splitmix64(s);
    }
    s
}

/// SHA-256 of a byte slice.
pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().into()
}

/// Lower-case hex rendering of a byte slice.
pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        use std::fmt::Write;
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// SHA-256 of a byte slice, rendered as lower-case hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&sha256(bytes))
}
