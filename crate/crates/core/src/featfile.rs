//! Binary latent-feature files.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic  b"FEAT"
//! u16    format version (1)
//! u64    N rows, u64 D columns
//! 32B    encoder digest (see `DaeModel::encoder_hash`)
//! f32[]  N·D row-major values
//! u32    CRC-32 of everything above
//! ```
//!
//! Values are stored as f32; `encode` already rounds its output the
//! same way, so write → read is lossless for encoder output.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureSet;

const MAGIC: &[u8; 4] = b"FEAT";
const VERSION: u16 = 1;

/// A parsed feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub features: FeatureSet,
    pub encoder_hash: [u8; 32],
}

/// Serializes features to the file format.
pub fn serialize_features(features: &FeatureSet, encoder_hash: &[u8; 32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 2 + 16 + 32 + 4 * features.data().len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(features.n() as u64).to_le_bytes());
    out.extend_from_slice(&(features.dim() as u64).to_le_bytes());
    out.extend_from_slice(encoder_hash);
    for v in features.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parses feature-file bytes.
pub fn deserialize_features(bytes: &[u8]) -> Result<FeatureFile> {
    const HEADER: usize = 4 + 2 + 8 + 8 + 32;
    if bytes.len() < HEADER + 4 {
        return Err(Error::input("truncated feature file"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::input("feature file CRC mismatch"));
    }
    if &body[..4] != MAGIC {
        return Err(Error::input("bad feature file magic"));
    }
    let version = u16::from_le_bytes(body[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(Error::input(format!(
            "unsupported feature file version {version}"
        )));
    }
    let n = u64::from_le_bytes(body[6..14].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(body[14..22].try_into().unwrap()) as usize;
    let mut encoder_hash = [0u8; 32];
    encoder_hash.copy_from_slice(&body[22..54]);
    let payload = &body[HEADER..];
    let expect = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .ok_or_else(|| Error::input("feature file dimensions overflow"))?;
    if payload.len() != expect {
        return Err(Error::input(format!(
            "feature file declares {n}×{d} values but holds {} bytes",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(FeatureFile {
        features: FeatureSet::new(data, n, d)?,
        encoder_hash,
    })
}

/// Writes a feature file.
pub fn write_features(features: &FeatureSet, encoder_hash: &[u8; 32], path: &Path) -> Result<()> {
    std::fs::write(path, serialize_features(features, encoder_hash))?;
    Ok(())
}

/// Reads a feature file.
pub fn read_features(path: &Path) -> Result<FeatureFile> {
    deserialize_features(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (FeatureSet, [u8; 32]) {
        let mut f = FeatureSet::new(vec![0.5, -1.25, 3.75, 0.0, 2.5, -0.125], 3, 2).unwrap();
        f.quantize_f32();
        let hash = [7u8; 32];
        (f, hash)
    }

    #[test]
    fn round_trip_is_lossless_at_f32() {
        let (f, hash) = sample();
        let bytes = serialize_features(&f, &hash);
        let back = deserialize_features(&bytes).unwrap();
        assert_eq!(back.features.data(), f.data());
        assert_eq!(back.encoder_hash, hash);
        assert_eq!((back.features.n(), back.features.dim()), (3, 2));
        // Serialization is idempotent.
        assert_eq!(serialize_features(&back.features, &back.encoder_hash), bytes);
    }

    #[test]
    fn quantizes_non_representable_values_once() {
        let f = FeatureSet::new(vec![0.1, 0.2], 1, 2).unwrap();
        let bytes = serialize_features(&f, &[0u8; 32]);
        let back = deserialize_features(&bytes).unwrap();
        assert_eq!(back.features.data()[0], 0.1f32 as f64);
        let again = deserialize_features(&serialize_features(
            &back.features,
            &back.encoder_hash,
        ))
        .unwrap();
        assert_eq!(again.features.data(), back.features.data());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latents.feat");
        let (f, hash) = sample();
        write_features(&f, &hash, &path).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(back.features.data(), f.data());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let (f, hash) = sample();
        let bytes = serialize_features(&f, &hash);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        let n = bad.len();
        let crc = crc32fast::hash(&bad[..n - 4]);
        bad[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(deserialize_features(&bad).unwrap_err().to_string().contains("magic"));

        let mut bad = bytes.clone();
        bad[4] = 9;
        let crc = crc32fast::hash(&bad[..n - 4]);
        bad[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(deserialize_features(&bad)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }

    #[test]
    fn rejects_corruption_truncation_and_size_lies() {
        let (f, hash) = sample();
        let bytes = serialize_features(&f, &hash);

        let mut flipped = bytes.clone();
        flipped[30] ^= 0x55;
        assert!(deserialize_features(&flipped).is_err());

        assert!(deserialize_features(&bytes[..10]).is_err());
        assert!(deserialize_features(&[]).is_err());

        // Declare one more row than the body holds.
        let mut lied = bytes.clone();
        lied[6..14].copy_from_slice(&4u64.to_le_bytes());
        let n = lied.len();
        let crc = crc32fast::hash(&lied[..n - 4]);
        lied[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(deserialize_features(&lied)
            .unwrap_err()
            .to_string()
            .contains("declares"));
    }
}
