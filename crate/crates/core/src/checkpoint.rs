//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"DAE1"
//! u16    format version (1)
//! u32    input_h, input_w, input_c, latent_dim
//! u32    number of encoder layers, then one u32 per channel count
//! u64    init seed
//! u64    optimizer step counter
//! u8     1 if optimizer moments follow each tensor, else 0
//! f32[]  per layer in declaration order: weights, bias
//!        (each immediately followed by its m and v when flagged)
//! u32    CRC-32 of everything above
//! ```
//!
//! Values are stored as f32. Models built by `build_dae` draw weights
//! through f32 already, and `train_dae` returns snapshot-restored
//! weights, so save → load → save is byte-identical.

use std::path::Path;

use crate::dae::{layer_specs, DaeConfig, DaeModel};
use crate::error::{Error, Result};
use crate::optim::ParameterBlock;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DAE1";
const VERSION: u16 = 1;

/// Serializes a model to the checkpoint byte format.
pub fn serialize_model(model: &DaeModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        model.config.input_h,
        model.config.input_w,
        model.config.input_c,
        model.config.latent_dim,
        model.config.encoder_channels.len(),
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &c in &model.config.encoder_channels {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.config.seed.to_le_bytes());
    out.extend_from_slice(&model.params.step().to_le_bytes());

    let has_moments = model
        .params
        .iter()
        .any(|(_, l)| l.weights.moment1().is_some() || l.bias.moment1().is_some());
    out.push(has_moments as u8);

    for (_, layer) in model.params.iter() {
        for p in [&layer.weights, &layer.bias] {
            write_f32s(&mut out, &p.value);
            if has_moments {
                match (p.moment1(), p.moment2()) {
                    (Some(m), Some(v)) => {
                        write_f32s(&mut out, m);
                        write_f32s(&mut out, v);
                    }
                    _ => {
                        write_zeros(&mut out, p.value.len());
                        write_zeros(&mut out, p.value.len());
                    }
                }
            }
        }
    }

    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn write_f32s(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn write_zeros(out: &mut Vec<u8>, n: usize) {
    out.resize(out.len() + 4 * n, 0);
}

/// Cursor over the checkpoint bytes with truncated-file errors.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::input("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32s(&mut self, n: usize, shape: &[usize]) -> Result<Tensor> {
        let raw = self.take(4 * n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Tensor::from_vec(data, shape)
    }
}

/// Parses checkpoint bytes back into a model (with empty history).
pub fn deserialize_model(bytes: &[u8]) -> Result<DaeModel> {
    if bytes.len() < 8 {
        return Err(Error::input("truncated checkpoint"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::input("checkpoint CRC mismatch"));
    }

    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::input("bad checkpoint magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::input(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let input_h = r.u32()? as usize;
    let input_w = r.u32()? as usize;
    let input_c = r.u32()? as usize;
    let latent_dim = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let mut encoder_channels = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        encoder_channels.push(r.u32()? as usize);
    }
    let seed = r.u64()?;
    let step = r.u64()?;
    let has_moments = match r.u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::input(format!(
                "corrupt checkpoint: bad moments flag {other}"
            )))
        }
    };

    let config = DaeConfig {
        input_h,
        input_w,
        input_c,
        encoder_channels,
        latent_dim,
        seed,
    };
    let plan = config.plan()?;
    let mut params = ParameterBlock::new();
    for spec in layer_specs(&config, &plan) {
        let wn: usize = spec.weight_shape.iter().product();
        let bn: usize = spec.bias_shape.iter().product();
        let w = r.f32s(wn, &spec.weight_shape)?;
        let (wm, wv) = if has_moments {
            (
                Some(r.f32s(wn, &spec.weight_shape)?),
                Some(r.f32s(wn, &spec.weight_shape)?),
            )
        } else {
            (None, None)
        };
        let b = r.f32s(bn, &spec.bias_shape)?;
        let (bm, bv) = if has_moments {
            (
                Some(r.f32s(bn, &spec.bias_shape)?),
                Some(r.f32s(bn, &spec.bias_shape)?),
            )
        } else {
            (None, None)
        };
        params.insert(&spec.name, w, b)?;
        if has_moments {
            let layer = params
                .iter_mut()
                .find(|(n, _)| *n == spec.name)
                .map(|(_, l)| l)
                .expect("just inserted");
            layer.weights.set_moments(wm.unwrap(), wv.unwrap());
            layer.bias.set_moments(bm.unwrap(), bv.unwrap());
        }
    }
    if r.pos != body.len() {
        return Err(Error::input("checkpoint has trailing bytes"));
    }
    params.set_step(step);

    Ok(DaeModel {
        config,
        plan,
        params,
        history: Vec::new(),
    })
}

/// Writes a checkpoint file.
pub fn save_checkpoint(model: &DaeModel, path: &Path) -> Result<()> {
    std::fs::write(path, serialize_model(model))?;
    Ok(())
}

/// Reads a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<DaeModel> {
    deserialize_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dae::{
        add_gaussian_noise, build_dae, encode, train_dae, NoiseSpec, TrainingConfig,
    };
    use crate::imageio::ImageTensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk_model() -> DaeModel {
        build_dae(&DaeConfig::desk(17)).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let model = desk_model();
        let bytes = serialize_model(&model);
        let back = deserialize_model(&bytes).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.plan, model.plan);
        assert_eq!(back.params.step(), 0);
        for ((n1, l1), (n2, l2)) in model.params.iter().zip(back.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(l1.weights.value.data(), l2.weights.value.data());
            assert_eq!(l1.bias.value.data(), l2.bias.value.data());
        }
    }

    #[test]
    fn serialization_is_idempotent() {
        // Fresh models already hold f32-exact weights, so
        // save → load → save is byte-identical.
        let model = desk_model();
        let bytes = serialize_model(&model);
        let again = serialize_model(&deserialize_model(&bytes).unwrap());
        assert_eq!(bytes, again);
    }

    #[test]
    fn reloaded_model_encodes_identically() {
        let model = desk_model();
        let mut img = ImageTensor::blank(64, 64, 1);
        for y in 20..44 {
            for x in 20..44 {
                *img.at_mut(y, x, 0) = -0.5;
            }
        }
        let imgs = vec![img];
        let a = encode(&model, &imgs).unwrap();
        let back = deserialize_model(&serialize_model(&model)).unwrap();
        let b = encode(&back, &imgs).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dae");
        let model = desk_model();
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, model.config);
    }

    #[test]
    fn rejects_bad_magic() {
        let model = desk_model();
        let mut bytes = serialize_model(&model);
        bytes[0] = b'X';
        // Fix the CRC so the magic check itself is what trips.
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        let err = deserialize_model(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn rejects_corruption_and_truncation() {
        let model = desk_model();
        let bytes = serialize_model(&model);

        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0xff;
        assert!(deserialize_model(&flipped).is_err());

        assert!(deserialize_model(&bytes[..bytes.len() - 9]).is_err());
        assert!(deserialize_model(&[]).is_err());
    }

    #[test]
    fn rejects_unknown_version() {
        let model = desk_model();
        let mut bytes = serialize_model(&model);
        bytes[4] = 9;
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        let err = deserialize_model(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn trained_checkpoint_keeps_optimizer_state() {
        let imgs: Vec<ImageTensor> = (0..6)
            .map(|i| {
                let mut img = ImageTensor::blank(16, 16, 1);
                *img.at_mut(i, 2 * i, 0) = -1.0;
                img
            })
            .collect();
        let cfg = DaeConfig {
            input_h: 16,
            input_w: 16,
            input_c: 1,
            encoder_channels: vec![4],
            latent_dim: 8,
            seed: 3,
        };
        let out = train_dae(
            build_dae(&cfg).unwrap(),
            &imgs,
            &NoiseSpec { sigma: 0.1, seed: 7 },
            &TrainingConfig {
                batch_size: 3,
                lr: 1e-3,
                max_epochs: 4,
                early_stop_patience: 10,
                holdout_fraction: 0.0,
                seed: 5,
            },
        )
        .unwrap();
        assert!(out.model.params.step() > 0);
        let back = deserialize_model(&serialize_model(&out.model)).unwrap();
        assert_eq!(back.params.step(), out.model.params.step());
        for ((_, l1), (_, l2)) in out.model.params.iter().zip(back.params.iter()) {
            let m1 = l1.weights.moment1().expect("trained moments");
            let m2 = l2.weights.moment1().expect("reloaded moments");
            // Moments are stored in f32 like everything else.
            for (a, b) in m1.data().iter().zip(m2.data()) {
                assert_eq!(*a as f32, *b as f32);
            }
        }
    }

    #[test]
    fn noise_is_reproducible() {
        let t = Tensor::zeros(&[2, 3]);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = add_gaussian_noise(&t, 0.5, &mut r1);
        let b = add_gaussian_noise(&t, 0.5, &mut r2);
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().any(|v| *v != 0.0));
    }
}
