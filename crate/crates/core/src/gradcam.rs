//! Attention maps over encoder activations.
//!
//! The batch of images is encoded, the scalar ‖μ‖² + Tr(Σ) of the
//! latent batch is back-propagated to a chosen encoder convolution,
//! and each image's map is the channel sum of that layer's activations
//! weighted by the spatial mean of its gradient. Maps stay signed (no
//! ReLU clipping): both strongly positive and strongly negative
//! regions carry meaning. The raw grid is bilinearly upsampled to the
//! input size with no offset correction.

use crate::autodiff::Tape;
use crate::dae::DaeModel;
use crate::error::{Error, Result};
use crate::imageio::{bilinear_resize, ImageTensor};
use crate::tensor::Tensor;

/// One image's attention map at one layer.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub layer: String,
    /// Signed map at the layer's spatial resolution, shape `[h, w]`.
    pub raw: Tensor,
    /// Bilinear upsample of `raw` to the model input size, `[H, W]`.
    pub upsampled: Tensor,
}

/// Computes per-image attention maps at the named encoder layer
/// (`enc_conv1` … `enc_convN`).
pub fn gradcam(model: &DaeModel, images: &[ImageTensor], layer: &str) -> Result<Vec<AttentionMap>> {
    if images.len() < 2 {
        return Err(Error::input(format!(
            "attention maps need a batch of ≥ 2 images (Σ is undefined for {}), got {}",
            images.len(),
            images.len()
        )));
    }
    let layer_index = model
        .conv_layer_ids()
        .iter()
        .position(|id| id == layer)
        .ok_or_else(|| {
            Error::input(format!(
                "unknown encoder layer `{layer}`; expected one of {:?}",
                model.conv_layer_ids()
            ))
        })?;

    let batch = crate::dae::batch_from_images(images)?;
    let mut tape = Tape::new();
    let x = tape.leaf(batch, false);
    let params = model.push_params(&mut tape, true);
    let (latent, acts) = model.encoder_forward(&mut tape, x, &params)?;
    let scalar = tape.latent_stat(latent)?;
    let grads = tape.backward(scalar)?;

    let act_var = acts[layer_index];
    let activation = tape.value(act_var);
    let gradient = grads[act_var.0]
        .as_ref()
        .ok_or_else(|| Error::numerical("no gradient reached the requested layer"))?;

    let (n, c) = (activation.shape()[0], activation.shape()[1]);
    let (h, w) = (activation.shape()[2], activation.shape()[3]);
    let plane = h * w;
    let (in_h, in_w) = (model.config.input_h, model.config.input_w);

    let mut maps = Vec::with_capacity(n);
    for i in 0..n {
        let mut raw = vec![0.0f64; plane];
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            let gslice = &gradient.data()[base..base + plane];
            let weight = gslice.iter().sum::<f64>() / plane as f64;
            if weight == 0.0 {
                continue;
            }
            let aslice = &activation.data()[base..base + plane];
            for (m, a) in raw.iter_mut().zip(aslice) {
                *m += weight * a;
            }
        }
        let upsampled = bilinear_resize(&raw, h, w, in_h, in_w);
        maps.push(AttentionMap {
            layer: layer.to_string(),
            raw: Tensor::from_vec(raw, &[h, w])?,
            upsampled: Tensor::from_vec(upsampled, &[in_h, in_w])?,
        });
    }
    Ok(maps)
}

/// Renders the raw grid as CSV (one row per grid row).
pub fn attention_csv(map: &AttentionMap) -> String {
    let (h, w) = (map.raw.shape()[0], map.raw.shape()[1]);
    let mut out = String::new();
    for y in 0..h {
        let row: Vec<String> = (0..w)
            .map(|x| map.raw.data()[y * w + x].to_string())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Diverging palette at t ∈ [-1, 1]: blue ← white → red.
fn palette(t: f64) -> (f64, f64, f64) {
    let t = t.clamp(-1.0, 1.0);
    if t >= 0.0 {
        // white (1,1,1) → red (1,-1,-1)
        (1.0, 1.0 - 2.0 * t, 1.0 - 2.0 * t)
    } else {
        // white → blue (-1,-1,1)
        (1.0 + 2.0 * t, 1.0 + 2.0 * t, 1.0)
    }
}

/// Blends the upsampled map (diverging palette, symmetric around 0)
/// over the grayscale image; returns a 3-channel image.
pub fn overlay(img: &ImageTensor, map: &AttentionMap) -> Result<ImageTensor> {
    let (h, w) = (img.h(), img.w());
    if map.upsampled.shape() != [h, w] {
        return Err(Error::input(format!(
            "attention map {:?} does not match image {h}×{w}",
            map.upsampled.shape()
        )));
    }
    let peak = map
        .upsampled
        .data()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            // Luminance of the underlying pixel (averages channels).
            let mut g = 0.0;
            for c in 0..img.c() {
                g += img.at(y, x, c);
            }
            g /= img.c() as f64;
            let t = if peak == 0.0 {
                0.0
            } else {
                map.upsampled.data()[y * w + x] / peak
            };
            let (r, gg, b) = palette(t);
            data.push(((g + r) * 0.5).clamp(-1.0, 1.0));
            data.push(((g + gg) * 0.5).clamp(-1.0, 1.0));
            data.push(((g + b) * 0.5).clamp(-1.0, 1.0));
        }
    }
    ImageTensor::new(data, h, w, 3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{dense_raw, finite_difference_grad, max_relative_error};
    use crate::dae::{build_dae, DaeConfig};

    fn tiny_model(seed: u64) -> DaeModel {
        build_dae(&DaeConfig {
            input_h: 16,
            input_w: 16,
            input_c: 1,
            encoder_channels: vec![4, 8],
            latent_dim: 6,
            seed,
        })
        .unwrap()
    }

    fn patterned_images(n: usize) -> Vec<ImageTensor> {
        (0..n)
            .map(|i| {
                let mut img = ImageTensor::blank(16, 16, 1);
                for y in 0..16 {
                    for x in 0..16 {
                        if (y + x + i) % 3 == 0 {
                            *img.at_mut(y, x, 0) = -0.7;
                        }
                    }
                }
                img
            })
            .collect()
    }

    #[test]
    fn raw_grid_matches_layer_spatial_shape() {
        let model = tiny_model(1);
        let imgs = patterned_images(3);
        // 16 → 8 → 4 through two stride-2 layers.
        let maps = gradcam(&model, &imgs, "enc_conv2").unwrap();
        assert_eq!(maps.len(), 3);
        for m in &maps {
            assert_eq!(m.raw.shape(), &[4, 4]);
            assert_eq!(m.upsampled.shape(), &[16, 16]);
        }
        let maps1 = gradcam(&model, &imgs, "enc_conv1").unwrap();
        assert_eq!(maps1[0].raw.shape(), &[8, 8]);
    }

    #[test]
    fn desk_model_last_layer_grid_is_8x8() {
        let model = build_dae(&DaeConfig::desk(2)).unwrap();
        let imgs: Vec<ImageTensor> = (0..2)
            .map(|i| {
                let mut img = ImageTensor::blank(64, 64, 1);
                *img.at_mut(10 + i, 20, 0) = -1.0;
                img
            })
            .collect();
        let maps = gradcam(&model, &imgs, "enc_conv3").unwrap();
        assert_eq!(maps[0].raw.shape(), &[8, 8]);
        assert_eq!(maps[0].upsampled.shape(), &[64, 64]);
    }

    #[test]
    fn maps_are_finite_on_constant_zero_batch() {
        // Fresh models carry zero biases, so this exercises the
        // bias-free case from the contract.
        let model = tiny_model(3);
        let imgs: Vec<ImageTensor> = (0..2)
            .map(|_| {
                let mut img = ImageTensor::blank(16, 16, 1);
                img.data_mut().fill(0.0);
                img
            })
            .collect();
        let maps = gradcam(&model, &imgs, "enc_conv2").unwrap();
        for m in &maps {
            assert!(m.raw.data().iter().all(|v| v.is_finite()));
            assert!(m.upsampled.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn maps_are_signed_and_deterministic() {
        let model = tiny_model(5);
        let imgs = patterned_images(4);
        let maps = gradcam(&model, &imgs, "enc_conv2").unwrap();
        let any_negative = maps
            .iter()
            .any(|m| m.raw.data().iter().any(|v| *v < 0.0));
        let any_positive = maps
            .iter()
            .any(|m| m.raw.data().iter().any(|v| *v > 0.0));
        assert!(
            any_negative && any_positive,
            "signed maps expected (no ReLU clipping)"
        );
        let again = gradcam(&model, &imgs, "enc_conv2").unwrap();
        for (a, b) in maps.iter().zip(&again) {
            assert_eq!(a.raw.data(), b.raw.data());
        }
    }

    #[test]
    fn rejects_bad_batch_and_layer() {
        let model = tiny_model(1);
        let imgs = patterned_images(2);
        assert!(gradcam(&model, &imgs[..1], "enc_conv1").is_err());
        let err = gradcam(&model, &imgs, "enc_conv9").unwrap_err();
        assert!(err.to_string().contains("enc_conv9"), "{err}");
        assert!(gradcam(&model, &imgs, "dec_conv1").is_err());
    }

    #[test]
    fn scalar_gradient_at_layer_matches_finite_differences() {
        // Perturb the *last* conv activation directly and recompute
        // the suffix (flatten → dense → ‖μ‖² + Tr(Σ)) to get an oracle
        // for the gradient the attention weights are built from.
        let model = tiny_model(7);
        let imgs = patterned_images(2);
        let batch = crate::dae::batch_from_images(&imgs).unwrap();

        let mut tape = Tape::new();
        let x = tape.leaf(batch, false);
        let params = model.push_params(&mut tape, true);
        let (latent, acts) = model.encoder_forward(&mut tape, x, &params).unwrap();
        let scalar = tape.latent_stat(latent).unwrap();
        let grads = tape.backward(scalar).unwrap();
        let act = acts[1];
        let analytic = grads[act.0].as_ref().unwrap().clone();
        let a0 = tape.value(act).clone();

        let fc = model.params.get("enc_fc").unwrap();
        let (w, b) = (fc.weights.value.clone(), fc.bias.value.clone());
        let n = a0.shape()[0];
        let flat_dim: usize = a0.shape()[1..].iter().product();
        let suffix = |a: &Tensor| -> f64 {
            let flat = a.clone().reshape(&[n, flat_dim]).unwrap();
            let z = dense_raw(&flat, &w, &b).unwrap();
            // ‖μ‖² + Tr(Σ) with the unbiased (N−1) covariance.
            let d = z.shape()[1];
            let mut total = 0.0;
            for j in 0..d {
                let col: Vec<f64> = (0..n).map(|i| z.data()[i * d + j]).collect();
                let mu = col.iter().sum::<f64>() / n as f64;
                let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>()
                    / (n as f64 - 1.0);
                total += mu * mu + var;
            }
            total
        };
        let numeric = finite_difference_grad(suffix, &a0, 1e-4);
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn upsampling_preserves_constant_grids() {
        let raw = vec![0.37; 4 * 4];
        let up = bilinear_resize(&raw, 4, 4, 16, 16);
        assert!(up.iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn overlay_blends_palette_over_image() {
        let model = tiny_model(9);
        let imgs = patterned_images(2);
        let maps = gradcam(&model, &imgs, "enc_conv2").unwrap();
        let over = overlay(&imgs[0], &maps[0]).unwrap();
        assert_eq!((over.h(), over.w(), over.c()), (16, 16, 3));
        assert!(over.data().iter().all(|v| (-1.0..=1.0).contains(v)));

        // Peak positive pixel leans red; peak negative leans blue.
        let up = maps[0].upsampled.data();
        let (mut imax, mut imin) = (0, 0);
        for (i, v) in up.iter().enumerate() {
            if *v > up[imax] {
                imax = i;
            }
            if *v < up[imin] {
                imin = i;
            }
        }
        if up[imax] > 0.0 {
            let (y, x) = (imax / 16, imax % 16);
            assert!(over.at(y, x, 0) > over.at(y, x, 2), "positive peak not red");
        }
        if up[imin] < 0.0 {
            let (y, x) = (imin / 16, imin % 16);
            assert!(over.at(y, x, 2) > over.at(y, x, 0), "negative peak not blue");
        }

        // Mismatched map size is rejected.
        let big = ImageTensor::blank(32, 32, 1);
        assert!(overlay(&big, &maps[0]).is_err());
    }

    #[test]
    fn attention_csv_renders_grid() {
        let map = AttentionMap {
            layer: "enc_conv1".into(),
            raw: Tensor::from_vec(vec![1.0, -2.0, 0.5, 3.0], &[2, 2]).unwrap(),
            upsampled: Tensor::zeros(&[4, 4]),
        };
        assert_eq!(attention_csv(&map), "1,-2\n0.5,3\n");
    }
}
