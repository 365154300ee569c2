//! The denoising autoencoder: architecture, training, and encoding.
//!
//! The encoder stacks stride-2 3×3 convolutions (ReLU) and projects the
//! flattened final map to the latent vector through one dense layer.
//! The decoder mirrors it exactly — dense back to the map, transposed
//! convolutions with per-layer output padding solved at build time, and
//! a final Tanh pinning outputs to the data range.
//!
//! Training minimizes MSE between the reconstruction of a
//! Gaussian-corrupted input and the *clean* image. The best-scoring
//! epoch is snapshotted (through the 32-bit checkpoint encoding, so the
//! returned weights are exactly what a saved checkpoint would reload).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{conv_out_extent, conv_transpose_out_extent, Tape, Var};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::imageio::ImageTensor;
use crate::optim::{adam_step, AdamConfig, LayerGrads, ParameterBlock};
use crate::tensor::Tensor;
use crate::util::derive_seed;

/// Convolution geometry shared by every layer.
pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;

/// Architecture descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct DaeConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub input_c: usize,
    /// Output channels of each encoder convolution, shallow to deep.
    pub encoder_channels: Vec<usize>,
    pub latent_dim: usize,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl DaeConfig {
    /// Desk-scale default: trainable in minutes on one core.
    pub fn desk(seed: u64) -> Self {
        DaeConfig {
            input_h: 64,
            input_w: 64,
            input_c: 1,
            encoder_channels: vec![16, 32, 64],
            latent_dim: 128,
            seed,
        }
    }

    /// Validates the config and solves the layer geometry.
    pub fn plan(&self) -> Result<ArchPlan> {
        if self.input_h == 0 || self.input_w == 0 {
            return Err(Error::config("input extents must be positive"));
        }
        if !matches!(self.input_c, 1 | 3) {
            return Err(Error::config(format!(
                "input channels must be 1 or 3, got {}",
                self.input_c
            )));
        }
        if self.encoder_channels.is_empty() {
            return Err(Error::config("encoder needs at least one convolution"));
        }
        if self.encoder_channels.contains(&0) {
            return Err(Error::config("encoder channel counts must be positive"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent dimension must be positive"));
        }

        let mut spatial = Vec::with_capacity(self.encoder_channels.len());
        let (mut h, mut w) = (self.input_h, self.input_w);
        for _ in &self.encoder_channels {
            h = conv_out_extent(h, KERNEL, STRIDE, PADDING)?;
            w = conv_out_extent(w, KERNEL, STRIDE, PADDING)?;
            spatial.push((h, w));
        }

        // Decoder output padding per layer, deepest first: pick the
        // padding that recovers the matching encoder input extent.
        let mut output_paddings = Vec::with_capacity(self.encoder_channels.len());
        for i in (0..self.encoder_channels.len()).rev() {
            let (cur_h, cur_w) = spatial[i];
            let (tgt_h, tgt_w) = if i == 0 {
                (self.input_h, self.input_w)
            } else {
                spatial[i - 1]
            };
            let pad_h = solve_output_padding(cur_h, tgt_h)?;
            let pad_w = solve_output_padding(cur_w, tgt_w)?;
            if pad_h != pad_w {
                return Err(Error::config(format!(
                    "decoder layer {} needs different output padding per axis ({pad_h} vs {pad_w}); \
                     use input extents of matching parity",
                    i + 1
                )));
            }
            output_paddings.push(pad_h);
        }

        let (fh, fw) = *spatial.last().expect("≥1 layer");
        let flatten_dim = self.encoder_channels.last().unwrap() * fh * fw;
        Ok(ArchPlan {
            spatial,
            output_paddings,
            flatten_dim,
        })
    }
}

fn solve_output_padding(cur: usize, target: usize) -> Result<usize> {
    for pad in 0..STRIDE {
        if conv_transpose_out_extent(cur, KERNEL, STRIDE, PADDING, pad)? == target {
            return Ok(pad);
        }
    }
    Err(Error::config(format!(
        "no output padding recovers extent {target} from {cur} with stride {STRIDE}"
    )))
}

/// Solved geometry: per-layer encoder spatial extents, decoder output
/// paddings (deepest first), and the flattened map size feeding the
/// latent projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchPlan {
    pub spatial: Vec<(usize, usize)>,
    pub output_paddings: Vec<usize>,
    pub flatten_dim: usize,
}

/// Gaussian corruption applied to training inputs: η ~ N(0, σ²·I).
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(Error::config(format!(
                "noise sigma must be finite and ≥ 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Optimization schedule.
#[derive(Debug, Clone)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    /// Fraction of the dataset held out for loss monitoring; 0 monitors
    /// the training loss itself.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 128,
            lr: 1e-3,
            max_epochs: 1000,
            early_stop_patience: 20,
            holdout_fraction: 0.0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be ≥ 1"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::config("early-stop patience must be ≥ 1"));
        }
        if self.lr <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("holdout fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Loss the early-stop logic watches (holdout loss when a holdout
    /// split is configured, otherwise the training loss).
    pub monitored: f64,
}

/// Why training ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    /// Loss or gradients went non-finite; the best snapshot so far is
    /// returned.
    NanAbort,
}

/// Patience tracker: stops once the monitored loss has not improved
/// for `patience` consecutive epochs.
#[derive(Debug)]
pub struct EarlyStop {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

/// Verdict for one observed epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    /// Feeds one epoch's monitored loss (epochs count from 1).
    pub fn observe(&mut self, loss: f64) -> StopDecision {
        self.epoch += 1;
        if loss < self.best {
            self.best = loss;
            self.best_epoch = self.epoch;
            return StopDecision::Improved;
        }
        if self.epoch - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

/// Encoder/decoder parameters plus the solved architecture.
#[derive(Debug, Clone)]
pub struct DaeModel {
    pub config: DaeConfig,
    pub plan: ArchPlan,
    pub params: ParameterBlock,
    pub history: Vec<EpochRecord>,
}

/// One layer's name and tensor shapes, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub weight_shape: Vec<usize>,
    pub bias_shape: Vec<usize>,
}

/// Declaration-order layer layout implied by a config: encoder
/// convolutions, latent projection, decoder projection, decoder
/// transposed convolutions (deepest first).
pub fn layer_specs(config: &DaeConfig, plan: &ArchPlan) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(config.encoder_channels.len() * 2 + 2);
    let mut in_c = config.input_c;
    for (i, &out_c) in config.encoder_channels.iter().enumerate() {
        specs.push(LayerSpec {
            name: format!("enc_conv{}", i + 1),
            weight_shape: vec![out_c, in_c, KERNEL, KERNEL],
            bias_shape: vec![out_c],
        });
        in_c = out_c;
    }
    specs.push(LayerSpec {
        name: "enc_fc".into(),
        weight_shape: vec![config.latent_dim, plan.flatten_dim],
        bias_shape: vec![config.latent_dim],
    });
    specs.push(LayerSpec {
        name: "dec_fc".into(),
        weight_shape: vec![plan.flatten_dim, config.latent_dim],
        bias_shape: vec![plan.flatten_dim],
    });
    for i in (0..config.encoder_channels.len()).rev() {
        let cin = config.encoder_channels[i];
        let cout = if i == 0 {
            config.input_c
        } else {
            config.encoder_channels[i - 1]
        };
        specs.push(LayerSpec {
            name: format!("dec_conv{}", i + 1),
            weight_shape: vec![cin, cout, KERNEL, KERNEL],
            bias_shape: vec![cout],
        });
    }
    specs
}

/// Builds a model with seeded uniform ±sqrt(6/(fan_in+fan_out)) weight
/// initialization and zero biases. Every drawn weight is rounded
/// through 32-bit precision so freshly built and checkpoint-reloaded
/// models are bit-identical.
pub fn build_dae(config: &DaeConfig) -> Result<DaeModel> {
    let plan = config.plan()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParameterBlock::new();

    for spec in layer_specs(config, &plan) {
        // Convolution fans count the 3×3 receptive field; dense fans
        // are the layer widths.
        let (fan_in, fan_out) = match spec.weight_shape.len() {
            4 => (
                spec.weight_shape[1] * KERNEL * KERNEL,
                spec.weight_shape[0] * KERNEL * KERNEL,
            ),
            _ => (spec.weight_shape[1], spec.weight_shape[0]),
        };
        let w = init_uniform(&mut rng, &spec.weight_shape, fan_in, fan_out);
        params.insert(&spec.name, w, Tensor::zeros(&spec.bias_shape))?;
    }

    Ok(DaeModel {
        config: config.clone(),
        plan,
        params,
        history: Vec::new(),
    })
}

fn init_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.gen_range(-bound..bound) as f32 as f64)
        .collect();
    Tensor::from_vec(data, shape).expect("counted")
}

impl DaeModel {
    /// Number of encoder convolution layers.
    pub fn n_conv(&self) -> usize {
        self.config.encoder_channels.len()
    }

    /// Identifiers of the encoder convolution layers, shallow to deep.
    pub fn conv_layer_ids(&self) -> Vec<String> {
        (1..=self.n_conv()).map(|i| format!("enc_conv{i}")).collect()
    }

    /// Pushes every parameter onto a tape in declaration order,
    /// returning (weights, bias) vars per layer.
    pub(crate) fn push_params(&self, tape: &mut Tape, requires_grad: bool) -> Vec<(Var, Var)> {
        self.params
            .iter()
            .map(|(_, layer)| {
                (
                    tape.leaf(layer.weights.value.clone(), requires_grad),
                    tape.leaf(layer.bias.value.clone(), requires_grad),
                )
            })
            .collect()
    }

    /// Encoder forward pass. Returns the latent node and the post-ReLU
    /// activation node of every convolution (shallow to deep).
    pub(crate) fn encoder_forward(
        &self,
        tape: &mut Tape,
        input: Var,
        params: &[(Var, Var)],
    ) -> Result<(Var, Vec<Var>)> {
        let n_conv = self.n_conv();
        let mut cur = input;
        let mut acts = Vec::with_capacity(n_conv);
        for (i, &(w, b)) in params.iter().take(n_conv).enumerate() {
            let conv = tape.conv2d(cur, w, b, STRIDE, PADDING)?;
            let act = tape.relu(conv);
            acts.push(act);
            cur = act;
            let _ = i;
        }
        let n = tape.value(cur).shape()[0];
        let flat = tape.reshape(cur, &[n, self.plan.flatten_dim])?;
        let (w_fc, b_fc) = params[n_conv];
        let latent = tape.dense(flat, w_fc, b_fc)?;
        Ok((latent, acts))
    }

    /// Decoder forward pass from a latent node to the reconstruction.
    pub(crate) fn decoder_forward(
        &self,
        tape: &mut Tape,
        latent: Var,
        params: &[(Var, Var)],
    ) -> Result<Var> {
        let n_conv = self.n_conv();
        let (w_fc, b_fc) = params[n_conv + 1];
        let proj = tape.dense(latent, w_fc, b_fc)?;
        let act = tape.relu(proj);
        let n = tape.value(act).shape()[0];
        let (fh, fw) = *self.plan.spatial.last().expect("≥1 layer");
        let c_deep = *self.config.encoder_channels.last().expect("≥1 layer");
        let mut cur = tape.reshape(act, &[n, c_deep, fh, fw])?;

        for (j, i) in (0..n_conv).rev().enumerate() {
            let (w, b) = params[n_conv + 2 + j];
            let out_pad = self.plan.output_paddings[j];
            let convt = tape.conv2d_transpose(cur, w, b, STRIDE, PADDING, out_pad)?;
            cur = if i == 0 {
                // Final layer: Tanh pins the output to the data range.
                tape.tanh(convt)
            } else {
                tape.relu(convt)
            };
        }
        Ok(cur)
    }

    /// Full forward pass on a `[N,C,H,W]` batch, without recording
    /// gradients. Returns the reconstruction.
    pub fn forward_reconstruct(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let x = tape.leaf(batch.clone(), false);
        let params = self.push_params(&mut tape, false);
        let (latent, _) = self.encoder_forward(&mut tape, x, &params)?;
        let recon = self.decoder_forward(&mut tape, latent, &params)?;
        Ok(tape.value(recon).clone())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let s = batch.shape();
        if s.len() != 4
            || s[1] != self.config.input_c
            || s[2] != self.config.input_h
            || s[3] != self.config.input_w
        {
            return Err(Error::input(format!(
                "batch shape {s:?} does not match model input {}×{}×{}",
                self.config.input_h, self.config.input_w, self.config.input_c
            )));
        }
        Ok(())
    }

    /// Digest identifying the encoder: architecture plus the exact
    /// 32-bit encoder weights. Feature caches key on this.
    pub fn encoder_hash(&self) -> [u8; 32] {
        let mut bytes = Vec::new();
        for v in [
            self.config.input_h,
            self.config.input_w,
            self.config.input_c,
            self.config.latent_dim,
        ] {
            bytes.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for &c in &self.config.encoder_channels {
            bytes.extend_from_slice(&(c as u64).to_le_bytes());
        }
        for (name, layer) in self.params.iter() {
            if !name.starts_with("enc_") {
                continue;
            }
            bytes.extend_from_slice(name.as_bytes());
            for v in layer.weights.value.data() {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            for v in layer.bias.value.data() {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        crate::util::sha256(&bytes)
    }
}

/// Packs images into a `[N,C,H,W]` batch tensor.
pub fn batch_from_images(images: &[ImageTensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::input("empty image batch"))?;
    let (h, w, c) = (first.h(), first.w(), first.c());
    let per = c * h * w;
    let mut data = Vec::with_capacity(images.len() * per);
    for img in images {
        if (img.h(), img.w(), img.c()) != (h, w, c) {
            return Err(Error::input("images in a batch must share one shape"));
        }
        data.extend_from_slice(img.to_chw().data());
    }
    Tensor::from_vec(data, &[images.len(), c, h, w])
}

/// Adds elementwise Gaussian noise of standard deviation `sigma`; the
/// training corruption is *not* clamped.
pub fn add_gaussian_noise(t: &Tensor, sigma: f64, rng: &mut ChaCha8Rng) -> Tensor {
    if sigma == 0.0 {
        return t.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let data = t.data().iter().map(|v| v + normal.sample(rng)).collect();
    Tensor::from_vec(data, t.shape()).expect("same shape")
}

/// Encodes preprocessed images into latent rows. Deterministic: no
/// noise at encoding time, and every latent is rounded through 32-bit
/// precision (matching what a feature file would reload).
pub fn encode(model: &DaeModel, images: &[ImageTensor]) -> Result<FeatureSet> {
    if images.is_empty() {
        return Err(Error::input("cannot encode an empty image set"));
    }
    let d = model.config.latent_dim;
    let mut data = Vec::with_capacity(images.len() * d);
    for chunk in images.chunks(32) {
        let batch = batch_from_images(chunk)?;
        model.check_batch(&batch)?;
        let mut tape = Tape::new();
        let x = tape.leaf(batch, false);
        let params = model.push_params(&mut tape, false);
        let (latent, _) = model.encoder_forward(&mut tape, x, &params)?;
        data.extend_from_slice(tape.value(latent).data());
    }
    let mut features = FeatureSet::new(data, images.len(), d)?;
    features.quantize_f32();
    Ok(features)
}

/// Everything `train_dae` hands back.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: DaeModel,
    pub stop: StopReason,
    pub best_epoch: usize,
    pub best_loss: f64,
}

/// Trains the model, returning the best checkpoint by monitored loss.
/// The returned model's weights went through the 32-bit checkpoint
/// encoding, so saving it reproduces encode outputs bit-exactly.
pub fn train_dae(
    mut model: DaeModel,
    dataset: &[ImageTensor],
    noise: &NoiseSpec,
    tc: &TrainingConfig,
) -> Result<TrainOutcome> {
    noise.validate()?;
    tc.validate()?;
    if dataset.is_empty() {
        return Err(Error::input("training dataset is empty"));
    }
    let batches_chw: Vec<Tensor> = dataset.iter().map(ImageTensor::to_chw).collect();
    for t in &batches_chw {
        if t.shape()
            != [
                model.config.input_c,
                model.config.input_h,
                model.config.input_w,
            ]
        {
            return Err(Error::input(format!(
                "dataset image shape {:?} does not match model input",
                t.shape()
            )));
        }
    }

    // Holdout split from the tail of a seeded shuffle.
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, 0));
    shuffle(&mut order, &mut split_rng);
    let n_holdout = ((dataset.len() as f64) * tc.holdout_fraction).round() as usize;
    let n_holdout = n_holdout.min(dataset.len().saturating_sub(1));
    let (train_idx, holdout_idx) = order.split_at(dataset.len() - n_holdout);
    let train_idx = train_idx.to_vec();
    let holdout_idx = holdout_idx.to_vec();

    // Fixed corruption for the holdout so epochs compare like for like.
    let holdout_pair = if holdout_idx.is_empty() {
        None
    } else {
        let imgs: Vec<Tensor> = holdout_idx.iter().map(|&i| batches_chw[i].clone()).collect();
        let clean = concat_batch(&imgs, &model.config);
        let mut hrng = ChaCha8Rng::seed_from_u64(derive_seed(noise.seed, 1));
        let noisy = add_gaussian_noise(&clean, noise.sigma, &mut hrng);
        Some((clean, noisy))
    };

    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(noise.seed, 0));
    let adam = AdamConfig {
        lr: tc.lr,
        ..AdamConfig::default()
    };
    let mut stopper = EarlyStop::new(tc.early_stop_patience);
    let mut best_snapshot = crate::checkpoint::serialize_model(&model);
    let mut stop = StopReason::MaxEpochs;
    model.history.clear();

    'epochs: for epoch in 1..=tc.max_epochs {
        let mut epoch_order = train_idx.clone();
        let mut erng = ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, epoch as u64));
        shuffle(&mut epoch_order, &mut erng);

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in epoch_order.chunks(tc.batch_size) {
            let imgs: Vec<Tensor> = chunk.iter().map(|&i| batches_chw[i].clone()).collect();
            let clean = concat_batch(&imgs, &model.config);
            let noisy = add_gaussian_noise(&clean, noise.sigma, &mut noise_rng);

            let mut tape = Tape::new();
            let x = tape.leaf(noisy, false);
            let target = tape.leaf(clean, false);
            let params = model.push_params(&mut tape, true);
            let (latent, _) = model.encoder_forward(&mut tape, x, &params)?;
            let recon = model.decoder_forward(&mut tape, latent, &params)?;
            let loss = tape.mse_loss(recon, target)?;
            let loss_val = tape.value(loss).data()[0];
            if !loss_val.is_finite() {
                stop = StopReason::NanAbort;
                break 'epochs;
            }
            let grads = tape.backward(loss)?;
            let layer_grads: Vec<LayerGrads> = params
                .iter()
                .map(|&(w, b)| LayerGrads {
                    weights: grads[w.0].clone().expect("weight gradient"),
                    bias: grads[b.0].clone().expect("bias gradient"),
                })
                .collect();
            if adam_step(&mut model.params, &layer_grads, &adam).is_err() {
                stop = StopReason::NanAbort;
                break 'epochs;
            }
            loss_sum += loss_val * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = loss_sum / seen as f64;

        let monitored = match &holdout_pair {
            Some((clean, noisy)) => {
                let recon = model.forward_reconstruct(noisy)?;
                mse(recon.data(), clean.data())
            }
            None => train_loss,
        };
        model.history.push(EpochRecord {
            epoch,
            train_loss,
            monitored,
        });
        if !monitored.is_finite() {
            stop = StopReason::NanAbort;
            break;
        }
        match stopper.observe(monitored) {
            StopDecision::Improved => {
                best_snapshot = crate::checkpoint::serialize_model(&model);
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stop = StopReason::EarlyStop;
                break;
            }
        }
    }

    let history = std::mem::take(&mut model.history);
    let mut best = crate::checkpoint::deserialize_model(&best_snapshot)?;
    best.history = history;
    Ok(TrainOutcome {
        model: best,
        stop,
        best_epoch: stopper.best_epoch(),
        best_loss: stopper.best(),
    })
}

fn concat_batch(imgs: &[Tensor], config: &DaeConfig) -> Tensor {
    let per = config.input_c * config.input_h * config.input_w;
    let mut data = Vec::with_capacity(imgs.len() * per);
    for t in imgs {
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(
        data,
        &[imgs.len(), config.input_c, config.input_h, config.input_w],
    )
    .expect("counted")
}

/// Mean squared difference of two equal-length slices.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    s / a.len() as f64
}

/// Fisher–Yates shuffle driven by the given RNG.
pub fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
