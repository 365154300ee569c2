//! Named parameter storage and the Adam optimizer.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One trainable tensor plus its Adam moment estimates. Moments are
/// allocated lazily on the first update so that merely building a large
/// model does not triple its memory footprint.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    m: Option<Tensor>,
    v: Option<Tensor>,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Param {
            value,
            m: None,
            v: None,
        }
    }

    /// First-moment estimate, zeros until the first update.
    pub fn moment1(&self) -> Option<&Tensor> {
        self.m.as_ref()
    }

    /// Second-moment estimate, zeros until the first update.
    pub fn moment2(&self) -> Option<&Tensor> {
        self.v.as_ref()
    }

    /// Restores serialized optimizer state.
    pub fn set_moments(&mut self, m: Tensor, v: Tensor) {
        self.m = Some(m);
        self.v = Some(v);
    }
}

/// Weights and bias of one layer.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub weights: Param,
    pub bias: Param,
}

/// Ordered, named map from layer identifier to its parameters, plus the
/// shared Adam step counter. Declaration order is the serialization
/// order.
#[derive(Debug, Clone, Default)]
pub struct ParameterBlock {
    entries: Vec<(String, LayerParams)>,
    step: u64,
}

impl ParameterBlock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a layer. Names must be unique.
    pub fn insert(&mut self, name: &str, weights: Tensor, bias: Tensor) -> Result<()> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::config(format!("duplicate layer name {name:?}")));
        }
        self.entries.push((
            name.to_string(),
            LayerParams {
                weights: Param::new(weights),
                bias: Param::new(bias),
            },
        ));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Optimizer step counter (number of Adam updates applied).
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Layers in declaration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &LayerParams)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    /// Mutable access in declaration order.
    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut LayerParams)> {
        self.entries.iter_mut().map(|(n, p)| (n.as_str(), p))
    }

    /// Looks a layer up by name.
    pub fn get(&self, name: &str) -> Option<&LayerParams> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.entries
            .iter()
            .map(|(_, p)| p.weights.value.len() + p.bias.value.len())
            .sum()
    }
}

/// Gradients for one layer, aligned with `ParameterBlock` declaration
/// order.
#[derive(Debug)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update with bias correction over every layer in the block.
/// `grads` must align with declaration order. NaN or infinite gradients
/// abort the step, leaving parameters untouched.
pub fn adam_step(params: &mut ParameterBlock, grads: &[LayerGrads], cfg: &AdamConfig) -> Result<()> {
    if cfg.lr <= 0.0 {
        return Err(Error::config("adam learning rate must be positive"));
    }
    if grads.len() != params.entries.len() {
        return Err(Error::shape(format!(
            "gradient count {} does not match layer count {}",
            grads.len(),
            params.entries.len()
        )));
    }
    for ((name, layer), g) in params.entries.iter().zip(grads) {
        for (p, gt, what) in [
            (&layer.weights, &g.weights, "weights"),
            (&layer.bias, &g.bias, "bias"),
        ] {
            if p.value.shape() != gt.shape() {
                return Err(Error::shape(format!(
                    "layer {name:?} {what}: gradient shape {:?} does not match parameter shape {:?}",
                    gt.shape(),
                    p.value.shape()
                )));
            }
            if !gt.all_finite() {
                return Err(Error::numerical(format!(
                    "layer {name:?} {what}: non-finite gradient; step aborted"
                )));
            }
        }
    }

    let t = params.step + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for ((_, layer), g) in params.entries.iter_mut().zip(grads) {
        update_param(&mut layer.weights, &g.weights, cfg, bc1, bc2);
        update_param(&mut layer.bias, &g.bias, cfg, bc1, bc2);
    }
    params.step = t;
    Ok(())
}

fn update_param(p: &mut Param, g: &Tensor, cfg: &AdamConfig, bc1: f64, bc2: f64) {
    let m = p
        .m
        .get_or_insert_with(|| Tensor::zeros(g.shape()))
        .data_mut();
    for (mi, &gi) in m.iter_mut().zip(g.data()) {
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
    }
    let v = p
        .v
        .get_or_insert_with(|| Tensor::zeros(g.shape()))
        .data_mut();
    for (vi, &gi) in v.iter_mut().zip(g.data()) {
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
    }
    let m = p.m.as_ref().expect("just inserted").data();
    let v = p.v.as_ref().expect("just inserted").data();
    for ((pi, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        *pi -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}
