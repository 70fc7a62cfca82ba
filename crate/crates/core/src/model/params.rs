use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::scalar::Scalar;

const ATTN_PROJECTIONS: [&str; 4] = ["q_proj", "k_proj", "v_proj", "out_proj"];

fn push_linear(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, fan_in: usize, fan_out: usize) {
    out.push((format!("{prefix}.weight"), vec![fan_in, fan_out]));
    out.push((format!("{prefix}.bias"), vec![fan_out]));
}

fn push_attention(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, d: usize) {
    for p in ATTN_PROJECTIONS {
        push_linear(out, &format!("{prefix}.{p}"), d, d);
    }
}

fn push_norm(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, d: usize) {
    out.push((format!("{prefix}.weight"), vec![d]));
    out.push((format!("{prefix}.bias"), vec![d]));
}

/// Every parameter tensor's name and shape, in canonical order.
pub fn parameter_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, ff, k) = (cfg.d_model, cfg.ff_dim, cfg.num_keypoints);
    let mut out = Vec::new();
    if cfg.projection {
        push_linear(&mut out, "x_projection", k, d);
        push_linear(&mut out, "y_projection", k, d);
    }
    for i in 0..cfg.encoder_layers {
        let p = format!("encoder.layers.{i}");
        push_attention(&mut out, &format!("{p}.self_attn"), d);
        push_norm(&mut out, &format!("{p}.self_attn_layer_norm"), d);
        push_linear(&mut out, &format!("{p}.fc1"), d, ff);
        push_linear(&mut out, &format!("{p}.fc2"), ff, d);
        push_norm(&mut out, &format!("{p}.final_layer_norm"), d);
    }
    for i in 0..cfg.decoder_layers {
        let p = format!("decoder.layers.{i}");
        push_attention(&mut out, &format!("{p}.self_attn"), d);
        push_norm(&mut out, &format!("{p}.self_attn_layer_norm"), d);
        push_attention(&mut out, &format!("{p}.encoder_attn"), d);
        push_norm(&mut out, &format!("{p}.encoder_attn_layer_norm"), d);
        push_linear(&mut out, &format!("{p}.fc1"), d, ff);
        push_linear(&mut out, &format!("{p}.fc2"), ff, d);
        push_norm(&mut out, &format!("{p}.final_layer_norm"), d);
    }
    push_linear(&mut out, "classifier", d, cfg.num_classes);
    out
}

/// Closed-form parameter count.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    let (d, ff, k, c) = (cfg.d_model, cfg.ff_dim, cfg.num_keypoints, cfg.num_classes);
    let projection = if cfg.projection { 2 * (k * d + d) } else { 0 };
    let attention = 4 * (d * d + d);
    let norm = 2 * d;
    let feed_forward = d * ff + ff + ff * d + d;
    let encoder = attention + norm + feed_forward + norm;
    let decoder = 2 * attention + 3 * norm + feed_forward;
    projection + cfg.encoder_layers * encoder + cfg.decoder_layers * decoder + d * c + c
}

/// Named model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ModelParameters<T> {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = parameter_shapes(cfg)
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".bias") {
                    Tensor::zeros(shape)
                } else if shape.len() == 1 {
                    Tensor::full(shape, T::one())
                } else {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let n = shape[0] * shape[1];
                    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
                    Tensor::from_f64(shape, &data).expect("finite init")
                };
                (name, t.with_requires_grad(true))
            })
            .collect();
        Ok(ModelParameters { tensors })
    }

    /// Wraps existing tensors after checking them against `cfg`.
    pub fn from_tensors(cfg: &ModelConfig, tensors: IndexMap<String, Tensor<T>>) -> Result<Self> {
        let expected = parameter_shapes(cfg);
        if expected.len() != tensors.len() {
            return Err(Error::Schema(format!(
                "config needs {} parameter tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &expected {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Schema(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Schema(format!(
                    "parameter {name} has shape {:?}, config needs {shape:?}",
                    t.shape()
                )));
            }
        }
        let tensors = expected
            .iter()
            .map(|(name, _)| {
                let t = tensors[name].clone().with_requires_grad(true);
                (name.clone(), t)
            })
            .collect();
        Ok(ModelParameters { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors.len()
    }

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    /// Records every parameter on `tape`. With `trainable` false they are
    /// recorded as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable { tape.leaf(t) } else { tape.constant(t) };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }

    /// Copies gradients from the tape into each tensor's gradient buffer.
    pub fn collect_grads(&mut self, tape: &Tape<T>, bound: &BoundParams) -> Result<()> {
        for (name, t) in self.tensors.iter_mut() {
            let v = bound.get(name);
            match tape.grad(v) {
                Some(g) => t.accumulate_grad(g)?,
                None => t.accumulate_grad(&vec![T::zero(); t.len()])?,
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParameters<U> {
        ModelParameters {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

/// Parameter handles on one tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
