use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Per-parameter moment buffers plus the shared step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    step: u64,
    moments: IndexMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> OptimizerState<T> {
    /// Zero-initialized moments for the given `(name, tensor)` pairs.
    pub fn new<'a, I>(config: AdamWConfig, params: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
    {
        let moments = params
            .into_iter()
            .map(|(name, t)| (name.to_string(), (vec![T::zero(); t.len()], vec![T::zero(); t.len()])))
            .collect();
        OptimizerState {
            config,
            step: 0,
            moments,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One AdamW update with decoupled weight decay:
///
/// ```text
/// p ← p·(1 − lr·wd)
/// m ← β1·m + (1 − β1)·g,   v ← β2·v + (1 − β2)·g²
/// p ← p − lr · m̂ / (√v̂ + ε)
/// ```
///
/// Gradients are read, not cleared.
pub fn adamw_step<'a, T, I>(params: I, state: &mut OptimizerState<T>, lr: f64) -> Result<()>
where
    T: Scalar,
    I: IntoIterator<Item = (&'a str, &'a mut Tensor<T>)>,
{
    let mut params: Vec<(&str, &mut Tensor<T>)> = params.into_iter().collect();
    for (name, p) in params.iter() {
        let (m, _) = state
            .moments
            .get(*name)
            .ok_or_else(|| Error::Contract(format!("optimizer has no state for {name}")))?;
        if m.len() != p.len() {
            return Err(Error::dim(
                "adamw_step",
                format!("state for {name} has {} values, parameter has {}", m.len(), p.len()),
            ));
        }
        if p.grad().is_none() {
            return Err(Error::Contract(format!("parameter {name} has no gradient")));
        }
    }

    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let lr_t = T::lit(lr);
    let decay = T::one() - T::lit(lr * cfg.weight_decay);
    let eps = T::lit(cfg.eps);

    for (name, p) in params.iter_mut() {
        let (m, v) = state.moments.get_mut(*name).expect("checked above");
        let g = p.grad().expect("checked above").to_vec();
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            *w *= decay;
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *w -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
