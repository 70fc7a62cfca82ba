use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub ff_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub num_keypoints: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub max_len: usize,
    /// When false the coordinates feed the attention stacks directly, which
    /// requires `d_model == num_keypoints`.
    #[serde(default = "default_projection")]
    pub projection: bool,
    #[serde(default = "default_layer_norm_eps")]
    pub layer_norm_eps: f64,
}

fn default_projection() -> bool {
    true
}

fn default_layer_norm_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    /// Two encoder and two decoder blocks with 16 heads, dropout 0.1.
    pub fn standard(d_model: usize, ff_dim: usize, num_keypoints: usize, num_classes: usize) -> Self {
        ModelConfig {
            d_model,
            ff_dim,
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 16,
            num_keypoints,
            num_classes,
            dropout: 0.1,
            max_len: 256,
            projection: true,
            layer_norm_eps: default_layer_norm_eps(),
        }
    }

    /// Small configuration used for gradient checks: d=8, ff=16, one block
    /// each side, two heads, five keypoints, three classes, no dropout.
    pub fn tiny() -> Self {
        ModelConfig {
            d_model: 8,
            ff_dim: 16,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 2,
            num_keypoints: 5,
            num_classes: 3,
            dropout: 0.0,
            max_len: 16,
            projection: true,
            layer_norm_eps: default_layer_norm_eps(),
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("ff_dim", self.ff_dim),
            ("heads", self.heads),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("num_keypoints", self.num_keypoints),
            ("num_classes", self.num_classes),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Schema(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Schema(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Schema(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Schema("layer_norm_eps must be positive".into()));
        }
        if !self.projection && self.d_model != self.num_keypoints {
            return Err(Error::Schema(format!(
                "without projection d_model ({}) must equal num_keypoints ({})",
                self.d_model, self.num_keypoints
            )));
        }
        Ok(())
    }
}
