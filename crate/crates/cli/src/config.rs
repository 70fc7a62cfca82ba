//! Run configuration files (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use signbart::model::ModelConfig;
use signbart::skeleton::{parse_parts, KeypointLayout, NormState, NormalizationMode, SkeletonSequence};
use signbart::trainer::TrainConfig;
use signbart::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub ff_dim: usize,
    #[serde(default = "two")]
    pub encoder_layers: usize,
    #[serde(default = "two")]
    pub decoder_layers: usize,
    #[serde(default = "sixteen")]
    pub heads: usize,
    /// Inferred from the training data when absent.
    pub num_keypoints: Option<usize>,
    /// Inferred from the training labels when absent.
    pub num_classes: Option<usize>,
    #[serde(default = "max_len")]
    pub max_len: usize,
    #[serde(default = "yes")]
    pub projection: bool,
    #[serde(default = "layer_norm_eps")]
    pub layer_norm_eps: f64,
}

fn two() -> usize {
    2
}
fn sixteen() -> usize {
    16
}
fn max_len() -> usize {
    256
}
fn yes() -> bool {
    true
}
fn layer_norm_eps() -> f64 {
    1e-5
}
fn default_mode() -> String {
    NormalizationMode::ThreeBox.name().into()
}
fn default_parts() -> String {
    "body,left,right".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    /// Part normalization the datasets must carry.
    #[serde(default = "default_mode")]
    pub mode: String,
    /// Components kept by preprocessing; fixes the expected keypoint count.
    #[serde(default = "default_parts")]
    pub parts: String,
    pub out_dir: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: None,
            val: None,
            mode: default_mode(),
            parts: default_parts(),
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Schema(msg) => Error::Schema(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let at = e.span().map(|s| format!(" (at byte {})", s.start)).unwrap_or_default();
            Error::Schema(format!("{}{at}", e.message().trim()))
        })?;
        cfg.train.validate()?;
        cfg.mode()?;
        cfg.parts_len()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn mode(&self) -> Result<NormalizationMode> {
        self.data
            .mode
            .parse()
            .map_err(|e: Error| Error::Schema(format!("data.mode: {e}")))
    }

    fn parts_len(&self) -> Result<usize> {
        let parts = parse_parts(&self.data.parts).map_err(|e| Error::Schema(format!("data.parts: {e}")))?;
        Ok(KeypointLayout::canonical().selected_len(&parts))
    }

    /// Model configuration with every optional field filled in. Dropout comes
    /// from the training section.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let need = |v: Option<usize>, what: &str| {
            v.ok_or_else(|| Error::Schema(format!("model.{what} must be set")))
        };
        let cfg = ModelConfig {
            d_model: m.d_model,
            ff_dim: m.ff_dim,
            encoder_layers: m.encoder_layers,
            decoder_layers: m.decoder_layers,
            heads: m.heads,
            num_keypoints: need(m.num_keypoints, "num_keypoints")?,
            num_classes: need(m.num_classes, "num_classes")?,
            dropout: self.train.dropout,
            max_len: m.max_len,
            projection: m.projection,
            layer_norm_eps: m.layer_norm_eps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fills in keypoint and class counts from the data and checks both
    /// splits against the configuration before any training happens.
    pub fn resolve_against(&mut self, train: &[SkeletonSequence], val: &[SkeletonSequence]) -> Result<()> {
        let first = train
            .first()
            .ok_or_else(|| Error::Parameter("training set is empty".into()))?;
        if val.is_empty() {
            return Err(Error::Parameter("validation set is empty".into()));
        }
        let expected_state = NormState::PartNormalized(self.mode()?);
        for (split, seqs) in [("training", train), ("validation", val)] {
            if seqs[0].state() != expected_state {
                return Err(Error::State(format!(
                    "{split} data is {}, config expects {expected_state}",
                    seqs[0].state()
                )));
            }
        }
        let k = first.num_keypoints();
        let parts_k = self.parts_len()?;
        if k != parts_k {
            return Err(Error::Schema(format!(
                "training data has {k} keypoints per frame, data.parts = {:?} gives {parts_k}",
                self.data.parts
            )));
        }
        match self.model.num_keypoints {
            Some(n) if n != k => {
                return Err(Error::Schema(format!(
                    "model.num_keypoints = {n} but the data has {k} keypoints per frame"
                )))
            }
            _ => self.model.num_keypoints = Some(k),
        }
        let mut max_label = None;
        for s in train {
            let l = s
                .label
                .ok_or_else(|| Error::Schema(format!("training record {} has no label", s.id)))?;
            max_label = max_label.max(Some(l));
        }
        let classes = match self.model.num_classes {
            Some(c) => c,
            None => max_label.map_or(0, |l| l + 1),
        };
        self.model.num_classes = Some(classes);
        for (split, seqs) in [("training", train), ("validation", val)] {
            for s in seqs {
                match s.label {
                    None => return Err(Error::Schema(format!("{split} record {} has no label", s.id))),
                    Some(l) if l >= classes => {
                        return Err(Error::Schema(format!(
                            "{split} record {} has label {l}, but there are {classes} classes",
                            s.id
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        self.model_config().map(|_| ())
    }
}
