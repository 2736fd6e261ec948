//! Run configuration: a strict JSON schema covering the encoder, block
//! selection, attention, fusion, classifier head and training loop.

use serde::{Deserialize, Serialize};

use crate::encoder::BlockSelection;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub blocks: BlocksConfig,
    pub attention: AttentionConfig,
    pub fusion: FusionConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    Synth,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub mode: EncoderMode,
    /// Number of encoder blocks before selection.
    pub h: usize,
    /// Common padded length of both sentences.
    pub l: usize,
    pub d: usize,
    pub vocab: usize,
    pub seed: u64,
    /// Tokens per synonym group in the synthetic vocabulary.
    pub synonym_group: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlocksConfig {
    pub strategy: BlockSelection,
    /// Learned gates when true; constant `1/L` weights otherwise.
    pub adaptive: bool,
    /// Bottleneck width of the gate network.
    pub reduction: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaVariant {
    None,
    Fa1,
    Fa2,
    Fa3,
}

impl FaVariant {
    pub fn name(self) -> &'static str {
        match self {
            FaVariant::None => "none",
            FaVariant::Fa1 => "fa1",
            FaVariant::Fa2 => "fa2",
            FaVariant::Fa3 => "fa3",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub sa: bool,
    pub fa: FaVariant,
    pub d_prime: usize,
    /// Divide attention scores by `sqrt(D)`.
    pub scale_scores: bool,
    /// Share feature-attention parameters between the two sentences.
    pub tied: bool,
    /// Bottleneck width of the FA-1/FA-2 feedforward.
    pub reduction: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Pooling,
    Rfm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub k: usize,
    pub psi_sizes: Vec<usize>,
    pub phi_size: usize,
    pub dilations: Vec<usize>,
    pub d_dprime: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSet {
    Binary,
    Ternary,
}

impl LabelSet {
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            LabelSet::Binary => &["match", "not_match"],
            LabelSet::Ternary => &["entailment", "neutral", "contradiction"],
        }
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> usize {
        self.labels().len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub hidden: usize,
    pub labels: LabelSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs without validation improvement before decaying, then stopping.
    pub patience: usize,
    pub decay: f64,
    pub seed: u64,
    /// Global gradient-norm clip; `null` disables clipping.
    pub clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 10,
            decay: 0.1,
            seed: 7,
            clip: None,
        }
    }
}

/// Everything the network itself depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub blocks: BlocksConfig,
    pub attention: AttentionConfig,
    pub fusion: FusionConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    /// Width of the vector fed to the classifier head.
    pub fn head_input(&self) -> usize {
        match self.fusion.mode {
            FusionMode::Rfm => 3 * (self.fusion.k + 1) * self.fusion.d_dprime,
            FusionMode::Pooling => 6 * self.attention.d_prime,
        }
    }
}

fn cfg_err(path: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: msg.into(),
    }
}

impl RunConfig {
    /// The default desk-scale model: H=4, L=12, D=32, D′=16, D″=16, k=3.
    pub fn desk() -> Self {
        RunConfig {
            encoder: EncoderConfig {
                mode: EncoderMode::Synth,
                h: 4,
                l: 12,
                d: 32,
                vocab: 50,
                seed: 7,
                synonym_group: 2,
            },
            blocks: BlocksConfig {
                strategy: BlockSelection::All,
                adaptive: true,
                reduction: 8,
            },
            attention: AttentionConfig {
                sa: true,
                fa: FaVariant::Fa3,
                d_prime: 16,
                scale_scores: false,
                tied: true,
                reduction: 8,
            },
            fusion: FusionConfig {
                mode: FusionMode::Rfm,
                k: 3,
                psi_sizes: vec![1, 3, 5],
                phi_size: 3,
                dilations: vec![1, 2, 3],
                d_dprime: 16,
            },
            head: HeadConfig {
                hidden: 64,
                labels: LabelSet::Binary,
            },
            train: TrainConfig::default(),
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            blocks: self.blocks.clone(),
            attention: self.attention.clone(),
            fusion: self.fusion.clone(),
            head: self.head.clone(),
        }
    }

    /// Parses and validates. Errors name the offending key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let mut path = e.path().to_string();
            let message = e.inner().to_string();
            if let Some(field) = message
                .strip_prefix("missing field `")
                .and_then(|rest| rest.split('`').next())
            {
                path = if path == "." {
                    field.to_string()
                } else {
                    format!("{path}.{field}")
                };
            }
            cfg_err(&path, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        for (name, v) in [("encoder.h", e.h), ("encoder.l", e.l), ("encoder.d", e.d)] {
            if v == 0 {
                return Err(cfg_err(name, "must be at least 1"));
            }
        }
        if e.mode == EncoderMode::Synth && e.vocab < 4 {
            return Err(cfg_err(
                "encoder.vocab",
                "synthetic vocabulary needs at least 4 tokens",
            ));
        }
        if e.synonym_group == 0 {
            return Err(cfg_err("encoder.synonym_group", "must be at least 1"));
        }
        self.blocks
            .strategy
            .indices(e.h)
            .map_err(|err| cfg_err("blocks.strategy", err.to_string()))?;
        if self.blocks.reduction == 0 {
            return Err(cfg_err("blocks.reduction", "must be at least 1"));
        }
        let a = &self.attention;
        if a.d_prime == 0 {
            return Err(cfg_err("attention.d_prime", "must be at least 1"));
        }
        if a.reduction == 0 {
            return Err(cfg_err("attention.reduction", "must be at least 1"));
        }
        let f = &self.fusion;
        if f.mode == FusionMode::Rfm {
            if f.k == 0 {
                return Err(cfg_err("fusion.k", "must be at least 1"));
            }
            if f.psi_sizes.len() != f.k {
                return Err(cfg_err(
                    "fusion.psi_sizes",
                    format!("expected {} sizes", f.k),
                ));
            }
            if f.psi_sizes.iter().any(|&s| s == 0 || s % 2 == 0) {
                return Err(cfg_err("fusion.psi_sizes", "kernel sizes must be odd"));
            }
            if f.phi_size == 0 || f.phi_size.is_multiple_of(2) {
                return Err(cfg_err("fusion.phi_size", "kernel size must be odd"));
            }
            if f.dilations.len() != f.k {
                return Err(cfg_err(
                    "fusion.dilations",
                    format!("expected {} rates", f.k),
                ));
            }
            if f.dilations.contains(&0) {
                return Err(cfg_err("fusion.dilations", "rates must be at least 1"));
            }
            if f.dilations.windows(2).any(|w| w[0] > w[1]) {
                return Err(cfg_err("fusion.dilations", "rates must be non-decreasing"));
            }
            if f.d_dprime == 0 {
                return Err(cfg_err("fusion.d_dprime", "must be at least 1"));
            }
        }
        if self.head.hidden == 0 {
            return Err(cfg_err("head.hidden", "must be at least 1"));
        }
        let t = &self.train;
        if t.epochs == 0 {
            return Err(cfg_err("train.epochs", "must be at least 1"));
        }
        if t.batch_size == 0 {
            return Err(cfg_err("train.batch_size", "must be at least 1"));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(cfg_err("train.lr", "must be positive"));
        }
        for (name, b) in [("train.beta1", t.beta1), ("train.beta2", t.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(cfg_err(name, "must lie in [0, 1)"));
            }
        }
        if t.eps <= 0.0 {
            return Err(cfg_err("train.eps", "must be positive"));
        }
        if t.patience == 0 {
            return Err(cfg_err("train.patience", "must be at least 1"));
        }
        if !(t.decay > 0.0 && t.decay < 1.0) {
            return Err(cfg_err("train.decay", "must lie in (0, 1)"));
        }
        if let Some(c) = t.clip {
            if c <= 0.0 {
                return Err(cfg_err("train.clip", "must be positive when set"));
            }
        }
        Ok(())
    }
}
