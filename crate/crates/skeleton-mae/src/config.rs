//! Run configuration: a single JSON document covering model dimensions,
//! pre-training, fine-tuning, data paths, and the masking grid.
//!
//! Every section and field has a default, so `{}` is a valid config; unknown
//! keys are rejected at every level. Parse → serialize → parse is
//! value-identical, which the checkpoint format relies on for snapshots.

use crate::backbones::BackboneKind;
use crate::error::{Error, Result};
use crate::masking::{MaskSpec, MaskStrategy};
use crate::skeleton::SkeletonLayout;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Joint count N; only the 17-joint COCO layout is wired to the CLI.
    pub joints: usize,
    /// Frames per sequence T after resampling.
    pub frames: usize,
    /// Embedding width D.
    pub embed_dim: usize,
    /// Encoder output width D_h.
    pub hidden_dim: usize,
    /// Encoder depth L_D (the decoder is always a single layer).
    pub encoder_depth: usize,
    /// Stacked representation-learning layers M in the classifier.
    pub strl_depth: usize,
    pub backbone: BackboneKind,
    /// Attention heads per layer when `backbone` is `gat`.
    pub gat_heads: usize,
    pub class_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            joints: 17,
            frames: 64,
            embed_dim: 64,
            hidden_dim: 64,
            encoder_depth: 3,
            strl_depth: 3,
            backbone: BackboneKind::Gin,
            gat_heads: 4,
            class_count: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Effective batch shrinks to min(256, dataset) when this exceeds the
    /// dataset size.
    pub batch_size: usize,
    /// Cosine-error re-weighting power; must be >= 1.
    pub beta: f64,
    pub mask: MaskSpec,
    pub checkpoint_every_epoch: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            learning_rate: 1.5e-4,
            epochs: 50,
            batch_size: 1024,
            beta: 2.0,
            mask: MaskSpec::default(),
            checkpoint_every_epoch: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Linear warmup from 0.01·lr over this many leading epochs.
    pub warmup_epochs: usize,
    /// 0-indexed epochs at whose start the rate is multiplied by
    /// `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub label_smoothing: f64,
    pub batch_size: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            epochs: 110,
            warmup_epochs: 5,
            decay_epochs: vec![90, 100],
            decay_factor: 0.1,
            label_smoothing: 0.1,
            batch_size: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: String,
    pub test: String,
    /// Training-time Gaussian jitter in normalized units; 0 disables.
    pub noise_sigma: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: "data/train.jsonl".into(),
            test: "data/test.jsonl".into(),
            noise_sigma: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every shuffle, mask draw, init, and noise stream is
    /// derived from it.
    pub seed: u64,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub data: DataConfig,
    /// Strategies swept by the masking comparison command.
    pub masking_grid: Vec<MaskStrategy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            data: DataConfig::default(),
            masking_grid: Vec::new(),
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn layout(&self) -> Result<SkeletonLayout> {
        if self.model.joints != 17 {
            return Err(Error::Config(format!(
                "joints must be 17 (COCO layout); got {}",
                self.model.joints
            )));
        }
        Ok(SkeletonLayout::coco17())
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        for (name, v) in [
            ("model.joints", m.joints),
            ("model.frames", m.frames),
            ("model.embed_dim", m.embed_dim),
            ("model.hidden_dim", m.hidden_dim),
            ("model.encoder_depth", m.encoder_depth),
            ("model.strl_depth", m.strl_depth),
            ("model.gat_heads", m.gat_heads),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if m.class_count < 2 {
            return Err(Error::Config(format!(
                "model.class_count must be at least 2, got {}",
                m.class_count
            )));
        }
        if m.frames % 4 != 0 {
            return Err(Error::Config(format!(
                "model.frames must be divisible by 4 for multi-scale pooling, got {}",
                m.frames
            )));
        }
        if m.backbone == BackboneKind::Gat && m.hidden_dim % m.gat_heads != 0 {
            return Err(Error::Config(format!(
                "model.hidden_dim {} is not divisible by gat_heads {}",
                m.hidden_dim, m.gat_heads
            )));
        }
        let p = &self.pretrain;
        if p.learning_rate <= 0.0 || !p.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "pretrain.learning_rate must be positive, got {}",
                p.learning_rate
            )));
        }
        if p.beta < 1.0 || !p.beta.is_finite() {
            return Err(Error::Config(format!(
                "pretrain.beta must be at least 1, got {}",
                p.beta
            )));
        }
        if p.batch_size == 0 {
            return Err(Error::Config("pretrain.batch_size must be positive".into()));
        }
        let f = &self.finetune;
        if f.learning_rate <= 0.0 || !f.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "finetune.learning_rate must be positive, got {}",
                f.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&f.momentum) {
            return Err(Error::Config(format!(
                "finetune.momentum must be in [0,1), got {}",
                f.momentum
            )));
        }
        if !(0.0..1.0).contains(&f.label_smoothing) {
            return Err(Error::Config(format!(
                "finetune.label_smoothing must be in [0,1), got {}",
                f.label_smoothing
            )));
        }
        if f.decay_factor <= 0.0 || f.decay_factor > 1.0 {
            return Err(Error::Config(format!(
                "finetune.decay_factor must be in (0,1], got {}",
                f.decay_factor
            )));
        }
        if f.batch_size == 0 {
            return Err(Error::Config("finetune.batch_size must be positive".into()));
        }
        if f.warmup_epochs > f.epochs {
            return Err(Error::Config(format!(
                "finetune.warmup_epochs {} exceeds epochs {}",
                f.warmup_epochs, f.epochs
            )));
        }
        for &d in &f.decay_epochs {
            if d >= f.epochs && f.epochs > 0 {
                return Err(Error::Config(format!(
                    "finetune decay epoch {d} is not below epochs {}",
                    f.epochs
                )));
            }
        }
        if self.data.noise_sigma < 0.0 || !self.data.noise_sigma.is_finite() {
            return Err(Error::Config(format!(
                "data.noise_sigma must be >= 0, got {}",
                self.data.noise_sigma
            )));
        }
        let layout = self.layout()?;
        self.pretrain.mask.strategy.validate(&layout)?;
        for s in &self.masking_grid {
            s.validate(&layout)?;
        }
        Ok(())
    }
}
