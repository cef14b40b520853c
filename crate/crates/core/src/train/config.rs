use serde::{Deserialize, Serialize};

use crate::align::McfaConfig;
use crate::error::{Error, Result};
use crate::model::EncoderConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Seen-class annotations plus teacher labels for the rest.
    #[default]
    ZeroShot,
    /// No annotations at all; every class is treated as unseen.
    AnnotationFree,
    /// Seen-class annotations only, no teacher and no self-training;
    /// predictions are restricted to seen classes.
    SeenOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Nesterov momentum.
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Weight of the alignment term in the first stage.
    pub lambda: f64,
    pub epochs: usize,
    /// Defaults to half of `epochs`, rounded up.
    pub stage1_epochs: Option<usize>,
    pub seed: u64,
    pub mode: TrainMode,
    /// Row-normalize point features before the head.
    pub normalize_features: bool,
    /// Multiplier on head logits during training; prediction is unaffected.
    pub logit_scale: f64,
    /// Depth tolerance, in metres, for a point to count as visible in its cell.
    pub occlusion_margin: f64,
    /// Regenerate self-training labels every epoch instead of once at the
    /// stage boundary.
    pub regenerate_labels: bool,
    pub eval_every_epoch: bool,
    /// Mix teacher features with a fixed random rotation.
    pub teacher_rotation: bool,
    pub mcfa: McfaConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.24,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 8,
            lambda: 0.01,
            epochs: 12,
            stage1_epochs: None,
            seed: 0,
            mode: TrainMode::ZeroShot,
            normalize_features: true,
            logit_scale: 1.0,
            occlusion_margin: 1.0,
            regenerate_labels: true,
            eval_every_epoch: true,
            teacher_rotation: false,
            mcfa: McfaConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.mcfa.tau > 0.0 && self.mcfa.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.mcfa.tau));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative".into());
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return bad(format!(
                "logit_scale must be positive, got {}",
                self.logit_scale
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.occlusion_margin >= 0.0) {
            return bad("occlusion_margin must be nonnegative".into());
        }
        if self.stage1_epochs.is_some_and(|s| s > self.epochs) {
            return bad(format!(
                "stage1_epochs {} exceeds epochs {}",
                self.stage1_epochs.unwrap_or(0),
                self.epochs
            ));
        }
        Ok(())
    }

    /// `(stage 1, stage 2)` epoch counts. Seen-only training gets the same
    /// first-stage budget and no second stage.
    pub fn stage_epochs(&self) -> (usize, usize) {
        let s1 = self.stage1_epochs.unwrap_or(self.epochs.div_ceil(2));
        if self.mode == TrainMode::SeenOnly {
            return (s1, 0);
        }
        (s1, self.epochs - s1)
    }

    /// Whether the alignment term is computed at all.
    pub fn uses_alignment(&self) -> bool {
        self.mode != TrainMode::SeenOnly
            && self.lambda > 0.0
            && (self.mcfa.class_loss || self.mcfa.patch_loss)
    }
}
