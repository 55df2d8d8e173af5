use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schedule length the default config and its anneal points refer to.
pub const REFERENCE_TOTAL_STEPS: usize = 600_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodebookSizes {
    pub speaker: usize,
    pub accent: usize,
}

impl Default for CodebookSizes {
    fn default() -> Self {
        Self {
            speaker: 512,
            accent: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    /// Latent (and codeword) dimension of each branch.
    pub latent_dim: usize,
    pub codebook_sizes: CodebookSizes,
    /// Weight of the KL term in the total loss.
    pub beta: f64,
    /// Peak learning rate reached at the end of warmup.
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Steps after which the learning rate is multiplied by [`ANNEAL_FACTOR`](super::ANNEAL_FACTOR).
    pub anneal_steps: Vec<usize>,
    pub total_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Quantize both latents; `false` decodes the continuous latents.
    pub use_vq: bool,
    /// Keep decoder parameters fixed at their initial values.
    pub freeze_decoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 12,
            hidden_dim: 256,
            latent_dim: 4,
            codebook_sizes: CodebookSizes::default(),
            beta: 1e-4,
            learning_rate: 1e-3,
            warmup_steps: 4_000,
            anneal_steps: vec![300_000, 400_000, 500_000],
            total_steps: REFERENCE_TOTAL_STEPS,
            batch_size: 48,
            seed: 42,
            use_vq: true,
            freeze_decoder: false,
        }
    }
}

impl ModelConfig {
    /// Rescales warmup and anneal points proportionally to a new run length.
    pub fn scaled_to(&self, total_steps: usize) -> Self {
        let ratio = total_steps as f64 / self.total_steps as f64;
        let scale = |s: usize| ((s as f64 * ratio).round() as usize).min(total_steps.saturating_sub(1));
        let mut anneal: Vec<usize> = self.anneal_steps.iter().map(|&s| scale(s)).collect();
        anneal.dedup();
        Self {
            warmup_steps: scale(self.warmup_steps).max(1).min(total_steps.saturating_sub(1)),
            anneal_steps: anneal,
            total_steps,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        for (name, v) in [
            ("feature_dim", self.feature_dim),
            ("hidden_dim", self.hidden_dim),
            ("latent_dim", self.latent_dim),
            ("codebook_sizes.speaker", self.codebook_sizes.speaker),
            ("codebook_sizes.accent", self.codebook_sizes.accent),
            ("total_steps", self.total_steps),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                bad.push(format!("{name} must be >= 1"));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            bad.push("beta must be finite and >= 0".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bad.push("learning_rate must be finite and > 0".into());
        }
        if self.warmup_steps >= self.total_steps {
            bad.push("warmup_steps must be < total_steps".into());
        }
        if self.anneal_steps.windows(2).any(|w| w[0] >= w[1]) {
            bad.push("anneal_steps must be strictly increasing".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid model config: {}", bad.join("; "))))
        }
    }
}
