use oqgen_tensor::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Network shape shared by the generator and the type classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ffn_width: usize,
    /// Stacked graph-attention layers over the semantic graph.
    pub gat_layers: usize,
    /// Hidden width of the focus head.
    pub focus_hidden: usize,
    pub dropout: f64,
    pub max_positions: usize,
    /// Adds a cross-attention over focus-word embeddings to every decoder
    /// layer (second stage of template-guided generation).
    pub focus_word_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 4,
            ffn_width: 128,
            gat_layers: 2,
            focus_hidden: 64,
            dropout: 0.1,
            max_positions: 256,
            focus_word_attention: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.d_model == 0 || self.ffn_width == 0 || self.focus_hidden == 0 {
            return bad("widths must be positive".into());
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        if self.gat_layers < 1 {
            return bad("gat_layers must be at least 1".into());
        }
        if self.encoder_layers < 1 || self.decoder_layers < 1 {
            return bad("encoder and decoder need at least one layer".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_positions < 2 {
            return bad("max_positions must be at least 2".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Peak learning rate, reached after `warmup_steps`.
    pub lr: f64,
    pub warmup_steps: usize,
    /// Linear decay to zero after warmup; otherwise constant.
    pub decay: bool,
    /// Upper bound on encoder plus decoder tokens per batch.
    pub token_budget: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Probability clamp for the focus cross-entropy.
    pub bce_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            lr: 3e-5,
            warmup_steps: 0,
            decay: false,
            token_budget: 32_768,
            clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            bce_eps: 1e-7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("lr {} must be positive", self.lr)));
        }
        if self.token_budget == 0 {
            return Err(ModelError::InvalidConfig("token_budget must be positive".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(ModelError::InvalidConfig("clip_norm must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    /// Learning rate for 1-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step <= self.warmup_steps {
            return self.lr * step as f64 / self.warmup_steps as f64;
        }
        if self.decay && self.steps > self.warmup_steps {
            let left = self.steps.saturating_sub(step) as f64;
            return self.lr * (left + 1.0) / (self.steps - self.warmup_steps) as f64;
        }
        self.lr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeOptions {
    pub beam: usize,
    pub length_penalty: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub trigram_block: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam: 5,
            length_penalty: 1.5,
            min_len: 1,
            max_len: 100,
            trigram_block: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingOptions {
    pub top_k: usize,
    pub top_p: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions {
            top_k: 10,
            top_p: 0.7,
            min_len: 1,
            max_len: 100,
        }
    }
}
