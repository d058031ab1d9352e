use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the pooling weights β come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaSource {
    /// A learned query vector attends over the hidden states.
    #[default]
    Query,
    /// Column means (over valid query rows) of the last encoder block's
    /// attention matrix.
    AttnRowmean,
}

/// Optimizer, schedule and architecture hyperparameters.
///
/// `d_k` and `d_ff` default to `d_model` and `4 * d_model` when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub d_model: usize,
    pub d_k: Option<usize>,
    pub d_ff: Option<usize>,
    pub layers: usize,
    pub alpha: f64,
    pub learnable_alpha: bool,
    pub beta_source: BetaSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 5,
            seed: 0,
            d_model: 64,
            d_k: None,
            d_ff: None,
            layers: 2,
            alpha: 0.5,
            learnable_alpha: false,
            beta_source: BetaSource::Query,
        }
    }
}

impl TrainConfig {
    pub fn d_k(&self) -> usize {
        self.d_k.unwrap_or(self.d_model)
    }

    pub fn d_ff(&self) -> usize {
        self.d_ff.unwrap_or(4 * self.d_model)
    }

    /// Same configuration with a different hidden size; `d_k` and `d_ff`
    /// follow it.
    pub fn with_hidden(&self, d_model: usize) -> Self {
        Self {
            d_model,
            d_k: None,
            d_ff: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.lr.is_nan() || self.lr <= 0.0 {
            return fail("lr must be > 0");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return fail("adam_eps must be > 0");
        }
        if self.d_model == 0 || self.d_k() == 0 || self.d_ff() == 0 {
            return fail("d_model, d_k and d_ff must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail("alpha must lie in [0, 1]");
        }
        if self.learnable_alpha && !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("learnable_alpha needs an initial alpha strictly inside (0, 1)");
        }
        if self.beta_source == BetaSource::AttnRowmean && self.layers == 0 {
            return fail("beta_source attn_rowmean needs at least one encoder layer");
        }
        Ok(())
    }
}

/// Data-dependent model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub max_len: usize,
    pub num_classes: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected_and_defaults_filled() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"lr": 0.01}"#).unwrap();
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.batch_size, 32);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 0.01}"#).is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            alpha: 1.0,
            learnable_alpha: true,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hidden_dims_follow_d_model() {
        let cfg = TrainConfig {
            d_k: Some(3),
            ..Default::default()
        }
        .with_hidden(16);
        assert_eq!((cfg.d_model, cfg.d_k(), cfg.d_ff()), (16, 16, 64));
    }
}
