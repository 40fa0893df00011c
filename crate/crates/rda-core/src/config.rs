//! Attack configuration: hyperparameters, augmentation policy, and the
//! target-side defense stack, loaded from a TOML file with unknown keys
//! rejected. CLI flags override file values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentPolicy;
use crate::defenses::DefenseTransform;
use crate::error::{RdaError, Result};

/// Training objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Discriminating + aligning losses, weighted by lambda1/lambda2.
    Rda,
    /// Discriminating + linear-penalty aligning variant.
    RdaV2,
    /// Discriminating + exponential-penalty aligning variant.
    RdaV3,
    DOnly,
    AOnly,
    Mse,
    Cosine,
    Kl,
    Infonce,
}

impl LossVariant {
    pub const ALL: [LossVariant; 9] = [
        LossVariant::Rda,
        LossVariant::RdaV2,
        LossVariant::RdaV3,
        LossVariant::DOnly,
        LossVariant::AOnly,
        LossVariant::Mse,
        LossVariant::Cosine,
        LossVariant::Kl,
        LossVariant::Infonce,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rda" => Ok(LossVariant::Rda),
            "rda_v2" => Ok(LossVariant::RdaV2),
            "rda_v3" => Ok(LossVariant::RdaV3),
            "d_only" => Ok(LossVariant::DOnly),
            "a_only" => Ok(LossVariant::AOnly),
            "mse" => Ok(LossVariant::Mse),
            "cosine" => Ok(LossVariant::Cosine),
            "kl" => Ok(LossVariant::Kl),
            "infonce" => Ok(LossVariant::Infonce),
            other => Err(RdaError::config(format!("unknown loss variant {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossVariant::Rda => "rda",
            LossVariant::RdaV2 => "rda_v2",
            LossVariant::RdaV3 => "rda_v3",
            LossVariant::DOnly => "d_only",
            LossVariant::AOnly => "a_only",
            LossVariant::Mse => "mse",
            LossVariant::Cosine => "cosine",
            LossVariant::Kl => "kl",
            LossVariant::Infonce => "infonce",
        }
    }

    /// Whether this objective evaluates a discriminating (contrastive) term,
    /// which needs at least two samples per batch.
    pub fn needs_negatives(&self) -> bool {
        !matches!(self, LossVariant::AOnly | LossVariant::Mse | LossVariant::Cosine | LossVariant::Kl)
    }
}

/// All attack hyperparameters. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Patches per sample when generating prototypes (n).
    pub n_proto_patches: usize,
    /// Patches per sample per training epoch (m).
    pub m_train_patches: usize,
    /// Contrastive temperature.
    pub tau: f64,
    /// Weight of the discriminating loss.
    pub lambda1: f64,
    /// Weight of the aligning loss.
    pub lambda2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss_variant: LossVariant,
    /// Floor applied inside logarithms, reciprocals, and norms.
    pub epsilon_floor: f64,
    /// Proceed (with a warning) when a prototype bank was built against a
    /// different target fingerprint.
    pub allow_fingerprint_mismatch: bool,
    pub augment: AugmentPolicy,
    /// Target-side defense stack, applied in order.
    pub defenses: Vec<DefenseTransform>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            n_proto_patches: 10,
            m_train_patches: 5,
            tau: 0.07,
            lambda1: 1.0,
            lambda2: 1.0,
            epochs: 100,
            batch_size: 100,
            learning_rate: 0.001,
            seed: 0,
            loss_variant: LossVariant::Rda,
            epsilon_floor: 1e-8,
            allow_fingerprint_mismatch: false,
            augment: AugmentPolicy::default(),
            defenses: Vec::new(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_proto_patches < 1 {
            return Err(RdaError::config("n_proto_patches must be >= 1"));
        }
        if self.m_train_patches < 1 {
            return Err(RdaError::config("m_train_patches must be >= 1"));
        }
        if self.tau <= 0.0 {
            return Err(RdaError::config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(RdaError::config("lambda1 and lambda2 must be >= 0"));
        }
        if self.lambda1 == 0.0 && self.lambda2 == 0.0 {
            return Err(RdaError::config("lambda1 and lambda2 must not both be zero"));
        }
        if self.epsilon_floor <= 0.0 {
            return Err(RdaError::config("epsilon_floor must be > 0"));
        }
        if self.batch_size < 1 {
            return Err(RdaError::config("batch_size must be >= 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(RdaError::config("learning_rate must be > 0"));
        }
        self.augment.validate()?;
        Ok(())
    }

    /// Parse from TOML text; unknown keys are an error.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: AttackConfig =
            toml::from_str(text).map_err(|e| RdaError::config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }
}
