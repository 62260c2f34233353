use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FEATURE_COUNT;
use crate::nn::GeluKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Embedding block, three GAT layers, pooled head.
    #[default]
    Vanilla,
    /// GraphNorm after every GAT activation.
    AllNorm,
    /// Learned global graph feature concatenated to every GAT input.
    Global,
    /// Both extensions.
    GlobalNorm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Vanilla, Variant::AllNorm, Variant::Global, Variant::GlobalNorm];

    pub fn has_layer_norm(self) -> bool {
        matches!(self, Variant::AllNorm | Variant::GlobalNorm)
    }

    pub fn has_global(self) -> bool {
        matches!(self, Variant::Global | Variant::GlobalNorm)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::AllNorm => "all_norm",
            Variant::Global => "global",
            Variant::GlobalNorm => "global_norm",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d: usize,
    pub d_prime: usize,
    pub heads: usize,
    pub variant: Variant,
    pub global_dim: usize,
    pub dropout: f64,
    /// Feature IDs fed to the embedding block, in column order.
    pub feature_mask: Vec<usize>,
    pub gat_layers: usize,
    pub gelu: GeluKind,
    pub init_seed: u64,
    /// Skips the per-layer GraphNorm of the normalized variants (parity testing).
    pub norm_bypass: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            d_prime: 64,
            heads: 1,
            variant: Variant::Vanilla,
            global_dim: 64,
            dropout: 0.15,
            feature_mask: (0..FEATURE_COUNT).collect(),
            gat_layers: 3,
            gelu: GeluKind::Tanh,
            init_seed: 0,
            norm_bypass: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.d_prime == 0 || self.gat_layers == 0 {
            return bad(format!("widths and layer count must be positive: d={} d'={} layers={}", self.d, self.d_prime, self.gat_layers));
        }
        if self.heads == 0 || self.d_prime % self.heads != 0 {
            return bad(format!("d'={} is not divisible by heads={}", self.d_prime, self.heads));
        }
        if self.variant.has_global() && self.global_dim == 0 {
            return bad("global variants need global_dim > 0".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.feature_mask.is_empty() {
            return bad("feature_mask must not be empty".into());
        }
        let mut seen = [false; FEATURE_COUNT];
        for &f in &self.feature_mask {
            if f >= FEATURE_COUNT || std::mem::replace(&mut seen[f], true) {
                return bad(format!("feature_mask {:?} must hold distinct IDs 0-{}", self.feature_mask, FEATURE_COUNT - 1));
            }
        }
        Ok(())
    }

    /// Short label such as `vanilla/4-head`.
    pub fn label(&self) -> String {
        format!("{}/{}-head", self.variant.name(), self.heads)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_period: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Also measure training accuracy in inference mode after every epoch.
    pub eval_train: bool,
    /// Fit a per-feature standardization on the training split before the
    /// first epoch. Off by default: on small datasets the raw scales keep the
    /// tiny kinetic columns quiet, and standardizing them invites overfitting.
    pub standardize_inputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, base_lr: 1e-3, decay_factor: 0.5, decay_period: 33, batch_size: 32, seed: 0, eval_train: true, standardize_inputs: false }
    }
}

impl TrainConfig {
    /// The short schedule used for the architecture comparison.
    pub fn short() -> Self {
        Self { epochs: 25, decay_factor: 0.4, decay_period: 5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.decay_period == 0 {
            return Err(Error::Config(format!(
                "epochs, batch_size and decay_period must be positive: {} / {} / {}",
                self.epochs, self.batch_size, self.decay_period
            )));
        }
        if !(self.base_lr > 0.0) || !(self.decay_factor > 0.0) {
            return Err(Error::Config("learning rate and decay factor must be positive".into()));
        }
        Ok(())
    }
}
