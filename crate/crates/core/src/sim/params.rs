use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-clone efficiency/resistance pairs, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicParams {
    pub birth_eff: f64,
    pub birth_res: f64,
    pub success_eff: f64,
    pub success_res: f64,
    pub lifespan_eff: f64,
    pub lifespan_res: f64,
}

impl IntrinsicParams {
    pub fn new(
        birth_eff: f64,
        birth_res: f64,
        success_eff: f64,
        success_res: f64,
        lifespan_eff: f64,
        lifespan_res: f64,
    ) -> Result<Self> {
        let p = Self { birth_eff, birth_res, success_eff, success_res, lifespan_eff, lifespan_res };
        p.validate()?;
        Ok(p)
    }

    /// Efficiency 0.2/0.9/0.1 and resistance 0.5 for birth, success and lifespan.
    pub fn reference() -> Self {
        Self {
            birth_eff: 0.2,
            birth_res: 0.5,
            success_eff: 0.9,
            success_res: 0.5,
            lifespan_eff: 0.1,
            lifespan_res: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::NAMES.iter().zip(self.to_array()) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub const NAMES: [&'static str; 6] =
        ["birth_eff", "birth_res", "success_eff", "success_res", "lifespan_eff", "lifespan_res"];

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.birth_eff,
            self.birth_res,
            self.success_eff,
            self.success_res,
            self.lifespan_eff,
            self.lifespan_res,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            birth_eff: a[0],
            birth_res: a[1],
            success_eff: a[2],
            success_res: a[3],
            lifespan_eff: a[4],
            lifespan_res: a[5],
        }
    }
}

/// Generalized exponential kernel `scale * exp(-(1/shape) (w/width)^shape)`,
/// optionally truncated to zero at `cutoff`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub scale: f64,
    pub width: f64,
    pub shape: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
}

impl KernelParams {
    pub const DENSITY_CUTOFF: f64 = 1.517;

    pub fn density() -> Self {
        Self { scale: 1.0, width: 1.0, shape: 2.0, cutoff: Some(Self::DENSITY_CUTOFF) }
    }

    pub fn rate() -> Self {
        Self { scale: 1.0, width: 1.0, shape: 2.0, cutoff: None }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = self.scale > 0.0
            && self.width > 0.0
            && self.shape > 0.0
            && self.cutoff.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{what} kernel must have positive scale, width, shape and cutoff: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateKernels {
    pub density: KernelParams,
    pub birth: KernelParams,
    /// Only `width` and `shape` are used; success is a probability.
    pub success: KernelParams,
    pub lifespan: KernelParams,
}

impl Default for RateKernels {
    fn default() -> Self {
        Self {
            density: KernelParams::density(),
            birth: KernelParams::rate(),
            success: KernelParams::rate(),
            lifespan: KernelParams::rate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    pub mutation_probability: f64,
    #[serde(default = "default_mutation_increase")]
    pub mutation_increase: f64,
    #[serde(default)]
    pub kernels: RateKernels,
    #[serde(default)]
    pub max_birth_events: Option<u64>,
    #[serde(default)]
    pub max_sim_time: Option<f64>,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_mutation_increase() -> f64 {
    0.1
}

impl Default for GlobalParams {
    fn default() -> Self {
        Self {
            mutation_probability: 0.01,
            mutation_increase: default_mutation_increase(),
            kernels: RateKernels::default(),
            max_birth_events: None,
            max_sim_time: Some(61.5),
            rng_seed: 0,
        }
    }
}

impl GlobalParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mutation_probability) {
            return Err(Error::InvalidParameter(format!(
                "mutation_probability = {} outside [0, 1]",
                self.mutation_probability
            )));
        }
        if !(self.mutation_increase >= 0.0) {
            return Err(Error::InvalidParameter("mutation_increase must be >= 0".into()));
        }
        if self.max_birth_events.is_none() && self.max_sim_time.is_none() {
            return Err(Error::InvalidParameter(
                "at least one of max_birth_events / max_sim_time must be set".into(),
            ));
        }
        if self.max_sim_time.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::InvalidParameter("max_sim_time must be positive".into()));
        }
        let k = &self.kernels;
        k.density.validate("density")?;
        if k.density.cutoff.is_none() {
            return Err(Error::InvalidParameter("density kernel needs a cutoff".into()));
        }
        k.birth.validate("birth")?;
        k.success.validate("success")?;
        k.lifespan.validate("lifespan")?;
        Ok(())
    }
}
