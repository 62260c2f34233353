//! Distance and density kernels that drive the event rates.

use rand::Rng;

use super::params::{IntrinsicParams, KernelParams};
use crate::error::{Error, Result};

/// Truncated generalized-Gaussian distance weight.
pub fn kernel_rho(w: f64, k: &KernelParams) -> f64 {
    debug_assert!(w >= 0.0);
    match k.cutoff {
        Some(cut) if w >= cut => 0.0,
        _ => k.scale * (-(w / k.width).powf(k.shape) / k.shape).exp(),
    }
}

/// `exp(-(1/shape) (rho / (resistance * width))^shape)`.
///
/// Zero density maps to 1 for any resistance; zero resistance with positive
/// density maps to 0.
fn resisted(rho: f64, resistance: f64, k: &KernelParams) -> f64 {
    if rho <= 0.0 {
        return 1.0;
    }
    if resistance <= 0.0 {
        return 0.0;
    }
    let x = rho / (resistance * k.width);
    if k.shape == 2.0 {
        (-0.5 * x * x).exp()
    } else {
        (-x.powf(k.shape) / k.shape).exp()
    }
}

pub fn success_probability(p: &IntrinsicParams, rho: f64, k: &KernelParams) -> f64 {
    (p.success_eff * resisted(rho, p.success_res, k)).clamp(0.0, 1.0)
}

pub fn birth_rate(p: &IntrinsicParams, rho: f64, k: &KernelParams) -> f64 {
    p.birth_eff * k.scale * resisted(rho, p.birth_res, k)
}

/// Inverse lifespan. May be `+inf` when the lifespan kernel underflows.
pub fn death_rate(p: &IntrinsicParams, rho: f64, k: &KernelParams) -> Result<f64> {
    if !(p.lifespan_eff > 0.0) || !(k.scale > 0.0) {
        return Err(Error::ImmortalParameterization);
    }
    Ok(1.0 / (k.scale * p.lifespan_eff * resisted(rho, p.lifespan_res, k)))
}

/// Draws from the uniform density on `(0, min(x0 + s, 1))`.
pub fn mutate_intrinsic<R: Rng + ?Sized>(x0: f64, s: f64, rng: &mut R) -> f64 {
    let upper = (x0 + s).min(1.0);
    loop {
        let u: f64 = rng.random();
        let x = u * upper;
        if x > 0.0 {
            return x;
        }
    }
}

pub fn mutate_all<R: Rng + ?Sized>(p: &IntrinsicParams, s: f64, rng: &mut R) -> IntrinsicParams {
    let a = p.to_array();
    IntrinsicParams::from_array(a.map(|x| mutate_intrinsic(x, s, rng)))
}
