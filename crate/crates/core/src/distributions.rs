//! Probability kernels used by the model: Bridge and Modified Bridge laws for
//! the logit link, Normal, Cauchy and half-Cauchy priors, and the standard
//! logistic function.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Above this `|phi * x|` the hyperbolic terms are evaluated in rearranged form.
const COSH_GUARD: f64 = 30.0;

/// Scale parameter of a Bridge law, strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct BridgeParam(f64);

impl BridgeParam {
    pub fn new(phi: f64) -> Result<Self> {
        if phi > 0.0 && phi < 1.0 {
            Ok(BridgeParam(phi))
        } else {
            Err(Error::InvalidParameter(format!(
                "Bridge phi must lie in (0, 1), got {phi}"
            )))
        }
    }

    #[inline]
    pub fn phi(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for BridgeParam {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        BridgeParam::new(v)
    }
}

impl From<BridgeParam> for f64 {
    fn from(p: BridgeParam) -> f64 {
        p.0
    }
}

/// Law of `Y / phi_z` where `Y ~ Bridge(phi_y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModifiedBridgeParam {
    pub phi_y: BridgeParam,
    pub phi_z: BridgeParam,
}

impl ModifiedBridgeParam {
    pub fn new(phi_y: f64, phi_z: f64) -> Result<Self> {
        Ok(ModifiedBridgeParam {
            phi_y: BridgeParam::new(phi_y)?,
            phi_z: BridgeParam::new(phi_z)?,
        })
    }
}

/// `log(cosh(y) + c)` for `c > -1`, stable for large `|y|`.
#[inline]
fn log_cosh_plus(y: f64, c: f64) -> f64 {
    let a = y.abs();
    if a > COSH_GUARD {
        let e = (-a).exp();
        a - LN_2 + (e * e + 2.0 * c * e).ln_1p()
    } else {
        (a.cosh() + c).ln()
    }
}

/// `sinh(y) / (cosh(y) + c)`, stable for large `|y|`.
#[inline]
fn sinh_over_cosh_plus(y: f64, c: f64) -> f64 {
    let a = y.abs();
    if a > COSH_GUARD {
        let e = (-a).exp();
        y.signum() * (1.0 - e * e) / (1.0 + e * e + 2.0 * c * e)
    } else {
        y.sinh() / (y.cosh() + c)
    }
}

pub fn bridge_logpdf(x: f64, phi: BridgeParam) -> f64 {
    let p = phi.0;
    (p * PI).sin().ln() - LN_2PI - log_cosh_plus(p * x, (p * PI).cos())
}

pub fn bridge_dlogpdf_dx(x: f64, phi: BridgeParam) -> f64 {
    let p = phi.0;
    -p * sinh_over_cosh_plus(p * x, (p * PI).cos())
}

/// Derivative of the Bridge log-density with respect to `phi`.
pub fn bridge_dlogpdf_dphi(x: f64, phi: BridgeParam) -> f64 {
    let p = phi.0;
    let (s, c) = (p * PI).sin_cos();
    let y = p * x;
    // d/dphi log(cosh(phi x) + cos(phi pi)) = (x sinh - pi sin) / (cosh + cos)
    let denom_log = log_cosh_plus(y, c);
    let sinh_term = x * sinh_over_cosh_plus(y, c);
    let sin_term = PI * s * (-denom_log).exp();
    PI * c / s - sinh_term + sin_term
}

pub fn bridge_cdf(x: f64, phi: BridgeParam) -> f64 {
    let p = phi.0;
    0.5 + ((p * x / 2.0).tanh() * (p * PI / 2.0).tan()).atan() / (PI * p)
}

pub fn bridge_quantile(prob: f64, phi: BridgeParam) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile probability must lie in (0, 1), got {prob}"
        )));
    }
    let p = phi.0;
    let ratio = (PI * p * (prob - 0.5)).tan() / (PI * p / 2.0).tan();
    Ok(2.0 / p * ratio.atanh())
}

/// Draws `count` i.i.d. Bridge variates by inversion.
pub fn bridge_sample<R: Rng + ?Sized>(rng: &mut R, phi: BridgeParam, count: usize) -> Vec<f64> {
    (0..count).map(|_| bridge_draw(rng, phi)).collect()
}

pub fn bridge_draw<R: Rng + ?Sized>(rng: &mut R, phi: BridgeParam) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            // u == 0 is the only value outside the open interval
            return bridge_quantile(u, phi).expect("u in (0, 1)");
        }
    }
}

pub fn bridge_variance(phi: BridgeParam) -> f64 {
    PI * PI / 3.0 * (phi.0.powi(-2) - 1.0)
}

pub fn bridge_sd(phi: BridgeParam) -> f64 {
    bridge_variance(phi).sqrt()
}

/// Inverse of [`bridge_sd`].
pub fn phi_from_sd(sd: f64) -> Result<BridgeParam> {
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "standard deviation must be positive and finite, got {sd}"
        )));
    }
    let phi = (1.0 + 3.0 * sd * sd / (PI * PI)).sqrt().recip();
    // Very small sd rounds phi to 1.0; keep it inside the open interval.
    BridgeParam::new(phi.min(1.0 - f64::EPSILON / 2.0))
}

pub fn modified_bridge_logpdf(x: f64, params: ModifiedBridgeParam) -> f64 {
    let z = params.phi_z.0;
    z.ln() + bridge_logpdf(z * x, params.phi_y)
}

pub fn modified_bridge_dlogpdf_dx(x: f64, params: ModifiedBridgeParam) -> f64 {
    let z = params.phi_z.0;
    z * bridge_dlogpdf_dx(z * x, params.phi_y)
}

pub fn modified_bridge_variance(params: ModifiedBridgeParam) -> f64 {
    bridge_variance(params.phi_y) / (params.phi_z.0 * params.phi_z.0)
}

pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

pub fn normal_dlogpdf_dx(x: f64, mean: f64, sd: f64) -> f64 {
    -(x - mean) / (sd * sd)
}

/// Derivative of the Normal log-density with respect to its standard deviation.
pub fn normal_dlogpdf_dsd(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (z * z - 1.0) / sd
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Cauchy,
    HalfCauchy,
    Normal,
}

/// Log-density of a location/scale prior. The half-Cauchy is the Cauchy folded
/// at `location`; outside its support the result is `-inf`.
pub fn prior_logpdf(kind: PriorKind, x: f64, location: f64, scale: f64) -> f64 {
    match kind {
        PriorKind::Cauchy => cauchy_logpdf(x, location, scale),
        PriorKind::HalfCauchy => {
            if x < location {
                f64::NEG_INFINITY
            } else {
                LN_2 + cauchy_logpdf(x, location, scale)
            }
        }
        PriorKind::Normal => normal_logpdf(x, location, scale),
    }
}

pub fn prior_dlogpdf_dx(kind: PriorKind, x: f64, location: f64, scale: f64) -> f64 {
    match kind {
        PriorKind::Cauchy | PriorKind::HalfCauchy => {
            let d = x - location;
            -2.0 * d / (scale * scale + d * d)
        }
        PriorKind::Normal => normal_dlogpdf_dx(x, location, scale),
    }
}

fn cauchy_logpdf(x: f64, location: f64, scale: f64) -> f64 {
    let z = (x - location) / scale;
    -(PI * scale).ln() - z.mul_add(z, 1.0).ln()
}

/// Standard logistic CDF.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(expit(x))`, accurate in both tails.
#[inline]
pub fn log_expit(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}
