//! Proportional-odds cumulative-logit likelihood with additive family and
//! individual random intercepts, and the map between constrained parameters
//! and the unconstrained coordinates the sampler works in.
//!
//! Sign convention: `logit P(Y <= a) = alpha_a - x'beta - b`, so a positive
//! coefficient shifts mass toward higher categories.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{DesignMatrix, PanelDataset, PanelRecord};
use crate::distributions::{bridge_sd, expit, log_expit, phi_from_sd, BridgeParam};
use crate::error::{Error, Result};

/// Random-effects configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    /// Family effect `U* / phi_V` with `U* ~ Bridge(phi_U*)`, individual effect `V ~ Bridge(phi_V)`.
    ModifiedBridgeBridge,
    /// Normal family and individual effects.
    NormalNormal,
    /// Individual Bridge effect only.
    TwoLevelBridge,
    /// No random effects.
    Fixed,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::ModifiedBridgeBridge,
        ModelFamily::NormalNormal,
        ModelFamily::TwoLevelBridge,
        ModelFamily::Fixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::ModifiedBridgeBridge => "modified_bridge_bridge",
            ModelFamily::NormalNormal => "normal_normal",
            ModelFamily::TwoLevelBridge => "two_level_bridge",
            ModelFamily::Fixed => "fixed",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelFamily::ModifiedBridgeBridge => "Modified Bridge - Bridge",
            ModelFamily::NormalNormal => "Normal - Normal",
            ModelFamily::TwoLevelBridge => "Two-level Bridge",
            ModelFamily::Fixed => "Fixed",
        }
    }

    pub fn has_family_effect(self) -> bool {
        matches!(
            self,
            ModelFamily::ModifiedBridgeBridge | ModelFamily::NormalNormal
        )
    }

    pub fn has_individual_effect(self) -> bool {
        self != ModelFamily::Fixed
    }

    pub fn n_scale(self) -> usize {
        match self {
            ModelFamily::ModifiedBridgeBridge | ModelFamily::NormalNormal => 2,
            ModelFamily::TwoLevelBridge => 1,
            ModelFamily::Fixed => 0,
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown model family `{s}`")))
    }
}

/// Cauchy priors on thresholds and coefficients, half-Cauchy on random-effect
/// standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub coef_location: f64,
    pub coef_scale: f64,
    pub sd_scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            coef_location: 0.0,
            coef_scale: 5.0,
            sd_scale: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub categories: usize,
    pub priors: PriorSpec,
}

impl ModelSpec {
    pub fn new(family: ModelFamily, categories: usize) -> Result<Self> {
        if categories < 2 {
            return Err(Error::Invalid(format!(
                "need at least 2 outcome categories, got {categories}"
            )));
        }
        Ok(ModelSpec {
            family,
            categories,
            priors: PriorSpec::default(),
        })
    }
}

/// Random-effect scale parameters, by family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ReScale {
    ModifiedBridge { phi_ustar: BridgeParam, phi_v: BridgeParam },
    Normal { sigma_u: f64, sigma_v: f64 },
    TwoLevel { phi_v: BridgeParam },
    None,
}

impl ReScale {
    pub fn family(&self) -> ModelFamily {
        match self {
            ReScale::ModifiedBridge { .. } => ModelFamily::ModifiedBridgeBridge,
            ReScale::Normal { .. } => ModelFamily::NormalNormal,
            ReScale::TwoLevel { .. } => ModelFamily::TwoLevelBridge,
            ReScale::None => ModelFamily::Fixed,
        }
    }

    /// Divisor `e` applied to the family effect: `phi_V` for Bridge, 1 for Normal.
    pub fn family_divisor(&self) -> f64 {
        match self {
            ReScale::ModifiedBridge { phi_v, .. } => phi_v.phi(),
            _ => 1.0,
        }
    }

    /// Named constrained values in layout order.
    pub fn named_values(&self) -> Vec<(&'static str, f64)> {
        match *self {
            ReScale::ModifiedBridge { phi_ustar, phi_v } => {
                vec![("phi_ustar", phi_ustar.phi()), ("phi_v", phi_v.phi())]
            }
            ReScale::Normal { sigma_u, sigma_v } => vec![("sigma_u", sigma_u), ("sigma_v", sigma_v)],
            ReScale::TwoLevel { phi_v } => vec![("phi_v", phi_v.phi())],
            ReScale::None => vec![],
        }
    }
}

/// Conditional parameters and random effects on their natural scales.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub scale: ReScale,
    /// One entry per distinct family (sorted key order); empty without family effects.
    pub u_star: Vec<f64>,
    /// One entry per distinct individual (sorted key order); empty for the fixed model.
    pub v: Vec<f64>,
}

impl ParameterState {
    pub fn check(&self) -> Result<()> {
        check_thresholds(&self.alpha)?;
        if let ReScale::Normal { sigma_u, sigma_v } = self.scale {
            if !(sigma_u > 0.0 && sigma_v > 0.0) {
                return Err(Error::InvalidParameter(
                    "normal standard deviations must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Combined random effect for a record with the given family and individual positions.
    #[inline]
    pub fn effect(&self, family: usize, individual: usize) -> f64 {
        match self.scale {
            ReScale::ModifiedBridge { .. } | ReScale::Normal { .. } => {
                self.u_star[family] / self.scale.family_divisor() + self.v[individual]
            }
            ReScale::TwoLevel { .. } => self.v[individual],
            ReScale::None => 0.0,
        }
    }
}

fn check_thresholds(alpha: &[f64]) -> Result<()> {
    if alpha.iter().any(|a| !a.is_finite()) || alpha.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(format!(
            "thresholds must be finite and strictly increasing: {alpha:?}"
        )));
    }
    Ok(())
}

/// Category probabilities `P(Y = a)`, `a = 1..=A`, for linear predictor `eta`
/// and random effect `b`.
pub fn cumulative_probs(alpha: &[f64], eta: f64, b: f64) -> Result<Vec<f64>> {
    check_thresholds(alpha)?;
    let s = eta + b;
    let mut out = Vec::with_capacity(alpha.len() + 1);
    let mut prev = 0.0;
    for &a in alpha {
        let c = expit(a - s);
        out.push(c - prev);
        prev = c;
    }
    out.push(1.0 - prev);
    Ok(out)
}

/// Draws a 1-based category from the cumulative-logit model at `s = eta + b`.
pub fn sample_category<R: rand::Rng + ?Sized>(alpha: &[f64], s: f64, rng: &mut R) -> u32 {
    let u: f64 = rng.random();
    for (a, &cut) in alpha.iter().enumerate() {
        if u < expit(cut - s) {
            return a as u32 + 1;
        }
    }
    alpha.len() as u32 + 1
}

/// `log P(Y = y)` (1-based `y`) with its partial derivatives with respect to
/// the upper and lower cut points `alpha_y - s` and `alpha_{y-1} - s`.
#[inline]
pub(crate) fn category_log_prob(alpha: &[f64], s: f64, y: usize) -> (f64, f64, f64) {
    let last = alpha.len() + 1;
    if y == 1 {
        let t = alpha[0] - s;
        // d log expit(t) / dt = expit(-t)
        (log_expit(t), expit(-t), 0.0)
    } else if y == last {
        let t = alpha[last - 2] - s;
        (log_expit(-t), 0.0, -expit(t))
    } else {
        let hi = alpha[y - 1] - s;
        let lo = alpha[y - 2] - s;
        // expit(hi) - expit(lo) = expit(hi) expit(-lo) (1 - exp(lo - hi))
        let logp = log_expit(hi) + log_expit(-lo) + (-(lo - hi).exp_m1()).ln();
        let d_hi = (log_expit(hi) + log_expit(-hi) - logp).exp();
        let d_lo = -(log_expit(lo) + log_expit(-lo) - logp).exp();
        (logp, d_hi, d_lo)
    }
}

/// Sizes of the parameter blocks for one model/dataset pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub family: ModelFamily,
    pub n_alpha: usize,
    pub n_beta: usize,
    pub n_families: usize,
    pub n_individuals: usize,
}

impl Layout {
    pub fn new(family: ModelFamily, categories: usize, n_beta: usize, n_families: usize, n_individuals: usize) -> Self {
        Layout {
            family,
            n_alpha: categories - 1,
            n_beta,
            n_families,
            n_individuals,
        }
    }

    pub fn beta_offset(&self) -> usize {
        self.n_alpha
    }

    pub fn scale_offset(&self) -> usize {
        self.n_alpha + self.n_beta
    }

    pub fn u_offset(&self) -> usize {
        self.scale_offset() + self.family.n_scale()
    }

    pub fn n_u(&self) -> usize {
        if self.family.has_family_effect() {
            self.n_families
        } else {
            0
        }
    }

    pub fn v_offset(&self) -> usize {
        self.u_offset() + self.n_u()
    }

    pub fn n_v(&self) -> usize {
        if self.family.has_individual_effect() {
            self.n_individuals
        } else {
            0
        }
    }

    /// Count of non-random-effect coordinates.
    pub fn n_structural(&self) -> usize {
        self.u_offset()
    }

    pub fn dim(&self) -> usize {
        self.v_offset() + self.n_v()
    }

    /// Names of the unconstrained coordinates.
    pub fn coordinate_names(&self, beta_names: &[String], family_keys: &[String], individual_keys: &[String]) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        names.push("alpha[1]".to_string());
        for a in 2..=self.n_alpha {
            names.push(format!("log_gap[{a}]"));
        }
        names.extend(beta_names.iter().map(|b| format!("beta[{b}]")));
        match self.family {
            ModelFamily::ModifiedBridgeBridge => {
                names.push("log_sd_ustar".into());
                names.push("log_sd_v".into());
            }
            ModelFamily::NormalNormal => {
                names.push("log_sigma_u".into());
                names.push("log_sigma_v".into());
            }
            ModelFamily::TwoLevelBridge => names.push("log_sd_v".into()),
            ModelFamily::Fixed => {}
        }
        if self.n_u() > 0 {
            names.extend(family_keys.iter().map(|k| format!("u_star[{k}]")));
        }
        if self.n_v() > 0 {
            names.extend(individual_keys.iter().map(|k| format!("v[{k}]")));
        }
        names
    }

    /// Names of the constrained structural parameters, in [`structural_values`] order.
    pub fn structural_names(&self, beta_names: &[String]) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.n_alpha).map(|a| format!("alpha[{a}]")).collect();
        names.extend(beta_names.iter().map(|b| format!("beta[{b}]")));
        names.extend(
            ReScale::default_for(self.family)
                .named_values()
                .into_iter()
                .map(|(n, _)| n.to_string()),
        );
        names
    }
}

impl ReScale {
    fn default_for(family: ModelFamily) -> ReScale {
        let half = BridgeParam::new(0.5).expect("valid");
        match family {
            ModelFamily::ModifiedBridgeBridge => ReScale::ModifiedBridge {
                phi_ustar: half,
                phi_v: half,
            },
            ModelFamily::NormalNormal => ReScale::Normal {
                sigma_u: 1.0,
                sigma_v: 1.0,
            },
            ModelFamily::TwoLevelBridge => ReScale::TwoLevel { phi_v: half },
            ModelFamily::Fixed => ReScale::None,
        }
    }
}

/// Constrained structural values (`alpha`, `beta`, scale parameters).
pub fn structural_values(params: &ParameterState) -> Vec<f64> {
    let mut out = params.alpha.clone();
    out.extend_from_slice(&params.beta);
    out.extend(params.scale.named_values().into_iter().map(|(_, v)| v));
    out
}

pub fn to_unconstrained(params: &ParameterState, layout: &Layout) -> Result<Vec<f64>> {
    params.check()?;
    if params.alpha.len() != layout.n_alpha
        || params.beta.len() != layout.n_beta
        || params.scale.family() != layout.family
        || params.u_star.len() != layout.n_u()
        || params.v.len() != layout.n_v()
    {
        return Err(Error::Invalid(
            "parameter state does not match the model layout".into(),
        ));
    }
    let mut z = Vec::with_capacity(layout.dim());
    z.push(params.alpha[0]);
    z.extend(params.alpha.windows(2).map(|w| (w[1] - w[0]).ln()));
    z.extend_from_slice(&params.beta);
    match params.scale {
        ReScale::ModifiedBridge { phi_ustar, phi_v } => {
            z.push(bridge_sd(phi_ustar).ln());
            z.push(bridge_sd(phi_v).ln());
        }
        ReScale::Normal { sigma_u, sigma_v } => {
            z.push(sigma_u.ln());
            z.push(sigma_v.ln());
        }
        ReScale::TwoLevel { phi_v } => z.push(bridge_sd(phi_v).ln()),
        ReScale::None => {}
    }
    z.extend_from_slice(&params.u_star);
    z.extend_from_slice(&params.v);
    Ok(z)
}

/// Maps unconstrained coordinates to parameters. The log-Jacobian is taken
/// with respect to the scales the priors are stated on: thresholds and
/// random-effect standard deviations.
pub fn from_unconstrained(z: &[f64], layout: &Layout) -> Result<(ParameterState, f64)> {
    if z.len() != layout.dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.dim(),
            got: z.len(),
        });
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "unconstrained vector has non-finite entries".into(),
        ));
    }
    let mut log_jac = 0.0;
    let mut alpha = Vec::with_capacity(layout.n_alpha);
    alpha.push(z[0]);
    for &g in &z[1..layout.n_alpha] {
        log_jac += g;
        let last = *alpha.last().unwrap();
        alpha.push(last + g.exp());
    }
    let beta = z[layout.beta_offset()..layout.scale_offset()].to_vec();
    let s = &z[layout.scale_offset()..layout.u_offset()];
    log_jac += s.iter().sum::<f64>();
    let scale = match layout.family {
        ModelFamily::ModifiedBridgeBridge => ReScale::ModifiedBridge {
            phi_ustar: phi_from_sd(s[0].exp())?,
            phi_v: phi_from_sd(s[1].exp())?,
        },
        ModelFamily::NormalNormal => ReScale::Normal {
            sigma_u: s[0].exp(),
            sigma_v: s[1].exp(),
        },
        ModelFamily::TwoLevelBridge => ReScale::TwoLevel {
            phi_v: phi_from_sd(s[0].exp())?,
        },
        ModelFamily::Fixed => ReScale::None,
    };
    let params = ParameterState {
        alpha,
        beta,
        scale,
        u_star: z[layout.u_offset()..layout.v_offset()].to_vec(),
        v: z[layout.v_offset()..].to_vec(),
    };
    check_thresholds(&params.alpha)?;
    Ok((params, log_jac))
}

/// `d phi / d log(sd)` for the Bridge map `phi = (1 + 3 sd^2 / pi^2)^{-1/2}`.
pub(crate) fn dphi_dlogsd(phi: f64, sd: f64) -> f64 {
    -phi.powi(3) * 3.0 * sd * sd / (PI * PI)
}

/// Records re-indexed by dense family/individual positions, aligned with a
/// design matrix. Family and individual positions follow sorted key order.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub(crate) outcome: Vec<u32>,
    pub(crate) family: Vec<usize>,
    pub(crate) individual: Vec<usize>,
    pub(crate) design: DesignMatrix,
    pub(crate) categories: usize,
    family_keys: Vec<String>,
    individual_keys: Vec<String>,
    family_pos: BTreeMap<String, usize>,
    individual_pos: BTreeMap<String, usize>,
}

impl ModelData {
    pub fn new(ds: &PanelDataset, design: DesignMatrix) -> Result<Self> {
        if design.n_rows() != ds.n_records() {
            return Err(Error::DimensionMismatch {
                expected: ds.n_records(),
                got: design.n_rows(),
            });
        }
        let family_keys: Vec<String> = ds.family_index().keys().cloned().collect();
        let individual_keys: Vec<String> = ds.individual_index().keys().cloned().collect();
        let family_pos: BTreeMap<String, usize> = family_keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        let individual_pos: BTreeMap<String, usize> = individual_keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        let records = ds.records();
        Ok(ModelData {
            outcome: records.iter().map(|r| r.outcome).collect(),
            family: records.iter().map(|r| family_pos[&r.family_id]).collect(),
            individual: records.iter().map(|r| individual_pos[&r.individual_id]).collect(),
            design,
            categories: ds.categories(),
            family_keys,
            individual_keys,
            family_pos,
            individual_pos,
        })
    }

    pub fn n_records(&self) -> usize {
        self.outcome.len()
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn family_keys(&self) -> &[String] {
        &self.family_keys
    }

    pub fn individual_keys(&self) -> &[String] {
        &self.individual_keys
    }

    pub fn outcomes(&self) -> &[u32] {
        &self.outcome
    }

    pub fn layout(&self, family: ModelFamily) -> Layout {
        Layout::new(
            family,
            self.categories,
            self.design.n_cols(),
            self.family_keys.len(),
            self.individual_keys.len(),
        )
    }

    pub fn coordinate_names(&self, family: ModelFamily) -> Vec<String> {
        self.layout(family).coordinate_names(
            self.design.column_names(),
            &self.family_keys,
            &self.individual_keys,
        )
    }

    #[inline]
    pub(crate) fn eta(&self, r: usize, beta: &[f64]) -> f64 {
        self.design.row(r).iter().zip(beta).map(|(x, b)| x * b).sum()
    }

    /// Log-likelihood of record `r` given the parameters.
    #[inline]
    pub fn record_loglik_at(&self, r: usize, params: &ParameterState) -> f64 {
        let s = self.eta(r, &params.beta) + params.effect(self.family[r], self.individual[r]);
        category_log_prob(&params.alpha, s, self.outcome[r] as usize).0
    }

    /// Log-likelihood of a record identified by its keys.
    pub fn record_loglik(&self, record: &PanelRecord, x_row: &[f64], params: &ParameterState) -> Result<f64> {
        if record.outcome < 1 || record.outcome as usize > params.alpha.len() + 1 {
            return Err(Error::OutcomeOutOfRange {
                row: 0,
                value: record.outcome as i64,
                categories: params.alpha.len() + 1,
            });
        }
        let b = match params.scale.family() {
            ModelFamily::Fixed => 0.0,
            family => {
                let i = *self
                    .individual_pos
                    .get(&record.individual_id)
                    .ok_or_else(|| Error::UnknownKey {
                        kind: "individual",
                        key: record.individual_id.clone(),
                    })?;
                let f = if family.has_family_effect() {
                    *self
                        .family_pos
                        .get(&record.family_id)
                        .ok_or_else(|| Error::UnknownKey {
                            kind: "family",
                            key: record.family_id.clone(),
                        })?
                } else {
                    0
                };
                params.effect(f, i)
            }
        };
        let eta: f64 = x_row.iter().zip(&params.beta).map(|(x, b)| x * b).sum();
        Ok(category_log_prob(&params.alpha, eta + b, record.outcome as usize).0)
    }

    /// Sum of record log-likelihoods in record order.
    pub fn dataset_loglik(&self, params: &ParameterState) -> f64 {
        (0..self.n_records())
            .map(|r| self.record_loglik_at(r, params))
            .sum()
    }
}
