//! Joint log posterior over the unconstrained coordinates, with an analytic
//! gradient.
//!
//! The value is assembled from four terms that are also exposed separately:
//! the conditional log-likelihood, the random-effects log-prior, the
//! parameter log-priors, and the log-Jacobian of the coordinate transform.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distributions::{
    bridge_dlogpdf_dphi, bridge_dlogpdf_dx, bridge_logpdf, normal_dlogpdf_dsd, normal_dlogpdf_dx,
    normal_logpdf, phi_from_sd, prior_dlogpdf_dx, prior_logpdf, PriorKind,
};
use crate::error::{Error, Result};
use crate::model::{category_log_prob, dphi_dlogsd, Layout, ModelData, ModelFamily, ModelSpec};
use crate::sampler::{run_chains, LogDensity, PosteriorDraws, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PosteriorTerms {
    pub loglik: f64,
    pub re_prior: f64,
    pub param_prior: f64,
    pub log_jacobian: f64,
}

impl PosteriorTerms {
    pub fn total(&self) -> f64 {
        self.loglik + self.re_prior + self.param_prior + self.log_jacobian
    }
}

/// Immutable posterior for one model fitted to one dataset.
#[derive(Debug, Clone)]
pub struct PosteriorTarget {
    spec: ModelSpec,
    layout: Layout,
    data: Arc<ModelData>,
}

/// Scale parameters decoded from the log-scale coordinates.
struct Scales {
    /// Random-effect law parameter per block: phi for Bridge, sigma for Normal.
    ustar: f64,
    v: f64,
    /// Standard deviation per block (the quantity the half-Cauchy prior sits on).
    sd_ustar: f64,
    sd_v: f64,
}

impl PosteriorTarget {
    pub fn new(spec: ModelSpec, data: Arc<ModelData>) -> Result<Self> {
        if spec.categories != data.categories() {
            return Err(Error::Invalid(format!(
                "model has {} categories but the data has {}",
                spec.categories,
                data.categories()
            )));
        }
        let layout = data.layout(spec.family);
        Ok(PosteriorTarget { spec, layout, data })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn data(&self) -> &Arc<ModelData> {
        &self.data
    }

    pub fn dimension(&self) -> usize {
        self.layout.dim()
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: z.len(),
            });
        }
        Ok(())
    }

    pub fn log_posterior(&self, z: &[f64]) -> Result<f64> {
        Ok(self.terms(z)?.total())
    }

    pub fn terms(&self, z: &[f64]) -> Result<PosteriorTerms> {
        self.check_dim(z)?;
        Ok(self.evaluate(z, None))
    }

    pub fn grad_log_posterior(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        let mut g = vec![0.0; z.len()];
        self.evaluate(z, Some(&mut g));
        Ok(g)
    }

    /// Value and gradient in one pass.
    pub fn log_posterior_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(z)?;
        let mut g = vec![0.0; z.len()];
        let t = self.evaluate(z, Some(&mut g));
        Ok((t.total(), g))
    }

    fn scales(&self, z: &[f64]) -> Option<Scales> {
        let s = &z[self.layout.scale_offset()..self.layout.u_offset()];
        let bridge = |w: f64| phi_from_sd(w.exp()).map(|p| p.phi()).unwrap_or(f64::NAN);
        match self.spec.family {
            ModelFamily::ModifiedBridgeBridge => Some(Scales {
                ustar: bridge(s[0]),
                v: bridge(s[1]),
                sd_ustar: s[0].exp(),
                sd_v: s[1].exp(),
            }),
            ModelFamily::NormalNormal => Some(Scales {
                ustar: s[0].exp(),
                v: s[1].exp(),
                sd_ustar: s[0].exp(),
                sd_v: s[1].exp(),
            }),
            ModelFamily::TwoLevelBridge => Some(Scales {
                ustar: f64::NAN,
                v: bridge(s[0]),
                sd_ustar: f64::NAN,
                sd_v: s[0].exp(),
            }),
            ModelFamily::Fixed => None,
        }
    }

    /// Core evaluation. `grad`, when given, must be zeroed and receives the
    /// gradient of the total.
    fn evaluate(&self, z: &[f64], mut grad: Option<&mut [f64]>) -> PosteriorTerms {
        let layout = &self.layout;
        let family = self.spec.family;
        let priors = &self.spec.priors;
        let n_alpha = layout.n_alpha;

        let mut alpha = Vec::with_capacity(n_alpha);
        alpha.push(z[0]);
        for k in 1..n_alpha {
            alpha.push(alpha[k - 1] + z[k].exp());
        }
        let beta = &z[layout.beta_offset()..layout.scale_offset()];
        let scales = self.scales(z);
        let u = &z[layout.u_offset()..layout.v_offset()];
        let v = &z[layout.v_offset()..];
        let divisor = match (family, &scales) {
            (ModelFamily::ModifiedBridgeBridge, Some(s)) => s.v,
            _ => 1.0,
        };

        let mut terms = PosteriorTerms::default();
        let mut g_alpha = vec![0.0; n_alpha];
        // d/d(law parameter) accumulators for the two random-effect blocks
        let mut g_law_u = 0.0;
        let mut g_law_v = 0.0;

        // Likelihood
        let data = &*self.data;
        let want_grad = grad.is_some();
        let mut g_beta = vec![0.0; beta.len()];
        let mut g_u = vec![0.0; u.len()];
        let mut g_v = vec![0.0; v.len()];
        for r in 0..data.n_records() {
            let x = data.design.row(r);
            let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            let (f, i) = (data.family[r], data.individual[r]);
            let b = match family {
                ModelFamily::ModifiedBridgeBridge | ModelFamily::NormalNormal => {
                    u[f] / divisor + v[i]
                }
                ModelFamily::TwoLevelBridge => v[i],
                ModelFamily::Fixed => 0.0,
            };
            let y = data.outcome[r] as usize;
            let (lp, d_hi, d_lo) = category_log_prob(&alpha, eta + b, y);
            terms.loglik += lp;
            if want_grad {
                if y <= n_alpha {
                    g_alpha[y - 1] += d_hi;
                }
                if y >= 2 {
                    g_alpha[y - 2] += d_lo;
                }
                let d_s = -(d_hi + d_lo);
                for (g, xk) in g_beta.iter_mut().zip(x) {
                    *g += d_s * xk;
                }
                match family {
                    ModelFamily::ModifiedBridgeBridge => {
                        g_u[f] += d_s / divisor;
                        g_v[i] += d_s;
                        g_law_v -= d_s * u[f] / (divisor * divisor);
                    }
                    ModelFamily::NormalNormal => {
                        g_u[f] += d_s;
                        g_v[i] += d_s;
                    }
                    ModelFamily::TwoLevelBridge => g_v[i] += d_s,
                    ModelFamily::Fixed => {}
                }
            }
        }

        // Random-effects prior
        if let Some(s) = &scales {
            match family {
                ModelFamily::ModifiedBridgeBridge | ModelFamily::TwoLevelBridge => {
                    let phi_v = crate::distributions::BridgeParam::new(s.v);
                    let phi_u = crate::distributions::BridgeParam::new(s.ustar);
                    if let (ModelFamily::ModifiedBridgeBridge, Ok(pu)) = (family, phi_u) {
                        for (k, &x) in u.iter().enumerate() {
                            terms.re_prior += bridge_logpdf(x, pu);
                            if want_grad {
                                g_u[k] += bridge_dlogpdf_dx(x, pu);
                                g_law_u += bridge_dlogpdf_dphi(x, pu);
                            }
                        }
                    } else if family == ModelFamily::ModifiedBridgeBridge {
                        terms.re_prior = f64::NEG_INFINITY;
                    }
                    match phi_v {
                        Ok(pv) => {
                            for (k, &x) in v.iter().enumerate() {
                                terms.re_prior += bridge_logpdf(x, pv);
                                if want_grad {
                                    g_v[k] += bridge_dlogpdf_dx(x, pv);
                                    g_law_v += bridge_dlogpdf_dphi(x, pv);
                                }
                            }
                        }
                        Err(_) => terms.re_prior = f64::NEG_INFINITY,
                    }
                }
                ModelFamily::NormalNormal => {
                    for (k, &x) in u.iter().enumerate() {
                        terms.re_prior += normal_logpdf(x, 0.0, s.ustar);
                        if want_grad {
                            g_u[k] += normal_dlogpdf_dx(x, 0.0, s.ustar);
                            g_law_u += normal_dlogpdf_dsd(x, 0.0, s.ustar);
                        }
                    }
                    for (k, &x) in v.iter().enumerate() {
                        terms.re_prior += normal_logpdf(x, 0.0, s.v);
                        if want_grad {
                            g_v[k] += normal_dlogpdf_dx(x, 0.0, s.v);
                            g_law_v += normal_dlogpdf_dsd(x, 0.0, s.v);
                        }
                    }
                }
                ModelFamily::Fixed => {}
            }
        }

        // Parameter priors
        let (loc, scale) = (priors.coef_location, priors.coef_scale);
        for (k, &a) in alpha.iter().enumerate() {
            terms.param_prior += prior_logpdf(PriorKind::Cauchy, a, loc, scale);
            if want_grad {
                g_alpha[k] += prior_dlogpdf_dx(PriorKind::Cauchy, a, loc, scale);
            }
        }
        for (k, &b) in beta.iter().enumerate() {
            terms.param_prior += prior_logpdf(PriorKind::Cauchy, b, loc, scale);
            if want_grad {
                g_beta[k] += prior_dlogpdf_dx(PriorKind::Cauchy, b, loc, scale);
            }
        }
        let sd_prior = |sd: f64| prior_logpdf(PriorKind::HalfCauchy, sd, 0.0, priors.sd_scale);
        let sd_prior_d = |sd: f64| prior_dlogpdf_dx(PriorKind::HalfCauchy, sd, 0.0, priors.sd_scale);

        // Jacobian
        terms.log_jacobian = z[1..n_alpha].iter().sum::<f64>()
            + z[layout.scale_offset()..layout.u_offset()].iter().sum::<f64>();

        let scale_off = layout.scale_offset();
        let mut g_scale = [0.0f64; 2];
        if let Some(s) = &scales {
            let blocks: &[(f64, f64, f64)] = match family {
                ModelFamily::ModifiedBridgeBridge | ModelFamily::NormalNormal => &[
                    (s.sd_ustar, s.ustar, g_law_u),
                    (s.sd_v, s.v, g_law_v),
                ],
                ModelFamily::TwoLevelBridge => &[(s.sd_v, s.v, g_law_v)],
                ModelFamily::Fixed => &[],
            };
            for (k, &(sd, law, g_law)) in blocks.iter().enumerate() {
                terms.param_prior += sd_prior(sd);
                // chain rule to the log-sd coordinate, plus the Jacobian term
                let dlaw_dw = if family == ModelFamily::NormalNormal {
                    sd
                } else {
                    dphi_dlogsd(law, sd)
                };
                g_scale[k] = g_law * dlaw_dw + sd_prior_d(sd) * sd + 1.0;
            }
        }

        if let Some(g) = grad.as_deref_mut() {
            // alpha_k = z_0 + sum_{j=1..k} exp(z_j)
            let mut tail = 0.0;
            for k in (0..n_alpha).rev() {
                tail += g_alpha[k];
                if k == 0 {
                    g[0] = tail;
                } else {
                    g[k] = tail * z[k].exp() + 1.0;
                }
            }
            g[layout.beta_offset()..scale_off].copy_from_slice(&g_beta);
            let n_scale = family.n_scale();
            g[scale_off..scale_off + n_scale].copy_from_slice(&g_scale[..n_scale]);
            g[layout.u_offset()..layout.v_offset()].copy_from_slice(&g_u);
            g[layout.v_offset()..].copy_from_slice(&g_v);
        }
        terms
    }
}

impl LogDensity for PosteriorTarget {
    fn dim(&self) -> usize {
        self.dimension()
    }

    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.evaluate(position, Some(grad)).total()
    }
}

/// Coordinates the sampler moves in. Draws are always reported in the
/// centered coordinates of [`PosteriorTarget`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    Centered,
    /// Each random effect divided by the standard deviation of its block.
    #[default]
    NonCentered,
}

/// The same posterior seen through `u = sd * xi`, with the Jacobian
/// `n * log(sd)` per block. Weakly identified random effects no longer form a
/// funnel with their scale parameter.
pub struct NonCentered<'a> {
    target: &'a PosteriorTarget,
    /// (log-scale coordinate, random-effect coordinates) per block.
    blocks: Vec<(usize, Range<usize>)>,
}

impl<'a> NonCentered<'a> {
    pub fn new(target: &'a PosteriorTarget) -> Self {
        let l = target.layout();
        let s = l.scale_offset();
        let u = l.u_offset()..l.v_offset();
        let v = l.v_offset()..l.dim();
        let blocks = match l.family {
            ModelFamily::ModifiedBridgeBridge | ModelFamily::NormalNormal => vec![(s, u), (s + 1, v)],
            ModelFamily::TwoLevelBridge => vec![(s, v)],
            ModelFamily::Fixed => vec![],
        };
        NonCentered { target, blocks }
    }

    pub fn to_centered(&self, w: &[f64]) -> Vec<f64> {
        let mut z = w.to_vec();
        for (k, range) in &self.blocks {
            let sd = w[*k].exp();
            z[range.clone()].iter_mut().for_each(|x| *x *= sd);
        }
        z
    }

    pub fn from_centered(&self, z: &[f64]) -> Vec<f64> {
        let mut w = z.to_vec();
        for (k, range) in &self.blocks {
            let sd = z[*k].exp();
            w[range.clone()].iter_mut().for_each(|x| *x /= sd);
        }
        w
    }
}

impl LogDensity for NonCentered<'_> {
    fn dim(&self) -> usize {
        self.target.dimension()
    }

    fn log_density_grad(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let z = self.to_centered(w);
        let mut lp = self.target.log_density_grad(&z, grad);
        for (k, range) in &self.blocks {
            let sd = w[*k].exp();
            let n = range.len() as f64;
            lp += n * w[*k];
            let mut dk = n;
            for i in range.clone() {
                dk += grad[i] * z[i];
                grad[i] *= sd;
            }
            grad[*k] += dk;
        }
        lp
    }
}

/// Runs the sampler and returns draws in the centered unconstrained
/// coordinates, named after [`ModelData::coordinate_names`]. The
/// `log_density` statistic refers to the coordinates actually sampled.
pub fn sample(
    target: &PosteriorTarget,
    config: &SamplerConfig,
    parameterization: Parameterization,
) -> Result<PosteriorDraws> {
    let names = target.data().coordinate_names(target.spec().family);
    match parameterization {
        Parameterization::Centered => run_chains(target, names, config),
        Parameterization::NonCentered => {
            let nc = NonCentered::new(target);
            let mut draws = run_chains(&nc, names, config)?;
            for chain in &mut draws.chains {
                let dim = chain.dim;
                for row in chain.draws.chunks_exact_mut(dim.max(1)) {
                    let z = nc.to_centered(row);
                    row.copy_from_slice(&z);
                }
            }
            Ok(draws)
        }
    }
}
