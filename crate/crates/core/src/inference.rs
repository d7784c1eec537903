//! Post-processing of posterior draws: marginal coefficients, summaries,
//! WAIC and LPML, and posterior predictive checks.

use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    from_unconstrained, sample_category, Layout, ModelData, ModelFamily, ParameterState, ReScale,
};
use crate::sampler::PosteriorDraws;

/// Named scalar draws grouped by chain: `chains[c][l][k]` is quantity `k` in draw `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedDraws {
    pub names: Vec<String>,
    pub chains: Vec<Vec<Vec<f64>>>,
}

impl NamedDraws {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    /// Draws of quantity `k`, pooled over chains in chain order.
    pub fn pooled(&self, k: usize) -> Vec<f64> {
        self.chains.iter().flatten().map(|d| d[k]).collect()
    }

    /// Per-chain traces of quantity `k`.
    pub fn per_chain(&self, k: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.iter().map(|d| d[k]).collect())
            .collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Maps every draw back to the constrained parameter state, chain by chain.
pub fn parameter_draws(draws: &PosteriorDraws, layout: &Layout) -> Result<Vec<Vec<ParameterState>>> {
    draws
        .chains
        .iter()
        .map(|c| {
            c.iter()
                .map(|z| from_unconstrained(z, layout).map(|(p, _)| p))
                .collect()
        })
        .collect()
}

/// Thresholds, coefficients and scale parameters on their natural scales.
pub fn structural_draws(
    draws: &PosteriorDraws,
    layout: &Layout,
    beta_names: &[String],
) -> Result<NamedDraws> {
    let names = layout.structural_names(beta_names);
    let chains = parameter_draws(draws, layout)?
        .into_iter()
        .map(|c| c.iter().map(crate::model::structural_values).collect())
        .collect();
    Ok(NamedDraws { names, chains })
}

/// Factor turning conditional coefficients into population-averaged ones:
/// `phi_U* * phi_V`, `phi_V`, or 1 for the fixed model.
pub fn marginal_factor(scale: &ReScale) -> Result<f64> {
    match scale {
        ReScale::ModifiedBridge { phi_ustar, phi_v } => Ok(phi_ustar.phi() * phi_v.phi()),
        ReScale::TwoLevel { phi_v } => Ok(phi_v.phi()),
        ReScale::None => Ok(1.0),
        ReScale::Normal { .. } => Err(Error::UnsupportedFamily(
            "normal random effects have no closed-form marginal coefficients",
        )),
    }
}

/// Marginal thresholds and coefficients for one parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalState {
    /// Scaled like the coefficients; not validated against a reference.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn marginalize_state(params: &ParameterState) -> Result<MarginalState> {
    let f = marginal_factor(&params.scale)?;
    Ok(MarginalState {
        alpha: params.alpha.iter().map(|a| f * a).collect(),
        beta: params.beta.iter().map(|b| f * b).collect(),
    })
}

/// Per-draw marginal thresholds (`alpha_m[..]`) and coefficients (`beta_m[..]`).
pub fn marginalize(draws: &PosteriorDraws, layout: &Layout, beta_names: &[String]) -> Result<NamedDraws> {
    if layout.family == ModelFamily::NormalNormal {
        return Err(Error::UnsupportedFamily(
            "normal random effects have no closed-form marginal coefficients",
        ));
    }
    let mut names: Vec<String> = (1..=layout.n_alpha).map(|a| format!("alpha_m[{a}]")).collect();
    names.extend(beta_names.iter().map(|b| format!("beta_m[{b}]")));
    let chains = parameter_draws(draws, layout)?
        .into_iter()
        .map(|c| {
            c.iter()
                .map(|p| {
                    let m = marginalize_state(p)?;
                    let mut row = m.alpha;
                    row.extend(m.beta);
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NamedDraws { names, chains })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    /// Percentage change in odds, `(exp(mean) - 1) * 100`.
    pub odds_change: Option<f64>,
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_values(name: &str, values: &[f64], odds_change: bool) -> Result<SummaryRow> {
    if values.is_empty() {
        return Err(Error::Invalid(format!("no draws for {name}")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SummaryRow {
        name: name.to_string(),
        mean,
        sd,
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
        odds_change: odds_change.then(|| (mean.exp() - 1.0) * 100.0),
    })
}

/// Summarizes every quantity. With `odds_change`, coefficient rows (names
/// starting with `beta`) also carry the percentage change in odds.
pub fn summarize(draws: &NamedDraws, odds_change: bool) -> Result<Vec<SummaryRow>> {
    (0..draws.names.len())
        .map(|k| {
            let name = &draws.names[k];
            summarize_values(name, &draws.pooled(k), odds_change && name.starts_with("beta"))
        })
        .collect()
}

/// Pointwise log-likelihood, `n_draws x n_obs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LoglikMatrix {
    pub n_draws: usize,
    pub n_obs: usize,
    pub values: Vec<f64>,
}

impl LoglikMatrix {
    pub fn new(n_draws: usize, n_obs: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_draws * n_obs {
            return Err(Error::DimensionMismatch {
                expected: n_draws * n_obs,
                got: values.len(),
            });
        }
        Ok(LoglikMatrix { n_draws, n_obs, values })
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.values[l * self.n_obs..(l + 1) * self.n_obs]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n_draws).map(|l| self.values[l * self.n_obs + i]).collect()
    }
}

/// Log-likelihood of every record under every draw, conditional on the drawn
/// random effects. Rows follow chain order, then draw order.
pub fn pointwise_loglik(draws: &PosteriorDraws, data: &ModelData, layout: &Layout) -> Result<LoglikMatrix> {
    if draws.dim() != layout.dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.dim(),
            got: draws.dim(),
        });
    }
    let rows: Vec<&[f64]> = draws.iter().collect();
    let n_obs = data.n_records();
    let values = rows
        .par_iter()
        .map(|z| {
            let (p, _) = from_unconstrained(z, layout)?;
            Ok((0..n_obs).map(|r| data.record_loglik_at(r, &p)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    LoglikMatrix::new(rows.len(), n_obs, values)
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub waic: f64,
    pub lppd: f64,
    /// Effective number of parameters.
    pub p_waic: f64,
}

pub fn waic(ll: &LoglikMatrix) -> Result<Waic> {
    if ll.n_draws < 2 {
        return Err(Error::Invalid("WAIC needs at least two draws".into()));
    }
    let m = ll.n_draws as f64;
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    for i in 0..ll.n_obs {
        let col = ll.column(i);
        lppd += log_sum_exp(col.iter().copied()) - m.ln();
        let mean = col.iter().sum::<f64>() / m;
        p_waic += col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    }
    Ok(Waic {
        waic: -2.0 * (lppd - p_waic),
        lppd,
        p_waic,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lpml {
    pub lpml: f64,
    pub log_cpo: Vec<f64>,
    /// Observations with a zero likelihood under some draw; their CPO is 0.
    pub zero_likelihood: Vec<usize>,
}

/// Harmonic-mean CPO per observation, in log space.
pub fn lpml(ll: &LoglikMatrix) -> Result<Lpml> {
    if ll.n_draws == 0 {
        return Err(Error::Invalid("LPML needs at least one draw".into()));
    }
    let log_m = (ll.n_draws as f64).ln();
    let mut log_cpo = Vec::with_capacity(ll.n_obs);
    let mut zero = Vec::new();
    for i in 0..ll.n_obs {
        let col = ll.column(i);
        if col.contains(&f64::NEG_INFINITY) {
            zero.push(i);
            log_cpo.push(f64::NEG_INFINITY);
            continue;
        }
        log_cpo.push(-(log_sum_exp(col.iter().map(|x| -x)) - log_m));
    }
    Ok(Lpml {
        lpml: log_cpo.iter().sum(),
        log_cpo,
        zero_likelihood: zero,
    })
}

/// WAIC and LPML for one fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub waic: f64,
    pub lppd: f64,
    pub p_waic: f64,
    pub lpml: f64,
}

pub fn criteria(ll: &LoglikMatrix) -> Result<Criteria> {
    let w = waic(ll)?;
    let l = lpml(ll)?;
    Ok(Criteria {
        waic: w.waic,
        lppd: w.lppd,
        p_waic: w.p_waic,
        lpml: l.lpml,
    })
}

/// Distribution of `observed - replicated` category codes over replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct PpcTable {
    /// Codes from `-(A-1)` to `A-1`.
    pub codes: Vec<i64>,
    pub mean_percent: Vec<f64>,
    pub sd_percent: Vec<f64>,
    /// Per-replicate percentages, one row per replicate.
    pub replicates: Vec<Vec<f64>>,
}

/// Tabulates discrepancy codes for replicated outcome vectors.
pub fn discrepancy_table<I>(observed: &[u32], categories: usize, replicates: I) -> Result<PpcTable>
where
    I: IntoIterator<Item = Vec<u32>>,
{
    let span = categories as i64 - 1;
    let codes: Vec<i64> = (-span..=span).collect();
    let n = observed.len() as f64;
    let mut rows = Vec::new();
    for rep in replicates {
        if rep.len() != observed.len() {
            return Err(Error::DimensionMismatch {
                expected: observed.len(),
                got: rep.len(),
            });
        }
        let mut counts = vec![0usize; codes.len()];
        for (&o, &r) in observed.iter().zip(&rep) {
            let code = o as i64 - r as i64;
            if code.abs() > span {
                return Err(Error::Invalid(format!("category out of range in replicate: {r}")));
            }
            counts[(code + span) as usize] += 1;
        }
        rows.push(counts.iter().map(|&c| 100.0 * c as f64 / n).collect::<Vec<f64>>());
    }
    let m = rows.len() as f64;
    let mut mean = vec![0.0; codes.len()];
    let mut sd = vec![0.0; codes.len()];
    for (k, (mu, s)) in mean.iter_mut().zip(&mut sd).enumerate() {
        *mu = rows.iter().map(|r| r[k]).sum::<f64>() / m;
        if rows.len() > 1 {
            *s = (rows.iter().map(|r| (r[k] - *mu).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        }
    }
    Ok(PpcTable {
        codes,
        mean_percent: mean,
        sd_percent: sd,
        replicates: rows,
    })
}

/// One replicated outcome vector per draw. Mixed models reuse the drawn
/// random effects; the fixed model has none.
pub fn replicate_outcomes<R: Rng + ?Sized>(
    params: &ParameterState,
    data: &ModelData,
    rng: &mut R,
) -> Vec<u32> {
    (0..data.n_records())
        .map(|r| {
            let s = data.eta(r, &params.beta) + params.effect(data.family[r], data.individual[r]);
            sample_category(&params.alpha, s, rng)
        })
        .collect()
}

/// Posterior predictive discrepancy table with one replicate per kept draw.
pub fn ppc<R: Rng + ?Sized>(
    draws: &PosteriorDraws,
    data: &ModelData,
    layout: &Layout,
    rng: &mut R,
) -> Result<PpcTable> {
    let states = parameter_draws(draws, layout)?;
    let reps: Vec<Vec<u32>> = states
        .iter()
        .flatten()
        .map(|p| replicate_outcomes(p, data, rng))
        .collect();
    discrepancy_table(data.outcomes(), data.categories(), reps)
}

/// Fixed six-significant-digit decimal rendering used in tables.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..15).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

pub fn write_summary_csv<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["name", "mean", "sd", "q2.5", "q97.5", "odds_change_pct"])?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            fmt_sig(r.mean),
            fmt_sig(r.sd),
            fmt_sig(r.q025),
            fmt_sig(r.q975),
            fmt_opt(r.odds_change),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Renders rows of cells as a left-aligned first column and right-aligned rest.
pub fn align_table(header: &[String], rows: &[Vec<String>]) -> String {
    let n = header.len();
    let mut width = header.iter().map(String::len).collect::<Vec<_>>();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        for (k, c) in cells.iter().enumerate().take(n) {
            if k == 0 {
                let _ = write!(out, "{c:<w$}", w = width[0]);
            } else {
                let _ = write!(out, "  {c:>w$}", w = width[k]);
            }
        }
        out.push('\n');
    };
    line(header);
    for r in rows {
        line(r);
    }
    out
}

pub fn summary_text(rows: &[SummaryRow]) -> String {
    let with_odds = rows.iter().any(|r| r.odds_change.is_some());
    let mut header: Vec<String> = ["Parameter", "Mean", "SD", "95% CI"].map(String::from).to_vec();
    if with_odds {
        header.push("Odds change %".into());
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells = vec![
                r.name.clone(),
                fmt_sig(r.mean),
                fmt_sig(r.sd),
                format!("{}, {}", fmt_sig(r.q025), fmt_sig(r.q975)),
            ];
            if with_odds {
                cells.push(fmt_opt(r.odds_change));
            }
            cells
        })
        .collect();
    align_table(&header, &body)
}

pub fn write_ppc_csv<W: Write>(writer: W, table: &PpcTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["code", "mean_pct", "sd_pct"])?;
    for ((c, m), s) in table.codes.iter().zip(&table.mean_percent).zip(&table.sd_percent) {
        w.write_record([c.to_string(), fmt_sig(*m), fmt_sig(*s)])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// PPC tables for several models side by side, one row per model.
pub fn ppc_text(tables: &[(String, PpcTable)]) -> String {
    let Some((_, first)) = tables.first() else {
        return String::new();
    };
    let mut header = vec!["Model".to_string()];
    for c in &first.codes {
        header.push(format!("{c} Mean"));
        header.push(format!("{c} SD"));
    }
    let body: Vec<Vec<String>> = tables
        .iter()
        .map(|(name, t)| {
            let mut cells = vec![name.clone()];
            for (m, s) in t.mean_percent.iter().zip(&t.sd_percent) {
                cells.push(format!("{m:.2}"));
                cells.push(format!("{s:.2}"));
            }
            cells
        })
        .collect();
    align_table(&header, &body)
}
