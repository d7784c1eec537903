//! Synthetic three-level ordinal panels with known parameters and a
//! missing-at-random follow-up mechanism.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CovariateTerm, CovariateValue, DesignSpec, PanelDataset, PanelRecord};
use crate::distributions::{bridge_draw, expit, BridgeParam};
use crate::error::{Error, Result};
use crate::model::{sample_category, ModelData, ModelFamily, ParameterState, ReScale};

/// Covariate generator. Real covariates are redrawn every wave unless
/// `constant` is set; factors are fixed per individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateGen {
    Normal {
        name: String,
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        sd: f64,
        #[serde(default)]
        constant: bool,
    },
    /// The first level is the reference level.
    Categorical {
        name: String,
        levels: Vec<String>,
        probs: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl CovariateGen {
    pub fn name(&self) -> &str {
        match self {
            CovariateGen::Normal { name, .. } | CovariateGen::Categorical { name, .. } => name,
        }
    }

    fn n_columns(&self) -> usize {
        match self {
            CovariateGen::Normal { .. } => 1,
            CovariateGen::Categorical { levels, .. } => levels.len().saturating_sub(1),
        }
    }

    fn term(&self) -> CovariateTerm {
        match self {
            CovariateGen::Normal { name, .. } => CovariateTerm::Real {
                name: name.clone(),
                log1p: false,
            },
            CovariateGen::Categorical { name, levels, .. } => CovariateTerm::Categorical {
                name: name.clone(),
                reference: levels[0].clone(),
            },
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> CovariateValue {
        match self {
            CovariateGen::Normal { mean, sd, .. } => {
                let z: f64 = rng.sample(StandardNormal);
                CovariateValue::Real(mean + sd * z)
            }
            CovariateGen::Categorical { levels, probs, .. } => {
                let total: f64 = probs.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (l, p) in levels.iter().zip(probs) {
                    if u < *p {
                        return CovariateValue::Level(l.clone());
                    }
                    u -= p;
                }
                CovariateValue::Level(levels[levels.len() - 1].clone())
            }
        }
    }

    fn varies(&self) -> bool {
        matches!(self, CovariateGen::Normal { constant: false, .. })
    }
}

/// Staggered entry plus per-wave retention. Entry is drawn per family; the
/// entry wave is always observed. Afterwards each individual is observed with
/// probability `expit(logit(retention[k]) + slope * x)`, where `x` is the
/// individual's first-wave value of `retention_covariate` (if set). A missed
/// wave becomes a permanent drop-out with probability `dropout`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissingnessSpec {
    /// Relative weights of entering at each wave.
    pub entry_probs: Vec<f64>,
    /// Observation probability at each wave after entry (index by wave position).
    pub retention: Vec<f64>,
    pub dropout: f64,
    pub retention_covariate: Option<String>,
    pub retention_slope: f64,
}

impl Default for MissingnessSpec {
    fn default() -> Self {
        MissingnessSpec {
            entry_probs: vec![0.35, 0.25, 0.25, 0.15],
            retention: vec![1.0, 0.85, 0.85, 0.85],
            dropout: 0.6,
            retention_covariate: None,
            retention_slope: 0.0,
        }
    }
}

impl MissingnessSpec {
    /// Everyone present at every wave.
    pub fn none() -> Self {
        MissingnessSpec {
            entry_probs: vec![1.0],
            retention: vec![1.0],
            dropout: 0.0,
            retention_covariate: None,
            retention_slope: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if self.entry_probs.is_empty()
            || self.entry_probs.iter().any(|&p| !(p >= 0.0 && p.is_finite()))
            || self.entry_probs.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::InvalidParameter(
                "entry_probs must be non-negative with a positive sum".into(),
            ));
        }
        if self.retention.iter().any(|&p| !prob(p)) || !prob(self.dropout) {
            return Err(Error::InvalidParameter(
                "retention and dropout must be probabilities".into(),
            ));
        }
        if !self.retention_slope.is_finite() {
            return Err(Error::InvalidParameter("retention_slope must be finite".into()));
        }
        Ok(())
    }

    fn retention_at(&self, k: usize) -> f64 {
        match self.retention.get(k) {
            Some(&p) => p,
            None => *self.retention.last().unwrap_or(&1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub n_families: usize,
    pub min_individuals: usize,
    pub max_individuals: usize,
    pub waves: Vec<i64>,
    pub family: ModelFamily,
    pub alpha: Vec<f64>,
    /// One coefficient per design column implied by `covariates`.
    pub beta: Vec<f64>,
    pub phi_ustar: f64,
    pub phi_v: f64,
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub covariates: Vec<CovariateGen>,
    pub missingness: MissingnessSpec,
    /// Per-wave probability that an individual moves to a newly formed family.
    pub move_prob: f64,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            n_families: 300,
            min_individuals: 1,
            max_individuals: 4,
            waves: vec![1, 2, 3, 4],
            family: ModelFamily::ModifiedBridgeBridge,
            alpha: vec![-1.0, 1.0],
            beta: vec![-0.5, 0.4, 0.6, -0.8, 0.3, 0.5],
            phi_ustar: 0.85,
            phi_v: 0.75,
            sigma_u: 1.0,
            sigma_v: 1.5,
            covariates: vec![
                CovariateGen::Normal {
                    name: "income".into(),
                    mean: 0.0,
                    sd: 1.0,
                    constant: false,
                },
                CovariateGen::Categorical {
                    name: "female".into(),
                    levels: vec!["0".into(), "1".into()],
                    probs: vec![0.5, 0.5],
                },
                CovariateGen::Categorical {
                    name: "marital".into(),
                    levels: vec!["married".into(), "never".into(), "widowed".into()],
                    probs: vec![0.55, 0.3, 0.15],
                },
                CovariateGen::Normal {
                    name: "age".into(),
                    mean: 0.0,
                    sd: 1.0,
                    constant: true,
                },
                CovariateGen::Categorical {
                    name: "unemployed".into(),
                    levels: vec!["0".into(), "1".into()],
                    probs: vec![0.8, 0.2],
                },
            ],
            missingness: MissingnessSpec::default(),
            move_prob: 0.0,
            seed: 0,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_families == 0 {
            return Err(Error::InvalidParameter("n_families must be positive".into()));
        }
        if self.min_individuals == 0 || self.min_individuals > self.max_individuals {
            return Err(Error::InvalidParameter(
                "need 1 <= min_individuals <= max_individuals".into(),
            ));
        }
        if self.waves.is_empty() || self.waves.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "waves must be non-empty and strictly increasing".into(),
            ));
        }
        if self.alpha.is_empty()
            || self.alpha.iter().any(|a| !a.is_finite())
            || self.alpha.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidParameter(
                "alpha must be finite and strictly increasing".into(),
            ));
        }
        let cols: usize = self.covariates.iter().map(CovariateGen::n_columns).sum();
        if self.beta.len() != cols {
            return Err(Error::DimensionMismatch {
                expected: cols,
                got: self.beta.len(),
            });
        }
        for c in &self.covariates {
            if let CovariateGen::Categorical { name, levels, probs } = c {
                if levels.len() < 2
                    || levels.len() != probs.len()
                    || probs.iter().any(|&p| !(p >= 0.0 && p.is_finite()))
                    || probs.iter().sum::<f64>() <= 0.0
                {
                    return Err(Error::InvalidParameter(format!(
                        "factor {name} needs at least two levels with matching probabilities"
                    )));
                }
            }
            if let CovariateGen::Normal { name, sd, .. } = c {
                if !(*sd > 0.0) {
                    return Err(Error::InvalidParameter(format!("covariate {name}: sd must be positive")));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.move_prob) {
            return Err(Error::InvalidParameter("move_prob must be a probability".into()));
        }
        self.missingness.validate()?;
        self.re_scale().map(|_| ())
    }

    pub fn categories(&self) -> usize {
        self.alpha.len() + 1
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name().to_string()).collect()
    }

    /// Design terms matching the generated covariates and `beta` ordering.
    pub fn design_spec(&self) -> DesignSpec {
        DesignSpec {
            terms: self.covariates.iter().map(CovariateGen::term).collect(),
        }
    }

    pub fn re_scale(&self) -> Result<ReScale> {
        Ok(match self.family {
            ModelFamily::ModifiedBridgeBridge => ReScale::ModifiedBridge {
                phi_ustar: BridgeParam::new(self.phi_ustar)?,
                phi_v: BridgeParam::new(self.phi_v)?,
            },
            ModelFamily::NormalNormal => {
                if !(self.sigma_u > 0.0 && self.sigma_v > 0.0) {
                    return Err(Error::InvalidParameter("sigma_u and sigma_v must be positive".into()));
                }
                ReScale::Normal {
                    sigma_u: self.sigma_u,
                    sigma_v: self.sigma_v,
                }
            }
            ModelFamily::TwoLevelBridge => ReScale::TwoLevel {
                phi_v: BridgeParam::new(self.phi_v)?,
            },
            ModelFamily::Fixed => ReScale::None,
        })
    }
}

/// Generating parameters and every latent draw, keyed by family/individual id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub family: ModelFamily,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta_names: Vec<String>,
    pub scale: BTreeMap<String, f64>,
    pub u_star: BTreeMap<String, f64>,
    pub v: BTreeMap<String, f64>,
    pub seed: u64,
}

impl SimTruth {
    /// Parameter state aligned with the keys of `data`. Keys absent from the
    /// truth (never the case for simulated data) are an error.
    pub fn parameter_state(&self, data: &ModelData) -> Result<ParameterState> {
        let get = |map: &BTreeMap<String, f64>, key: &str, kind: &'static str| {
            map.get(key).copied().ok_or_else(|| Error::UnknownKey {
                kind,
                key: key.to_string(),
            })
        };
        let scale = |name: &str| get(&self.scale, name, "scale parameter");
        let scale = match self.family {
            ModelFamily::ModifiedBridgeBridge => ReScale::ModifiedBridge {
                phi_ustar: BridgeParam::new(scale("phi_ustar")?)?,
                phi_v: BridgeParam::new(scale("phi_v")?)?,
            },
            ModelFamily::NormalNormal => ReScale::Normal {
                sigma_u: scale("sigma_u")?,
                sigma_v: scale("sigma_v")?,
            },
            ModelFamily::TwoLevelBridge => ReScale::TwoLevel {
                phi_v: BridgeParam::new(scale("phi_v")?)?,
            },
            ModelFamily::Fixed => ReScale::None,
        };
        let u_star = if self.family.has_family_effect() {
            data.family_keys()
                .iter()
                .map(|k| get(&self.u_star, k, "family"))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let v = if self.family.has_individual_effect() {
            data.individual_keys()
                .iter()
                .map(|k| get(&self.v, k, "individual"))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(ParameterState {
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            scale,
            u_star,
            v,
        })
    }

    /// Constrained structural values in layout order: alpha, beta, scales.
    pub fn structural_values(&self) -> Vec<f64> {
        let mut out = self.alpha.clone();
        out.extend_from_slice(&self.beta);
        let order: &[&str] = match self.family {
            ModelFamily::ModifiedBridgeBridge => &["phi_ustar", "phi_v"],
            ModelFamily::NormalNormal => &["sigma_u", "sigma_v"],
            ModelFamily::TwoLevelBridge => &["phi_v"],
            ModelFamily::Fixed => &[],
        };
        out.extend(order.iter().map(|k| self.scale[*k]));
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)
            .map_err(|e| Error::Invalid(format!("cannot write truth file: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(f))
            .map_err(|e| Error::Invalid(format!("cannot parse truth file {}: {e}", path.display())))
    }
}

fn draw_effect<R: Rng + ?Sized>(rng: &mut R, bridge: Option<BridgeParam>, sd: f64) -> f64 {
    match bridge {
        Some(phi) => bridge_draw(rng, phi),
        None => Normal::new(0.0, sd).expect("positive sd").sample(rng),
    }
}

/// Simulates a complete panel (every individual at every wave) and then
/// removes records with [`apply_missingness`]. One random stream seeded from
/// `spec.seed` drives everything.
pub fn simulate_dataset(spec: &SimSpec) -> Result<(PanelDataset, SimTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = spec.re_scale()?;
    let (family_law, individual_law, sd_u, sd_v) = match scale {
        ReScale::ModifiedBridge { phi_ustar, phi_v } => (Some(phi_ustar), Some(phi_v), 0.0, 0.0),
        ReScale::Normal { sigma_u, sigma_v } => (None, None, sigma_u, sigma_v),
        ReScale::TwoLevel { phi_v } => (None, Some(phi_v), 0.0, 0.0),
        ReScale::None => (None, None, 0.0, 0.0),
    };
    let has_u = spec.family.has_family_effect();
    let has_v = spec.family.has_individual_effect();
    let divisor = scale.family_divisor();

    let mut u_star: BTreeMap<String, f64> = BTreeMap::new();
    let mut v: BTreeMap<String, f64> = BTreeMap::new();
    let mut records = Vec::new();
    let width = spec.n_families.to_string().len();
    let mut moved = 0usize;

    let beta_names = design_column_names(spec);

    for f in 0..spec.n_families {
        let fam = format!("F{:0width$}", f + 1);
        if has_u {
            u_star.insert(fam.clone(), draw_effect(&mut rng, family_law, sd_u));
        }
        let m = rng.random_range(spec.min_individuals..=spec.max_individuals);
        for j in 0..m {
            let ind = format!("{fam}-{}", j + 1);
            if has_v {
                v.insert(ind.clone(), draw_effect(&mut rng, individual_law, sd_v));
            }
            let fixed: Vec<CovariateValue> = spec.covariates.iter().map(|c| c.draw(&mut rng)).collect();
            let mut current_family = fam.clone();
            for (k, &wave) in spec.waves.iter().enumerate() {
                if k > 0 && spec.move_prob > 0.0 && rng.random::<f64>() < spec.move_prob {
                    moved += 1;
                    current_family = format!("M{moved:0width$}");
                    if has_u {
                        u_star.insert(current_family.clone(), draw_effect(&mut rng, family_law, sd_u));
                    }
                }
                let covariates: Vec<CovariateValue> = spec
                    .covariates
                    .iter()
                    .zip(&fixed)
                    .map(|(c, x)| if k > 0 && c.varies() { c.draw(&mut rng) } else { x.clone() })
                    .collect();
                let x = design_row(spec, &covariates);
                let eta: f64 = x.iter().zip(&spec.beta).map(|(a, b)| a * b).sum();
                let b = if has_u { u_star[&current_family] / divisor } else { 0.0 }
                    + if has_v { v[&ind] } else { 0.0 };
                let outcome = sample_category(&spec.alpha, eta + b, &mut rng);
                records.push(PanelRecord {
                    family_id: current_family.clone(),
                    individual_id: ind.clone(),
                    wave,
                    outcome,
                    covariates,
                });
            }
        }
    }
    let complete = PanelDataset::new(records, spec.categories(), spec.covariate_names())?;
    let ds = apply_missingness(&complete, &spec.missingness, &mut rng)?;

    // Latent values only for units that survive missingness.
    u_star.retain(|k, _| ds.family_index().contains_key(k));
    v.retain(|k, _| ds.individual_index().contains_key(k));
    let truth = SimTruth {
        family: spec.family,
        alpha: spec.alpha.clone(),
        beta: spec.beta.clone(),
        beta_names,
        scale: scale
            .named_values()
            .into_iter()
            .map(|(n, x)| (n.to_string(), x))
            .collect(),
        u_star,
        v,
        seed: spec.seed,
    };
    Ok((ds, truth))
}

fn design_column_names(spec: &SimSpec) -> Vec<String> {
    let mut names = Vec::new();
    for c in &spec.covariates {
        match c {
            CovariateGen::Normal { name, .. } => names.push(name.clone()),
            CovariateGen::Categorical { name, levels, .. } => {
                names.extend(levels[1..].iter().map(|l| format!("{name}[{l}]")))
            }
        }
    }
    names
}

/// Design row in generator order, reference-coding factors on their first level.
fn design_row(spec: &SimSpec, covariates: &[CovariateValue]) -> Vec<f64> {
    let mut row = Vec::with_capacity(spec.beta.len());
    for (c, x) in spec.covariates.iter().zip(covariates) {
        match (c, x) {
            (CovariateGen::Normal { .. }, CovariateValue::Real(v)) => row.push(*v),
            (CovariateGen::Categorical { levels, .. }, CovariateValue::Level(l)) => {
                row.extend(levels[1..].iter().map(|lv| f64::from(u8::from(lv == l))))
            }
            _ => unreachable!("generator and value kinds always agree"),
        }
    }
    row
}

/// Removes records under the staggered-entry and retention mechanism. Waves
/// are taken from the dataset; probabilities are indexed by wave position.
pub fn apply_missingness<R: Rng + ?Sized>(
    ds: &PanelDataset,
    spec: &MissingnessSpec,
    rng: &mut R,
) -> Result<PanelDataset> {
    spec.validate()?;
    let waves = ds.waves();
    let wave_pos: BTreeMap<i64, usize> = waves.iter().enumerate().map(|(k, &w)| (w, k)).collect();
    let cov_pos = match &spec.retention_covariate {
        Some(name) => Some(ds.covariate_position(name).ok_or_else(|| Error::UnknownCovariate(name.clone()))?),
        None => None,
    };

    // Entry wave per family of first appearance (the family an individual starts in).
    let total: f64 = spec.entry_probs.iter().sum();
    let mut entry: BTreeMap<&str, usize> = BTreeMap::new();
    for fam in ds.family_index().keys() {
        let mut u = rng.random::<f64>() * total;
        let mut k = spec.entry_probs.len() - 1;
        for (i, p) in spec.entry_probs.iter().enumerate() {
            if u < *p {
                k = i;
                break;
            }
            u -= p;
        }
        entry.insert(fam.as_str(), k.min(waves.len() - 1));
    }

    let records = ds.records();
    let mut keep = vec![false; records.len()];
    for rows in ds.individual_index().values() {
        let mut rows = rows.clone();
        rows.sort_by_key(|&r| records[r].wave);
        let first = &records[rows[0]];
        let start = entry[first.family_id.as_str()];
        let shift = match cov_pos {
            Some(c) => match &first.covariates[c] {
                CovariateValue::Real(x) => spec.retention_slope * x,
                CovariateValue::Level(_) => {
                    return Err(Error::Invalid(
                        "retention_covariate must be a numeric column".into(),
                    ))
                }
            },
            None => 0.0,
        };
        let mut entered = false;
        let mut dropped = false;
        for &r in &rows {
            let k = wave_pos[&records[r].wave];
            if k < start || dropped {
                continue;
            }
            if !entered {
                entered = true;
                keep[r] = true;
                continue;
            }
            let p = spec.retention_at(k);
            let p = if shift == 0.0 || p == 0.0 || p == 1.0 {
                p
            } else {
                expit((p / (1.0 - p)).ln() + shift)
            };
            if rng.random::<f64>() < p {
                keep[r] = true;
            } else if rng.random::<f64>() < spec.dropout {
                dropped = true;
            }
        }
    }
    ds.filter(|r, _| keep[r])
}
