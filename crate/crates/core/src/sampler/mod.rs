//! Hamiltonian Monte Carlo sampling with the No-U-Turn sampler.

pub mod adapt;
pub mod diagnostics;
pub mod nuts;

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use adapt::{clamp_step, DualAveraging, MetricAdaptation};
pub use nuts::{leapfrog, Hamiltonian, PhasePoint, TransitionStats};

/// Unnormalized log density on an unconstrained space with its gradient.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density.
    /// Non-finite values are treated as zero density by the sampler.
    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;
}

/// Half-width of the uniform box used for random initial positions.
pub const INIT_RADIUS: f64 = 2.0;
const INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub iterations: usize,
    pub warmup_fraction: f64,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            iterations: 2000,
            warmup_fraction: 0.5,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidParameter("chains must be at least 1".into()));
        }
        if self.iterations <= 10 {
            return Err(Error::InvalidParameter(format!(
                "iterations must exceed 10, got {}",
                self.iterations
            )));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "warmup_fraction must be in (0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "target_accept must be in (0, 1), got {}",
                self.target_accept
            )));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::InvalidParameter("max_tree_depth must be at least 1".into()));
        }
        if self.num_warmup() >= self.iterations {
            return Err(Error::InvalidParameter(
                "warm-up leaves no post-warm-up iterations".into(),
            ));
        }
        Ok(())
    }

    pub fn num_warmup(&self) -> usize {
        (self.iterations as f64 * self.warmup_fraction).round() as usize
    }

    pub fn num_draws(&self) -> usize {
        self.iterations - self.num_warmup()
    }
}

/// Post-warm-up output of one chain. Draws are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub chain: usize,
    pub dim: usize,
    pub draws: Vec<f64>,
    pub stats: Vec<TransitionStats>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim.max(1))
    }

    /// Trace of a single coordinate.
    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.iter().map(|d| d[k]).collect()
    }

    pub fn divergences(&self) -> usize {
        self.stats.iter().filter(|s| s.divergent).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(ChainDraws::len).sum()
    }

    /// All draws from all chains, chain-major.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.chains.iter().flat_map(ChainDraws::iter)
    }

    /// Per-chain traces of coordinate `k`.
    pub fn coordinate(&self, k: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.coordinate(k)).collect()
    }

    pub fn divergences(&self) -> usize {
        self.chains.iter().map(ChainDraws::divergences).sum()
    }
}

/// Draws a random initial position where the density and gradient are finite.
pub fn initial_position<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let dim = target.dim();
    let mut grad = vec![0.0; dim];
    for _ in 0..INIT_ATTEMPTS {
        let q: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(-INIT_RADIUS..INIT_RADIUS))
            .collect();
        let lp = target.log_density_grad(&q, &mut grad);
        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(q);
        }
    }
    Err(Error::Sampler(format!(
        "no finite initial position after {INIT_ATTEMPTS} attempts"
    )))
}

/// Doubles or halves the step size until a single leapfrog step crosses an
/// acceptance probability of 0.8.
fn initial_step_size<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    ham: &Hamiltonian<'_, T>,
    z: &PhasePoint,
    eps: f64,
    rng: &mut R,
) -> f64 {
    let mut eps = eps;
    let mut direction = 0.0;
    for _ in 0..100 {
        let mut z1 = z.clone();
        z1.p = ham.sample_momentum(rng);
        let h0 = ham.energy(&z1);
        ham.leapfrog(&mut z1, eps);
        let h = ham.energy(&z1);
        let delta = h0 - h;
        let delta = if delta.is_nan() { f64::NEG_INFINITY } else { delta };
        let d = if delta > 0.8f64.ln() { 1.0 } else { -1.0 };
        if direction == 0.0 {
            direction = d;
        } else if d != direction {
            break;
        }
        let next = if direction > 0.0 { 2.0 * eps } else { 0.5 * eps };
        if next != clamp_step(next) {
            return clamp_step(next);
        }
        eps = next;
    }
    eps
}

/// Runs one chain: adaptive warm-up followed by fixed-parameter sampling.
pub fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    chain: usize,
) -> Result<ChainDraws> {
    config.validate()?;
    let dim = target.dim();
    let mut rng = chain_rng(config.seed, chain);
    let q0 = initial_position(target, &mut rng)?;
    let mut inv_metric = vec![1.0; dim];
    let mut z = PhasePoint::new(target, q0, vec![0.0; dim]);

    let num_warmup = config.num_warmup();
    let mut da = DualAveraging::new(config.target_accept);
    let mut metric = MetricAdaptation::new(dim, num_warmup);
    let mut eps = {
        let ham = Hamiltonian { target, inv_metric: &inv_metric };
        initial_step_size(&ham, &z, 1.0, &mut rng)
    };
    da.restart(eps);

    for _ in 0..num_warmup {
        let ham = Hamiltonian { target, inv_metric: &inv_metric };
        let (next, stats) = nuts::transition(&ham, &z, eps, config.max_tree_depth, &mut rng);
        z = next;
        eps = da.learn(stats.accept_stat);
        if let Some(var) = metric.learn(&z.q) {
            inv_metric = var;
            let ham = Hamiltonian { target, inv_metric: &inv_metric };
            eps = initial_step_size(&ham, &z, eps, &mut rng);
            da.restart(eps);
        }
    }
    if num_warmup > 0 {
        eps = da.final_step();
    }

    let n = config.num_draws();
    let mut draws = Vec::with_capacity(n * dim);
    let mut stats = Vec::with_capacity(n);
    let ham = Hamiltonian { target, inv_metric: &inv_metric };
    for _ in 0..n {
        let (next, s) = nuts::transition(&ham, &z, eps, config.max_tree_depth, &mut rng);
        z = next;
        draws.extend_from_slice(&z.q);
        stats.push(s);
    }
    Ok(ChainDraws {
        chain,
        dim,
        draws,
        stats,
        step_size: eps,
        inv_metric,
    })
}

/// Each chain gets its own stream of a generator seeded from `seed`.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64 + 1);
    rng
}

/// Runs all chains in parallel on the current rayon pool.
pub fn run_chains<T: LogDensity + ?Sized>(
    target: &T,
    names: Vec<String>,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    if names.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: names.len(),
        });
    }
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws { names, chains })
}

const STAT_COLUMNS: [&str; 6] = [
    "step_size",
    "tree_depth",
    "n_leapfrog",
    "divergent",
    "accept_stat",
    "energy",
];

/// Writes one chain as CSV: iteration, every coordinate, then sampler statistics.
pub fn write_chain_csv<W: Write>(writer: W, names: &[String], chain: &ChainDraws) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["iteration".to_string()];
    header.extend(names.iter().cloned());
    header.push("log_density".into());
    header.extend(STAT_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (i, (draw, s)) in chain.iter().zip(&chain.stats).enumerate() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(draw.iter().map(|v| format!("{v:e}")));
        row.push(format!("{:e}", s.log_density));
        row.push(format!("{:e}", s.step_size));
        row.push(s.tree_depth.to_string());
        row.push(s.n_leapfrog.to_string());
        row.push(u8::from(s.divergent).to_string());
        row.push(format!("{:e}", s.accept_stat));
        row.push(format!("{:e}", s.energy));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Reads a chain written by [`write_chain_csv`]. Returns coordinate names and draws.
pub fn read_chain_csv<R: Read>(reader: R, chain: usize) -> Result<(Vec<String>, ChainDraws)> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let n_cols = header.len();
    let n_tail = STAT_COLUMNS.len() + 1;
    if n_cols < n_tail + 1 || &header[0] != "iteration" {
        return Err(Error::Invalid("not a draws file".into()));
    }
    let names: Vec<String> = header
        .iter()
        .skip(1)
        .take(n_cols - 1 - n_tail)
        .map(str::to_string)
        .collect();
    let dim = names.len();
    let mut draws = Vec::new();
    let mut stats = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec[j].trim().parse::<f64>().map_err(|_| Error::BadCell {
                row: row + 1,
                column: header[j].to_string(),
                message: format!("not a number: {:?}", &rec[j]),
            })
        };
        for j in 1..=dim {
            draws.push(num(j)?);
        }
        let t = dim + 1;
        stats.push(TransitionStats {
            log_density: num(t)?,
            step_size: num(t + 1)?,
            tree_depth: num(t + 2)? as usize,
            n_leapfrog: num(t + 3)? as usize,
            divergent: num(t + 4)? != 0.0,
            accept_stat: num(t + 5)?,
            energy: num(t + 6)?,
        });
    }
    let step_size = stats.first().map_or(f64::NAN, |s| s.step_size);
    Ok((
        names,
        ChainDraws {
            chain,
            dim,
            draws,
            stats,
            step_size,
            inv_metric: Vec::new(),
        },
    ))
}

pub fn write_chain_file(path: &Path, names: &[String], chain: &ChainDraws) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_chain_csv(std::io::BufWriter::new(f), names, chain)
}

pub fn read_chain_file(path: &Path, chain: usize) -> Result<(Vec<String>, ChainDraws)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_chain_csv(std::io::BufReader::new(f), chain)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal(usize);

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density_grad(&self, q: &[f64], g: &mut [f64]) -> f64 {
            for (g, q) in g.iter_mut().zip(q) {
                *g = -q;
            }
            -0.5 * q.iter().map(|x| x * x).sum::<f64>()
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = SamplerConfig::default();
        assert_eq!((c.chains, c.iterations, c.num_warmup(), c.num_draws()), (4, 2000, 1000, 1000));
        assert!(c.validate().is_ok());
        let bad = SamplerConfig { target_accept: 1.0, ..c.clone() };
        assert!(bad.validate().is_err());
        let bad = SamplerConfig { chains: 0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let config = SamplerConfig { chains: 1, iterations: 60, seed: 3, ..Default::default() };
        let draws = run_chains(&StdNormal(3), vec!["a".into(), "b".into(), "c".into()], &config)
            .unwrap();
        let mut buf = Vec::new();
        write_chain_csv(&mut buf, &draws.names, &draws.chains[0]).unwrap();
        let (names, back) = read_chain_csv(buf.as_slice(), 0).unwrap();
        assert_eq!(names, draws.names);
        assert_eq!(back.draws, draws.chains[0].draws);
        assert_eq!(back.stats, draws.chains[0].stats);
    }

    #[test]
    fn name_count_must_match_dimension() {
        let config = SamplerConfig { iterations: 20, ..Default::default() };
        let err = run_chains(&StdNormal(2), vec!["a".into()], &config).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
