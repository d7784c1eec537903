use bridge_mixed::distributions::{bridge_dlogpdf_dx, bridge_logpdf, bridge_variance, BridgeParam};
use bridge_mixed::sampler::diagnostics::{ess, split_rhat};
use bridge_mixed::sampler::{leapfrog, read_chain_csv, run_chains, write_chain_csv, Hamiltonian, LogDensity, PhasePoint, PosteriorDraws, SamplerConfig};

/// Independent normal with the given means and standard deviations.
struct Gaussian {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl Gaussian {
    fn standard(dim: usize) -> Self {
        Gaussian {
            mean: vec![0.0; dim],
            sd: vec![1.0; dim],
        }
    }
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for k in 0..q.len() {
            let z = (q[k] - self.mean[k]) / self.sd[k];
            lp -= 0.5 * z * z;
            grad[k] = -z / self.sd[k];
        }
        lp
    }
}

/// Bivariate normal with unit-free marginal variances and correlation `rho`.
struct Correlated {
    var: [f64; 2],
    rho: f64,
}

impl LogDensity for Correlated {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let (s1, s2) = (self.var[0].sqrt(), self.var[1].sqrt());
        let (a, b) = (q[0] / s1, q[1] / s2);
        let c = 1.0 - self.rho * self.rho;
        grad[0] = -(a - self.rho * b) / (c * s1);
        grad[1] = -(b - self.rho * a) / (c * s2);
        -0.5 * (a * a - 2.0 * self.rho * a * b + b * b) / c
    }
}

struct BridgeTarget(BridgeParam);

impl LogDensity for BridgeTarget {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        grad[0] = bridge_dlogpdf_dx(q[0], self.0);
        bridge_logpdf(q[0], self.0)
    }
}

struct Flat(usize);

impl LogDensity for Flat {
    fn dim(&self) -> usize {
        self.0
    }

    fn log_density_grad(&self, _q: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        0.0
    }
}

fn names(dim: usize) -> Vec<String> {
    (0..dim).map(|k| format!("x{k}")).collect()
}

fn config(chains: usize, iterations: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        chains,
        iterations,
        seed,
        ..SamplerConfig::default()
    }
}

fn pooled_mean_var(d: &PosteriorDraws, k: usize) -> (f64, f64) {
    let x: Vec<f64> = d.coordinate(k).concat();
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn mean_accept(d: &PosteriorDraws) -> f64 {
    let s: Vec<f64> = d.chains.iter().flat_map(|c| c.stats.iter().map(|s| s.accept_stat)).collect();
    s.iter().sum::<f64>() / s.len() as f64
}

#[test]
fn standard_normal_means_within_monte_carlo_error() {
    let target = Gaussian::standard(10);
    let d = run_chains(&target, names(10), &config(4, 1000, 1)).unwrap();
    assert_eq!(d.total_draws(), 2000);
    for k in 0..10 {
        let (m, v) = pooled_mean_var(&d, k);
        let mcse = (v / ess(&d.coordinate(k))).sqrt();
        assert!(m.abs() < 3.0 * mcse, "coord {k}: mean {m}, mcse {mcse}");
        let r = split_rhat(&d.coordinate(k)).unwrap();
        assert!(r < 1.01, "coord {k}: rhat {r}");
    }
    let a = mean_accept(&d);
    assert!((0.7..=0.95).contains(&a), "mean accept {a}");
    assert_eq!(d.divergences(), 0);
}

#[test]
fn graded_variances_recovered_after_adaptation() {
    let sd: Vec<f64> = (1..=10).map(|v| (v as f64).sqrt()).collect();
    let target = Gaussian { mean: vec![0.0; 10], sd };
    let d = run_chains(&target, names(10), &config(4, 4000, 2)).unwrap();
    for k in 0..10 {
        let (_, v) = pooled_mean_var(&d, k);
        let truth = (k + 1) as f64;
        assert!((v / truth - 1.0).abs() < 0.1, "coord {k}: {v} vs {truth}");
    }
    let a = mean_accept(&d);
    assert!((0.7..=0.95).contains(&a), "mean accept {a}");
}

#[test]
fn adapted_metric_tracks_correlated_marginal_variances() {
    let target = Correlated { var: [4.0, 0.25], rho: 0.7 };
    let d = run_chains(&target, names(2), &config(4, 2000, 3)).unwrap();
    for c in &d.chains {
        for k in 0..2 {
            let ratio = c.inv_metric[k] / target.var[k];
            assert!((ratio - 1.0).abs() < 0.2, "chain {} coord {k}: {}", c.chain, c.inv_metric[k]);
        }
    }
}

#[test]
fn one_dimensional_bridge_variance() {
    let phi = BridgeParam::new(0.6).unwrap();
    let d = run_chains(&BridgeTarget(phi), names(1), &config(4, 4000, 4)).unwrap();
    let (m, v) = pooled_mean_var(&d, 0);
    let truth = bridge_variance(phi);
    // Standard error of a variance estimate is about var * sqrt(2 / ess)
    // for light tails; the Bridge law has excess kurtosis, so allow 4 SE.
    let e = ess(&d.coordinate(0));
    assert!((v - truth).abs() < 4.0 * truth * (2.0 / e).sqrt() * 1.5, "{v} vs {truth} (ess {e})");
    assert!(m.abs() < 4.0 * (v / e).sqrt());
}

#[test]
fn leapfrog_is_reversible_and_trivial_at_zero_step() {
    let target = Gaussian {
        mean: vec![0.5, -1.0, 2.0],
        sd: vec![0.5, 1.0, 3.0],
    };
    let inv = [0.3, 1.0, 5.0];
    let q0 = vec![0.1, 0.2, -0.3];
    let p0 = vec![1.0, -0.5, 0.25];
    let (q, p) = (q0.clone(), p0.clone());
    let (mut q, mut p) = (q, p);
    for _ in 0..25 {
        (q, p) = leapfrog(&target, &q, &p, 0.1, &inv);
    }
    p.iter_mut().for_each(|x| *x = -*x);
    for _ in 0..25 {
        (q, p) = leapfrog(&target, &q, &p, 0.1, &inv);
    }
    for k in 0..3 {
        assert!((q[k] - q0[k]).abs() < 1e-10);
        assert!((-p[k] - p0[k]).abs() < 1e-10);
    }
    let (q, p) = leapfrog(&target, &q0, &p0, 0.0, &inv);
    assert_eq!((q, p), (q0, p0));
}

#[test]
fn energy_error_is_second_order() {
    let target = Gaussian::standard(1);
    let inv = [1.0];
    let ham = Hamiltonian { target: &target, inv_metric: &inv };
    let error = |eps: f64| {
        // Integrate to a fixed time so the global error is compared.
        let mut z = PhasePoint::new(&target, vec![1.0], vec![0.5]);
        let h0 = ham.energy(&z);
        let steps = (1.0 / eps).round() as usize;
        for _ in 0..steps {
            ham.leapfrog(&mut z, eps);
        }
        (ham.energy(&z) - h0).abs()
    };
    let (e1, e2) = (error(0.1), error(0.05));
    let ratio = e1 / e2;
    assert!((ratio - 4.0).abs() < 0.4, "{e1} / {e2} = {ratio}");
}

#[test]
fn leapfrog_preserves_volume() {
    let target = Gaussian {
        mean: vec![0.0, 1.0],
        sd: vec![0.7, 2.0],
    };
    let inv = [1.5, 0.5];
    let x0 = [0.3, -0.4, 0.8, 0.1];
    let map = |x: &[f64]| -> Vec<f64> {
        let (mut q, mut p) = (x[..2].to_vec(), x[2..].to_vec());
        for _ in 0..7 {
            (q, p) = leapfrog(&target, &q, &p, 0.3, &inv);
        }
        q.into_iter().chain(p).collect()
    };
    let h = 1e-6;
    let mut j = vec![vec![0.0; 4]; 4];
    for k in 0..4 {
        let mut xp = x0.to_vec();
        xp[k] += h;
        let mut xm = x0.to_vec();
        xm[k] -= h;
        let (fp, fm) = (map(&xp), map(&xm));
        for i in 0..4 {
            j[i][k] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let det = det4(j);
    assert!((det - 1.0).abs() < 1e-6, "{det}");
}

fn det4(mut a: Vec<Vec<f64>>) -> f64 {
    let mut det = 1.0;
    for c in 0..4 {
        let p = (c..4).max_by(|&i, &k| a[i][c].abs().total_cmp(&a[k][c].abs())).unwrap();
        if p != c {
            a.swap(c, p);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..4 {
            let m = a[r][c] / a[c][c];
            for k in c..4 {
                a[r][k] -= m * a[c][k];
            }
        }
    }
    det
}

#[test]
fn flat_target_keeps_finite_step_size() {
    let d = run_chains(&Flat(3), names(3), &config(2, 200, 5)).unwrap();
    for c in &d.chains {
        assert!(c.step_size.is_finite() && c.step_size > 0.0);
        assert!(c.draws.iter().all(|x| x.is_finite()));
        assert!(c.stats.iter().all(|s| s.accept_stat.is_finite()));
    }
}

#[test]
fn same_seed_reproduces_draws_and_files() {
    let target = Gaussian {
        mean: vec![1.0, -2.0, 0.0],
        sd: vec![0.1, 1.0, 10.0],
    };
    let a = run_chains(&target, names(3), &config(3, 300, 9)).unwrap();
    let b = run_chains(&target, names(3), &config(3, 300, 9)).unwrap();
    let c = run_chains(&target, names(3), &config(3, 300, 10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.chains[0].draws, c.chains[0].draws);
    assert_ne!(a.chains[0].draws, a.chains[1].draws);
    for (x, y) in a.chains.iter().zip(&b.chains) {
        let (mut bx, mut by) = (Vec::new(), Vec::new());
        write_chain_csv(&mut bx, &a.names, x).unwrap();
        write_chain_csv(&mut by, &b.names, y).unwrap();
        assert_eq!(bx, by);
        let (n, back) = read_chain_csv(bx.as_slice(), x.chain).unwrap();
        assert_eq!(n, a.names);
        assert_eq!(back.draws, x.draws);
    }
}

#[test]
fn single_chain_has_no_rhat() {
    let d = run_chains(&Gaussian::standard(2), names(2), &config(1, 100, 6)).unwrap();
    assert_eq!(d.n_chains(), 1);
    assert!(split_rhat(&d.coordinate(0)).is_none());
    assert!(ess(&d.coordinate(0)) > 0.0);
}

#[test]
fn kept_rows_exclude_warmup() {
    let cfg = SamplerConfig {
        warmup_fraction: 0.3,
        ..config(2, 100, 7)
    };
    let d = run_chains(&Gaussian::standard(2), names(2), &cfg).unwrap();
    for c in &d.chains {
        assert_eq!(c.len(), 70);
        assert_eq!(c.stats.len(), 70);
        assert!(c.stats.iter().all(|s| s.tree_depth <= cfg.max_tree_depth));
    }
}

#[test]
fn invalid_configs_rejected() {
    let t = Gaussian::standard(1);
    for bad in [
        SamplerConfig { chains: 0, ..SamplerConfig::default() },
        SamplerConfig { iterations: 10, ..SamplerConfig::default() },
        SamplerConfig { warmup_fraction: 1.0, ..SamplerConfig::default() },
        SamplerConfig { warmup_fraction: 0.0, ..SamplerConfig::default() },
        SamplerConfig { target_accept: 1.0, ..SamplerConfig::default() },
    ] {
        assert!(run_chains(&t, names(1), &bad).is_err(), "{bad:?}");
    }
}
