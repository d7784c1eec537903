//! Multinomial No-U-Turn transition with a diagonal Euclidean metric.
//!
//! Trajectories are doubled in a random direction until the generalized
//! no-U-turn criterion fails (checked across the whole tree and across each
//! pair of merged subtrees), the energy error exceeds the divergence
//! threshold, or the maximum depth is reached. The outer merge samples with a
//! bias toward the new subtree; inner merges sample uniformly by weight.

use rand::Rng;
use rand_distr::StandardNormal;

use super::LogDensity;

/// Energy error above which a trajectory is flagged divergent.
pub const MAX_ENERGY_ERROR: f64 = 1000.0;

/// Phase-space point with cached log density and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl PhasePoint {
    pub fn new<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>, p: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = target.log_density_grad(&q, &mut grad);
        PhasePoint { q, p, grad, logp }
    }
}

/// Diagonal-metric Hamiltonian; `inv_metric` holds the inverse mass per coordinate.
pub struct Hamiltonian<'a, T: ?Sized> {
    pub target: &'a T,
    pub inv_metric: &'a [f64],
}

impl<T: LogDensity + ?Sized> Hamiltonian<'_, T> {
    pub fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(self.inv_metric)
            .map(|(p, m)| p * p * m)
            .sum::<f64>()
    }

    /// Total energy; NaN is mapped to `+inf`.
    pub fn energy(&self, z: &PhasePoint) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    pub fn velocity(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(self.inv_metric).map(|(p, m)| p * m).collect()
    }

    pub fn sample_momentum<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.inv_metric
            .iter()
            .map(|m| {
                let n: f64 = rng.sample(StandardNormal);
                n / m.sqrt()
            })
            .collect()
    }

    /// One velocity-Verlet step of size `eps` (negative integrates backward).
    pub fn leapfrog(&self, z: &mut PhasePoint, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(self.inv_metric) {
            *q += eps * m * p;
        }
        z.logp = self.target.log_density_grad(&z.q, &mut z.grad);
        if !z.grad.iter().all(|g| g.is_finite()) {
            z.logp = f64::NAN;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }
}

/// Single leapfrog step from `(q, p)`; returns the new position and momentum.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    q: &[f64],
    p: &[f64],
    eps: f64,
    inv_metric: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let ham = Hamiltonian { target, inv_metric };
    let mut z = PhasePoint::new(target, q.to_vec(), p.to_vec());
    ham.leapfrog(&mut z, eps);
    (z.q, z.p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionStats {
    pub step_size: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub accept_stat: f64,
    pub energy: f64,
    pub log_density: f64,
}

#[inline]
fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn no_u_turn(sharp_minus: &[f64], sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(sharp_plus, rho) > 0.0 && dot(sharp_minus, rho) > 0.0
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

struct Tree<'h, 'a, T: ?Sized, R: ?Sized> {
    ham: &'h Hamiltonian<'a, T>,
    rng: &'h mut R,
    eps: f64,
    h0: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

impl<T: LogDensity + ?Sized, R: Rng + ?Sized> Tree<'_, '_, T, R> {
    /// Builds a subtree of `2^depth` steps from `z` in direction `sign`.
    /// `*_beg` refer to the end adjacent to the existing trajectory.
    #[allow(clippy::too_many_arguments)]
    fn build(
        &mut self,
        depth: usize,
        z: &mut PhasePoint,
        z_propose: &mut PhasePoint,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        sign: f64,
        log_sum_weight: &mut f64,
    ) -> bool {
        if depth == 0 {
            self.ham.leapfrog(z, sign * self.eps);
            self.n_leapfrog += 1;
            let h = self.ham.energy(z);
            if h - self.h0 > MAX_ENERGY_ERROR {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, self.h0 - h);
            self.sum_metro_prob += if self.h0 - h > 0.0 {
                1.0
            } else {
                (self.h0 - h).exp()
            };
            z_propose.clone_from(z);
            *p_sharp_beg = self.ham.velocity(&z.p);
            p_sharp_end.clone_from(p_sharp_beg);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            p_beg.clone_from(&z.p);
            p_end.clone_from(&z.p);
            return !self.divergent;
        }

        let dim = z.q.len();
        let mut lsw_init = f64::NEG_INFINITY;
        let mut p_init_end = vec![0.0; dim];
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        if !self.build(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            sign,
            &mut lsw_init,
        ) {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        if !self.build(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            sign,
            &mut lsw_final,
        ) {
            return false;
        }

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        let accept = (lsw_final - lsw_subtree).exp();
        if lsw_final > lsw_subtree || self.rng.random::<f64>() < accept {
            *z_propose = z_propose_final;
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        no_u_turn(p_sharp_beg, p_sharp_end, &rho_subtree)
            && no_u_turn(p_sharp_beg, &p_sharp_final_beg, &add(&rho_init, &p_final_beg))
            && no_u_turn(&p_sharp_init_end, p_sharp_end, &add(&rho_final, &p_init_end))
    }
}

/// One NUTS transition from `current`. Returns the new point and statistics.
pub fn transition<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    ham: &Hamiltonian<'_, T>,
    current: &PhasePoint,
    eps: f64,
    max_depth: usize,
    rng: &mut R,
) -> (PhasePoint, TransitionStats) {
    let mut z0 = current.clone();
    z0.p = ham.sample_momentum(rng);
    let h0 = ham.energy(&z0);
    let dim = z0.q.len();

    let mut z_fwd = z0.clone();
    let mut z_bck = z0.clone();
    let mut z_sample = z0.clone();
    let mut z_propose = z0.clone();

    // Endpoint momenta of the whole trajectory, in time order.
    let mut p_bck = z0.p.clone();
    let mut p_fwd = z0.p.clone();
    let mut sharp_bck = ham.velocity(&z0.p);
    let mut sharp_fwd = sharp_bck.clone();
    let mut rho = z0.p.clone();
    let mut log_sum_weight = 0.0;

    let mut tree = Tree {
        ham,
        rng,
        eps,
        h0,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };
    let mut depth = 0;
    while depth < max_depth {
        let forward = tree.rng.random::<f64>() > 0.5;
        let mut new_beg_p = vec![0.0; dim];
        let mut new_end_p = vec![0.0; dim];
        let mut new_beg_sharp = vec![0.0; dim];
        let mut new_end_sharp = vec![0.0; dim];
        let mut rho_new = vec![0.0; dim];
        let mut lsw_subtree = f64::NEG_INFINITY;
        let edge = if forward { &mut z_fwd } else { &mut z_bck };
        let valid = tree.build(
            depth,
            edge,
            &mut z_propose,
            &mut new_beg_sharp,
            &mut new_end_sharp,
            &mut rho_new,
            &mut new_beg_p,
            &mut new_end_p,
            if forward { 1.0 } else { -1.0 },
            &mut lsw_subtree,
        );
        if !valid {
            break;
        }
        depth += 1;

        if lsw_subtree > log_sum_weight {
            z_sample.clone_from(&z_propose);
        } else {
            let accept = (lsw_subtree - log_sum_weight).exp();
            if tree.rng.random::<f64>() < accept {
                z_sample.clone_from(&z_propose);
            }
        }
        log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

        let (far_sharp, near_p, near_sharp) = if forward {
            (&sharp_bck, &p_fwd, &sharp_fwd)
        } else {
            (&sharp_fwd, &p_bck, &sharp_bck)
        };
        let rho_total = add(&rho, &rho_new);
        let persist = no_u_turn(far_sharp, &new_end_sharp, &rho_total)
            && no_u_turn(far_sharp, &new_beg_sharp, &add(&rho, &new_beg_p))
            && no_u_turn(near_sharp, &new_end_sharp, &add(&rho_new, near_p));
        if forward {
            p_fwd = new_end_p;
            sharp_fwd = new_end_sharp;
        } else {
            p_bck = new_end_p;
            sharp_bck = new_end_sharp;
        }
        rho = rho_total;
        if !persist {
            break;
        }
    }

    let n_leapfrog = tree.n_leapfrog;
    let accept_stat = if n_leapfrog > 0 {
        tree.sum_metro_prob / n_leapfrog as f64
    } else {
        0.0
    };
    let divergent = tree.divergent;
    let energy = ham.energy(&z_sample);
    let stats = TransitionStats {
        step_size: eps,
        tree_depth: depth,
        n_leapfrog,
        divergent,
        accept_stat,
        energy,
        log_density: z_sample.logp,
    };
    (z_sample, stats)
}
