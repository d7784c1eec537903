//! Convergence diagnostics: split R-hat and effective sample size.

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Splits each chain into halves, dropping the middle draw of odd lengths.
fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(&c[..half]);
        out.push(&c[c.len() - half..]);
    }
    out
}

/// Split R-hat. `None` with fewer than two chains, fewer than four draws per
/// chain, or zero within-chain variance.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    if chains.len() < 2 {
        return None;
    }
    let min_len = chains.iter().map(Vec::len).min()?;
    if min_len < 4 {
        return None;
    }
    let parts = split(chains);
    let n = parts[0].len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = parts.iter().map(|p| sample_var(p)).sum::<f64>() / parts.len() as f64;
    if !(w > 0.0) || !w.is_finite() {
        return None;
    }
    let b = n * sample_var(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

/// Autocovariance at `lag` of a chain with known mean (biased, divide by n).
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Effective sample size over split chains with Geyer's initial monotone
/// sequence estimator. Returns the total draw count for constant input.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let Some(min_len) = chains.iter().map(Vec::len).min() else {
        return 0.0;
    };
    if min_len < 4 {
        return f64::NAN;
    }
    let parts = split(chains);
    let m = parts.len() as f64;
    let n = parts[0].len();
    let total = m * n as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let vars: Vec<f64> = parts.iter().map(|p| sample_var(p)).collect();
    let w = mean(&vars);
    if !(w > 0.0) || !w.is_finite() {
        return total;
    }
    let b_over_n = if parts.len() > 1 { sample_var(&means) } else { 0.0 };
    let var_plus = w * (n as f64 - 1.0) / n as f64 + b_over_n;

    let rho = |lag: usize| -> f64 {
        let acov = parts
            .iter()
            .zip(&means)
            .map(|(p, &mu)| autocov(p, mu, lag))
            .sum::<f64>()
            / m;
        1.0 - (w - acov) / var_plus
    };

    let mut rho_hat = vec![0.0; n];
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[0] = even;
    rho_hat[1] = odd;
    let mut s = 1;
    while s + 4 < n && even + odd > 0.0 {
        even = rho(s + 1);
        odd = rho(s + 2);
        if even + odd >= 0.0 {
            rho_hat[s + 1] = even;
            rho_hat[s + 2] = odd;
        }
        s += 2;
    }
    let max_s = s;
    if even > 0.0 && max_s + 1 < n {
        rho_hat[max_s + 1] = even;
    }
    // Monotone pair sums.
    let mut s = 1;
    while s + 3 <= max_s {
        if rho_hat[s + 1] + rho_hat[s + 2] > rho_hat[s - 1] + rho_hat[s] {
            rho_hat[s + 1] = (rho_hat[s - 1] + rho_hat[s]) / 2.0;
            rho_hat[s + 2] = rho_hat[s + 1];
        }
        s += 2;
    }
    let tau = -1.0 + 2.0 * rho_hat[..max_s].iter().sum::<f64>()
        + rho_hat.get(max_s + 1).copied().unwrap_or(0.0);
    let tau = tau.max(1.0 / total.log10());
    total / tau
}
