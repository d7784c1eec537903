//! Warm-up adaptation: dual-averaging step size and windowed estimation of a
//! diagonal inverse metric.

/// Floor applied to adapted inverse-metric entries.
pub const MIN_INV_METRIC: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct DualAveraging {
    pub delta: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub t0: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(target_accept: f64) -> Self {
        DualAveraging {
            delta: target_accept,
            gamma: 0.05,
            kappa: 0.75,
            t0: 10.0,
            mu: 0.0,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    /// Restarts the averages and centres the shrinkage target on `10 * eps`.
    pub fn restart(&mut self, eps: f64) {
        self.mu = (10.0 * eps).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Updates with one acceptance statistic and returns the next step size.
    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let stat = if accept_stat.is_nan() { 0.0 } else { accept_stat.min(1.0) };
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        clamp_step(x.exp())
    }

    /// Final step size: the exponentiated iterate average.
    pub fn final_step(&self) -> f64 {
        clamp_step(self.x_bar.exp())
    }
}

pub(crate) fn clamp_step(eps: f64) -> f64 {
    if eps.is_nan() {
        1e-3
    } else {
        eps.clamp(1e-12, 1e7)
    }
}

/// Welford accumulator for per-coordinate variance.
#[derive(Debug, Clone)]
pub struct WelfordVariance {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl WelfordVariance {
    pub fn new(dim: usize) -> Self {
        WelfordVariance {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn variance(&self) -> Vec<f64> {
        let denom = (self.n.max(2) - 1) as f64;
        self.m2.iter().map(|s| s / denom).collect()
    }

    pub fn reset(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|m| *m = 0.0);
        self.m2.iter_mut().for_each(|m| *m = 0.0);
    }
}

/// Slow-phase window schedule: an initial fast buffer, doubling variance
/// windows, and a terminal fast buffer.
#[derive(Debug, Clone)]
pub struct WindowSchedule {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    enabled: bool,
}

impl WindowSchedule {
    pub fn new(num_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base_window) = (75, 50, 25);
        let enabled = num_warmup >= 20;
        if init_buffer + base_window + term_buffer > num_warmup {
            init_buffer = (0.15 * num_warmup as f64) as usize;
            term_buffer = (0.1 * num_warmup as f64) as usize;
            base_window = num_warmup.saturating_sub(init_buffer + term_buffer);
        }
        WindowSchedule {
            num_warmup,
            init_buffer,
            term_buffer,
            window_size: base_window,
            next_window: (init_buffer + base_window).saturating_sub(1),
            counter: 0,
            enabled,
        }
    }

    fn in_window(&self) -> bool {
        self.enabled
            && self.counter >= self.init_buffer
            && self.counter < self.num_warmup - self.term_buffer
            && self.counter != self.num_warmup
    }

    fn window_end(&self) -> bool {
        self.enabled && self.counter == self.next_window && self.counter != self.num_warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.num_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last {
            let boundary = self.next_window + 2 * self.window_size;
            if boundary >= self.num_warmup - self.term_buffer {
                self.next_window = last;
            }
        }
    }
}

/// Windowed diagonal inverse-metric estimation.
#[derive(Debug, Clone)]
pub struct MetricAdaptation {
    schedule: WindowSchedule,
    estimator: WelfordVariance,
}

impl MetricAdaptation {
    pub fn new(dim: usize, num_warmup: usize) -> Self {
        MetricAdaptation {
            schedule: WindowSchedule::new(num_warmup),
            estimator: WelfordVariance::new(dim),
        }
    }

    /// Feeds one warm-up position. Returns the new inverse metric when a
    /// window closes.
    pub fn learn(&mut self, q: &[f64]) -> Option<Vec<f64>> {
        if self.schedule.in_window() {
            self.estimator.add(q);
        }
        if self.schedule.window_end() {
            self.schedule.compute_next_window();
            let n = self.estimator.count() as f64;
            let var = self
                .estimator
                .variance()
                .into_iter()
                .map(|v| {
                    let reg = (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0));
                    if reg.is_finite() {
                        reg.max(MIN_INV_METRIC)
                    } else {
                        1.0
                    }
                })
                .collect();
            self.estimator.reset();
            self.schedule.counter += 1;
            return Some(var);
        }
        self.schedule.counter += 1;
        None
    }
}
