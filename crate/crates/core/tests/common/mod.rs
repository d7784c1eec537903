#![allow(dead_code)]

use std::sync::Arc;

use bridge_mixed::data::{build_design, CovariateTerm, CovariateValue, DesignSpec, PanelDataset, PanelRecord};
use bridge_mixed::model::{ModelData, ModelFamily, ModelSpec};
use bridge_mixed::posterior::PosteriorTarget;

// Gauss-Kronrod 7/15 abscissae and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, (k - g).abs() * h)
}

fn adapt(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let (k, err) = gk15(f, a, b);
    if err <= tol || depth == 0 {
        return k;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth - 1) + adapt(f, m, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss-Kronrod quadrature on a finite interval.
pub fn integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    adapt(&mut f, a, b, tol, 40)
}

/// Integral over the real line via `x = s t / (1 - t^2)`.
pub fn integrate_line(mut f: impl FnMut(f64) -> f64, scale: f64, tol: f64) -> f64 {
    integrate(
        |t| {
            let d = 1.0 - t * t;
            let x = scale * t / d;
            let jac = scale * (1.0 + t * t) / (d * d);
            let v = f(x);
            if v == 0.0 {
                0.0
            } else {
                v * jac
            }
        },
        -1.0,
        1.0,
        tol,
    )
}

/// Integral over `(-inf, upper]` via `x = upper - s t / (1 - t)`.
pub fn integrate_below(mut f: impl FnMut(f64) -> f64, upper: f64, scale: f64, tol: f64) -> f64 {
    integrate(
        |t| {
            let d = 1.0 - t;
            let x = upper - scale * t / d;
            let v = f(x);
            if v == 0.0 {
                0.0
            } else {
                v * scale / (d * d)
            }
        },
        0.0,
        1.0,
        tol,
    )
}

/// Integral over `[0, inf)` via `x = s t / (1 - t)`.
pub fn integrate_half(mut f: impl FnMut(f64) -> f64, scale: f64, tol: f64) -> f64 {
    integrate_below(|x| f(-x), 0.0, scale, tol)
}

/// Two-sided Kolmogorov-Smirnov distance between a sample and a CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Two families, six individuals, three waves with gaps, three categories
/// and one real plus one three-level covariate.
pub fn toy_dataset() -> PanelDataset {
    let layout = [
        ("f1", "a", vec![1, 2, 3]),
        ("f1", "b", vec![1, 3]),
        ("f1", "c", vec![2, 3]),
        ("f2", "d", vec![1, 2, 3]),
        ("f2", "e", vec![1]),
        ("f2", "f", vec![2, 3]),
    ];
    let levels = ["lo", "mid", "hi"];
    let mut records = Vec::new();
    let mut n = 0usize;
    for (f, i, waves) in &layout {
        for &w in waves {
            records.push(PanelRecord {
                family_id: (*f).into(),
                individual_id: (*i).into(),
                wave: w,
                outcome: (n * 5 % 3) as u32 + 1,
                covariates: vec![
                    CovariateValue::Real(((n * 37 % 11) as f64 - 5.0) / 4.0),
                    CovariateValue::Level(levels[n * 7 % 3].into()),
                ],
            });
            n += 1;
        }
    }
    PanelDataset::new(records, 3, vec!["x".into(), "g".into()]).unwrap()
}

pub fn toy_design_spec() -> DesignSpec {
    DesignSpec {
        terms: vec![
            CovariateTerm::Real {
                name: "x".into(),
                log1p: false,
            },
            CovariateTerm::Categorical {
                name: "g".into(),
                reference: "lo".into(),
            },
        ],
    }
}

pub fn model_data(ds: &PanelDataset, spec: &DesignSpec) -> Arc<ModelData> {
    let design = build_design(ds, spec).unwrap();
    Arc::new(ModelData::new(ds, design).unwrap())
}

pub fn toy_target(family: ModelFamily) -> PosteriorTarget {
    let ds = toy_dataset();
    let data = model_data(&ds, &toy_design_spec());
    PosteriorTarget::new(ModelSpec::new(family, 3).unwrap(), data).unwrap()
}

/// `|a - b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Largest relative error between the analytic gradient and central
/// differences of the log posterior at `z`.
pub fn gradient_error(target: &PosteriorTarget, z: &[f64]) -> f64 {
    let g = target.grad_log_posterior(z).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..z.len() {
        let h = 1e-5 * z[k].abs().max(1.0);
        let mut zp = z.to_vec();
        zp[k] += h;
        let mut zm = z.to_vec();
        zm[k] -= h;
        let fd = (target.log_posterior(&zp).unwrap() - target.log_posterior(&zm).unwrap()) / (2.0 * h);
        worst = worst.max(rel_err(g[k], fd));
    }
    worst
}
