//! Simulates the default scenario, fits it, and prints structural summaries
//! next to the generating values.
//!
//! Usage: `cargo run --release --example recovery -- [seed] [iterations] [family] [centered]`

use std::sync::Arc;
use std::time::Instant;

use bridge_mixed::data::{build_design, pattern_table};
use bridge_mixed::inference::{structural_draws, summarize};
use bridge_mixed::model::{ModelData, ModelFamily, ModelSpec};
use bridge_mixed::posterior::{sample, Parameterization, PosteriorTarget};
use bridge_mixed::sampler::{diagnostics, SamplerConfig};
use bridge_mixed::simulate::{simulate_dataset, SimSpec};

fn main() -> bridge_mixed::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let iterations: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let family: ModelFamily = match args.get(3) {
        Some(s) => s.parse()?,
        None => ModelFamily::ModifiedBridgeBridge,
    };

    let spec = SimSpec { seed, ..Default::default() };
    let (ds, truth) = simulate_dataset(&spec)?;
    let potential: usize = ds.n_individuals() * spec.waves.len();
    println!(
        "families {} individuals {} records {} missing {:.1}%",
        ds.n_families(),
        ds.n_individuals(),
        ds.n_records(),
        100.0 * (1.0 - ds.n_records() as f64 / potential as f64)
    );
    for row in pattern_table(&ds, &spec.waves) {
        println!("  {:?} {} {}", row.pattern, row.family_count, row.individual_count);
    }

    let design = build_design(&ds, &spec.design_spec())?;
    let beta_names = design.column_names().to_vec();
    let data = Arc::new(ModelData::new(&ds, design)?);
    let target = PosteriorTarget::new(ModelSpec::new(family, ds.categories())?, data.clone())?;
    let config = SamplerConfig { iterations, seed, ..Default::default() };
    let start = Instant::now();
    let param = match args.get(4).map(String::as_str) {
        Some("centered") => Parameterization::Centered,
        _ => Parameterization::NonCentered,
    };
    let draws = sample(&target, &config, param)?;
    println!("sampling took {:.1?}", start.elapsed());
    for c in &draws.chains {
        let depth: f64 = c.stats.iter().map(|s| s.tree_depth as f64).sum::<f64>() / c.len() as f64;
        let acc: f64 = c.stats.iter().map(|s| s.accept_stat).sum::<f64>() / c.len() as f64;
        println!(
            "chain {} eps {:.4} mean depth {:.2} accept {:.3} divergent {}",
            c.chain,
            c.step_size,
            depth,
            acc,
            c.divergences()
        );
    }

    let structural = structural_draws(&draws, target.layout(), &beta_names)?;
    let rows = summarize(&structural, false)?;
    let truth_values = truth.structural_values();
    for (k, row) in rows.iter().enumerate() {
        let rhat = diagnostics::split_rhat(&structural.per_chain(k));
        let ess = diagnostics::ess(&structural.per_chain(k));
        let t = truth_values.get(k).copied().unwrap_or(f64::NAN);
        println!(
            "{:<22} truth {:>8.4} mean {:>8.4} sd {:.4} ci [{:>8.4}, {:>8.4}] rhat {:.4} ess {:.0}",
            row.name,
            t,
            row.mean,
            row.sd,
            row.q025,
            row.q975,
            rhat.unwrap_or(f64::NAN),
            ess
        );
    }
    let worst = (0..draws.dim())
        .filter_map(|k| diagnostics::split_rhat(&draws.coordinate(k)))
        .fold(0.0f64, f64::max);
    println!("max R-hat over all coordinates {worst:.4}");
    Ok(())
}
