//! One function per subcommand. Each writes its artifacts into the output
//! directory and returns the text printed to stdout.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bridge_mixed::data::{
    build_design, load_dataset, pattern_table, validate, write_dataset, write_pattern_csv, DesignSpec, PanelDataset,
    PatternRow, Schema,
};
use bridge_mixed::inference::{
    align_table, criteria, fmt_sig, marginalize, pointwise_loglik, ppc, ppc_text, structural_draws, summarize,
    summary_text, write_ppc_csv, write_summary_csv, Criteria, PpcTable,
};
use bridge_mixed::model::{Layout, ModelData, ModelFamily, ModelSpec};
use bridge_mixed::posterior::{sample, Parameterization, PosteriorTarget};
use bridge_mixed::sampler::diagnostics::{ess, split_rhat};
use bridge_mixed::sampler::{read_chain_file, write_chain_file, PosteriorDraws, SamplerConfig};
use bridge_mixed::simulate::{simulate_dataset, CovariateGen};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, ModelConfig, RunConfig};
use crate::error::{CliError, Result};

/// Everything needed to reload a fit: written as `fit.json` next to the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitManifest {
    pub family: ModelFamily,
    pub parameterization: Parameterization,
    pub data_path: PathBuf,
    pub schema: Schema,
    pub design: DesignSpec,
    pub beta_names: Vec<String>,
    pub layout: Layout,
    pub sampler: SamplerConfig,
    pub chain_files: Vec<String>,
}

pub const FIT_MANIFEST: &str = "fit.json";

/// Artifact paths produced by a command, relative to the output directory.
pub type Artifacts = Vec<String>;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    write_text(path, &(text + "\n"))
}

fn load_data(data: &DataConfig) -> Result<PanelDataset> {
    Ok(load_dataset(data.require_path()?, &data.schema())?)
}

// ---------------------------------------------------------------------------

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(String, Artifacts)> {
    create_dir(out)?;
    let spec = &cfg.simulate;
    let (ds, truth) = simulate_dataset(spec)?;
    write_dataset(&ds, &out.join("panel.csv"))?;
    truth.write(&out.join("truth.json"))?;

    // A config that fits the simulated panel with the generating design.
    let mut fit_cfg = RunConfig::default();
    fit_cfg.data = DataConfig {
        path: Some(PathBuf::from("panel.csv")),
        categories: Some(spec.categories()),
        categorical: spec
            .covariates
            .iter()
            .filter(|c| matches!(c, CovariateGen::Categorical { .. }))
            .map(|c| c.name().to_string())
            .collect(),
        ..DataConfig::default()
    };
    fit_cfg.model = ModelConfig {
        family: spec.family,
        covariates: spec.design_spec().terms,
        ..ModelConfig::default()
    };
    fit_cfg.output.dir = PathBuf::from("fit");
    #[derive(Serialize)]
    struct FitSections<'a> {
        output: &'a crate::config::OutputConfig,
        data: &'a DataConfig,
        model: &'a ModelConfig,
    }
    let sections = FitSections {
        output: &fit_cfg.output,
        data: &fit_cfg.data,
        model: &fit_cfg.model,
    };
    write_text(&out.join("fit.toml"), &toml::to_string(&sections).expect("serializable"))?;

    let potential = ds.n_individuals() * spec.waves.len();
    let text = format!(
        "{}missing records: {:.1}% of {potential}\n",
        validate(&ds),
        100.0 * (1.0 - ds.n_records() as f64 / potential as f64)
    );
    Ok((text, vec!["panel.csv".into(), "truth.json".into(), "fit.toml".into()]))
}

// ---------------------------------------------------------------------------

pub fn fit(cfg: &RunConfig, out: &Path) -> Result<(String, Artifacts)> {
    let data_path = cfg.data.require_path()?;
    let ds = load_data(&cfg.data)?;
    let design_spec = cfg.model.design_spec();
    let design = build_design(&ds, &design_spec)?;
    let beta_names = design.column_names().to_vec();
    let data = Arc::new(ModelData::new(&ds, design)?);
    let mut spec = ModelSpec::new(cfg.model.family, ds.categories())?;
    spec.priors = cfg.model.priors;
    let target = PosteriorTarget::new(spec, data)?;
    let draws = sample(&target, &cfg.sampler, cfg.model.parameterization)?;

    create_dir(out)?;
    let mut artifacts = Vec::new();
    for c in &draws.chains {
        let name = format!("chain_{}.csv", c.chain + 1);
        write_chain_file(&out.join(&name), &draws.names, c)?;
        artifacts.push(name);
    }
    let manifest = FitManifest {
        family: cfg.model.family,
        parameterization: cfg.model.parameterization,
        data_path: fs::canonicalize(data_path).map_err(|e| CliError::io(data_path, e))?,
        schema: cfg.data.schema(),
        design: design_spec,
        beta_names,
        layout: *target.layout(),
        sampler: cfg.sampler.clone(),
        chain_files: artifacts.clone(),
    };
    write_json(&out.join(FIT_MANIFEST), &manifest)?;
    artifacts.push(FIT_MANIFEST.into());

    write_diagnostics(&out.join("diagnostics.csv"), &draws)?;
    write_chain_summary(&out.join("chains.csv"), &draws)?;
    artifacts.extend(["diagnostics.csv".into(), "chains.csv".into()]);

    let text = fit_report(&draws, &manifest)?;
    Ok((text, artifacts))
}

/// R-hat and ESS of every sampled coordinate.
fn write_diagnostics(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["name", "mean", "sd", "rhat", "ess"])?;
    for (k, name) in draws.names.iter().enumerate() {
        let chains = draws.coordinate(k);
        let pooled = chains.concat();
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let sd = (pooled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        w.write_record([
            name.clone(),
            fmt_sig(mean),
            fmt_sig(sd),
            split_rhat(&chains).map(fmt_sig).unwrap_or_default(),
            fmt_sig(ess(&chains)),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_chain_summary(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["chain", "step_size", "mean_tree_depth", "mean_accept_stat", "divergences"])?;
    for c in &draws.chains {
        let n = c.len() as f64;
        w.write_record([
            (c.chain + 1).to_string(),
            fmt_sig(c.step_size),
            fmt_sig(c.stats.iter().map(|s| s.tree_depth as f64).sum::<f64>() / n),
            fmt_sig(c.stats.iter().map(|s| s.accept_stat).sum::<f64>() / n),
            c.divergences().to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn fit_report(draws: &PosteriorDraws, manifest: &FitManifest) -> Result<String> {
    let structural = structural_draws(draws, &manifest.layout, &manifest.beta_names)?;
    let rows = summarize(&structural, false)?;
    let body: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let chains = structural.per_chain(k);
            vec![
                r.name.clone(),
                fmt_sig(r.mean),
                fmt_sig(r.sd),
                split_rhat(&chains).map(fmt_sig).unwrap_or_else(|| "-".into()),
                fmt_sig(ess(&chains)),
            ]
        })
        .collect();
    let header = ["Parameter", "Mean", "SD", "R-hat", "ESS"].map(String::from);
    let worst = (0..draws.dim())
        .filter_map(|k| split_rhat(&draws.coordinate(k)))
        .fold(f64::NAN, f64::max);
    Ok(format!(
        "{}: {} chains x {} draws, {} divergences, max R-hat over all coordinates {}\n{}",
        manifest.family.label(),
        draws.n_chains(),
        draws.chains.first().map_or(0, |c| c.len()),
        draws.divergences(),
        fmt_sig(worst),
        align_table(&header, &body)
    ))
}

// ---------------------------------------------------------------------------

/// A fit reloaded from its output directory.
pub struct LoadedFit {
    pub dir: PathBuf,
    pub manifest: FitManifest,
    pub draws: PosteriorDraws,
}

impl LoadedFit {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(FIT_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let manifest: FitManifest = serde_json::from_str(&text).map_err(|e| CliError {
            category: "invalid",
            message: format!("{}: {e}", path.display()),
        })?;
        let mut names = Vec::new();
        let mut chains = Vec::new();
        for (c, file) in manifest.chain_files.iter().enumerate() {
            let (n, chain) = read_chain_file(&dir.join(file), c)?;
            if !names.is_empty() && n != names {
                return Err(CliError {
                    category: "invalid",
                    message: format!("{file}: columns differ from the first chain"),
                });
            }
            names = n;
            chains.push(chain);
        }
        if names.len() != manifest.layout.dim() {
            return Err(CliError {
                category: "invalid",
                message: format!(
                    "{}: draws have {} coordinates, the model has {}",
                    dir.display(),
                    names.len(),
                    manifest.layout.dim()
                ),
            });
        }
        Ok(LoadedFit {
            dir: dir.to_path_buf(),
            manifest,
            draws: PosteriorDraws { names, chains },
        })
    }

    pub fn label(&self) -> String {
        self.dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.manifest.family.as_str().to_string())
    }

    /// Rebuilds the model data the fit was run on.
    pub fn model_data(&self) -> Result<ModelData> {
        let ds = load_dataset(&self.manifest.data_path, &self.manifest.schema)?;
        let design = build_design(&ds, &self.manifest.design)?;
        let data = ModelData::new(&ds, design)?;
        if data.layout(self.manifest.family) != self.manifest.layout {
            return Err(CliError {
                category: "invalid",
                message: format!(
                    "{} no longer matches the data the fit was run on",
                    self.manifest.data_path.display()
                ),
            });
        }
        Ok(data)
    }
}

fn require_fits(fits: &[PathBuf], section: &str) -> Result<Vec<LoadedFit>> {
    if fits.is_empty() {
        return Err(CliError::config(format!("{section}.fits must list at least one fit directory")));
    }
    fits.iter().map(|d| LoadedFit::load(d)).collect()
}

// ---------------------------------------------------------------------------

pub fn summarize_fit(cfg: &RunConfig, out: &Path) -> Result<(String, Artifacts)> {
    let dir = cfg
        .summarize
        .fit
        .as_deref()
        .ok_or_else(|| CliError::config("summarize.fit is required"))?;
    let fit = LoadedFit::load(dir)?;
    let m = &fit.manifest;
    create_dir(out)?;

    let conditional = summarize(
        &structural_draws(&fit.draws, &m.layout, &m.beta_names)?,
        cfg.summarize.odds_change,
    )?;
    write_summary_csv(create(&out.join("conditional.csv"))?, &conditional)?;
    let mut text = format!("Conditional results, {}\n{}", m.family.label(), summary_text(&conditional));
    let mut artifacts = vec!["conditional.csv".to_string()];

    if m.family == ModelFamily::NormalNormal {
        text.push_str("\nMarginal results are not available for normal random effects.\n");
    } else {
        let marginal = summarize(&marginalize(&fit.draws, &m.layout, &m.beta_names)?, cfg.summarize.odds_change)?;
        write_summary_csv(create(&out.join("marginal.csv"))?, &marginal)?;
        artifacts.push("marginal.csv".into());
        let _ = write!(
            text,
            "\nMarginal results, {}\n{}Marginal thresholds use the coefficient scaling and are not validated.\n",
            m.family.label(),
            summary_text(&marginal)
        );
    }
    write_text(&out.join("summary.txt"), &text)?;
    artifacts.push("summary.txt".into());
    Ok((text, artifacts))
}

// ---------------------------------------------------------------------------

pub fn compare(cfg: &RunConfig, out: &Path) -> Result<(String, Artifacts)> {
    let fits = require_fits(&cfg.compare.fits, "compare")?;
    let mut rows: Vec<(String, ModelFamily, Criteria, usize)> = Vec::new();
    for f in &fits {
        let data = f.model_data()?;
        let ll = pointwise_loglik(&f.draws, &data, &f.manifest.layout)?;
        let c = criteria(&ll)?;
        let zero = bridge_mixed::inference::lpml(&ll)?.zero_likelihood.len();
        rows.push((f.label(), f.manifest.family, c, zero));
    }
    create_dir(out)?;
    let path = out.join("compare.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["model", "family", "waic", "lppd", "p_waic", "lpml", "zero_likelihood"])?;
    for (label, family, c, zero) in &rows {
        w.write_record([
            label.clone(),
            family.as_str().to_string(),
            fmt_sig(c.waic),
            fmt_sig(c.lppd),
            fmt_sig(c.p_waic),
            fmt_sig(c.lpml),
            zero.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let header = ["Model", "Family", "WAIC", "p_WAIC", "LPML"].map(String::from);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, family, c, _)| {
            vec![
                label.clone(),
                family.label().to_string(),
                fmt_sig(c.waic),
                fmt_sig(c.p_waic),
                fmt_sig(c.lpml),
            ]
        })
        .collect();
    let best_waic = rows.iter().min_by(|a, b| a.2.waic.total_cmp(&b.2.waic)).unwrap();
    let best_lpml = rows.iter().max_by(|a, b| a.2.lpml.total_cmp(&b.2.lpml)).unwrap();
    let mut text = align_table(&header, &body);
    let _ = writeln!(text, "lowest WAIC: {}", best_waic.0);
    let _ = writeln!(text, "highest LPML: {}", best_lpml.0);
    for (label, _, _, zero) in &rows {
        if *zero > 0 {
            let _ = writeln!(text, "warning: {label}: {zero} observations have zero likelihood under some draw");
        }
    }
    write_text(&out.join("compare.txt"), &text)?;
    Ok((text, vec!["compare.csv".into(), "compare.txt".into()]))
}

// ---------------------------------------------------------------------------

pub fn ppc_tables(cfg: &RunConfig, out: &Path) -> Result<(String, Artifacts)> {
    let fits = require_fits(&cfg.ppc.fits, "ppc")?;
    let mut tables: Vec<(String, PpcTable)> = Vec::new();
    for (k, f) in fits.iter().enumerate() {
        let data = f.model_data()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.ppc.seed);
        rng.set_stream(k as u64);
        tables.push((f.label(), ppc(&f.draws, &data, &f.manifest.layout, &mut rng)?));
    }
    create_dir(out)?;
    let path = out.join("ppc.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["model", "code", "mean_pct", "sd_pct"])?;
    for (label, t) in &tables {
        let mut buf = Vec::new();
        write_ppc_csv(&mut buf, t)?;
        let mut r = csv::Reader::from_reader(buf.as_slice());
        for rec in r.records() {
            let rec = rec?;
            w.write_record([label.as_str(), &rec[0], &rec[1], &rec[2]])?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let text = format!(
        "Observed minus replicated category, percent of records\n{}",
        ppc_text(&tables)
    );
    write_text(&out.join("ppc.txt"), &text)?;
    Ok((text, vec!["ppc.csv".into(), "ppc.txt".into()]))
}

// ---------------------------------------------------------------------------

pub fn patterns(cfg: &RunConfig, out: &Path) -> Result<(String, Artifacts)> {
    let ds = load_data(&cfg.data)?;
    let waves = cfg.patterns.waves.clone().unwrap_or_else(|| ds.waves());
    let table = pattern_table(&ds, &waves);
    create_dir(out)?;
    write_pattern_csv(&table, &waves, create(&out.join("patterns.csv"))?)?;
    let text = patterns_text(&table, &waves);
    write_text(&out.join("patterns.txt"), &text)?;
    Ok((text, vec!["patterns.csv".into(), "patterns.txt".into()]))
}

fn patterns_text(table: &[PatternRow], waves: &[i64]) -> String {
    let mut header: Vec<String> = waves.iter().map(|w| w.to_string()).collect();
    header.push("Families".into());
    header.push("Individuals".into());
    let body: Vec<Vec<String>> = table
        .iter()
        .map(|r| {
            let mut cells: Vec<String> = r.pattern.iter().map(|&p| if p { "x" } else { "." }.to_string()).collect();
            cells.push(r.family_count.to_string());
            cells.push(r.individual_count.to_string());
            cells
        })
        .collect();
    align_table(&header, &body)
}
