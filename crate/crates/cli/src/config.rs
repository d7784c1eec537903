//! Run configuration read from a TOML file. Every section is optional and
//! every key has a default; unknown keys are rejected.

use std::path::{Path, PathBuf};

use bridge_mixed::data::{CovariateTerm, DesignSpec, Schema};
use bridge_mixed::model::{ModelFamily, PriorSpec};
use bridge_mixed::posterior::Parameterization;
use bridge_mixed::sampler::SamplerConfig;
use bridge_mixed::simulate::SimSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the seed of whichever section the command uses.
    pub seed: Option<u64>,
    /// Worker threads; all available cores when absent.
    pub threads: Option<usize>,
    pub output: OutputConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub simulate: SimSpec,
    pub summarize: SummarizeConfig,
    pub compare: FitList,
    pub ppc: PpcConfig,
    pub patterns: PatternsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

/// Input panel in long format, one row per individual and wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub family_id: String,
    pub individual_id: String,
    pub wave: String,
    pub outcome: String,
    pub categories: Option<usize>,
    pub covariates: Option<Vec<String>>,
    pub categorical: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = Schema::default();
        DataConfig {
            path: None,
            family_id: s.family_id,
            individual_id: s.individual_id,
            wave: s.wave,
            outcome: s.outcome,
            categories: s.categories,
            covariates: s.covariates,
            categorical: s.categorical,
        }
    }
}

impl DataConfig {
    pub fn schema(&self) -> Schema {
        Schema {
            family_id: self.family_id.clone(),
            individual_id: self.individual_id.clone(),
            wave: self.wave.clone(),
            outcome: self.outcome.clone(),
            categories: self.categories,
            covariates: self.covariates.clone(),
            categorical: self.categorical.clone(),
        }
    }

    pub fn require_path(&self) -> Result<&Path> {
        self.path
            .as_deref()
            .ok_or_else(|| CliError::config("data.path is required for this command"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub parameterization: Parameterization,
    pub priors: PriorSpec,
    /// Design terms in coefficient order.
    pub covariates: Vec<CovariateTerm>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: ModelFamily::ModifiedBridgeBridge,
            parameterization: Parameterization::default(),
            priors: PriorSpec::default(),
            covariates: Vec::new(),
        }
    }
}

impl ModelConfig {
    pub fn design_spec(&self) -> DesignSpec {
        DesignSpec {
            terms: self.covariates.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizeConfig {
    /// Output directory of a `fit` run.
    pub fit: Option<PathBuf>,
    /// Adds the percentage change in odds for coefficients.
    pub odds_change: bool,
}

impl Default for SummarizeConfig {
    fn default() -> Self {
        SummarizeConfig {
            fit: None,
            odds_change: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitList {
    /// Output directories of `fit` runs, in table order.
    pub fits: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpcConfig {
    pub fits: Vec<PathBuf>,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternsConfig {
    /// Waves forming the pattern columns; every wave in the data when absent.
    pub waves: Option<Vec<i64>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string().trim_end().to_string()))
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output.dir);
        if let Some(p) = &mut self.data.path {
            fix(p);
        }
        if let Some(p) = &mut self.summarize.fit {
            fix(p);
        }
        self.compare.fits.iter_mut().for_each(fix);
        self.ppc.fits.iter_mut().for_each(fix);
    }

    /// Pushes the top-level seed into every section that draws random numbers.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.sampler.seed = seed;
        self.simulate.seed = seed;
        self.ppc.seed = seed;
    }

    /// SHA-256 of the effective configuration, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
