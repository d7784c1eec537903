//! Long-format three-level panel data: loading, validation, follow-up
//! patterns and design matrices.
//!
//! A record is one (individual, wave) observation. Individuals keep their id
//! when they move to a new household, so the family of a record is resolved
//! per record rather than per individual. Missing waves are simply absent rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariate cell. Real columns may also be used as categorical factors, in
/// which case the level label is the formatted number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateValue {
    Real(f64),
    Level(String),
}

impl CovariateValue {
    fn label(&self) -> String {
        match self {
            CovariateValue::Real(x) => format!("{x}"),
            CovariateValue::Level(s) => s.clone(),
        }
    }
}

impl fmt::Display for CovariateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelRecord {
    pub family_id: String,
    pub individual_id: String,
    pub wave: i64,
    /// 1-based ordinal category.
    pub outcome: u32,
    /// Aligned with [`PanelDataset::covariate_names`].
    pub covariates: Vec<CovariateValue>,
}

/// Immutable, validated panel with family and individual indexes.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    records: Vec<PanelRecord>,
    categories: usize,
    covariate_names: Vec<String>,
    family_index: BTreeMap<String, Vec<usize>>,
    individual_index: BTreeMap<String, Vec<usize>>,
}

impl PanelDataset {
    /// Validates keys and outcomes and builds the indexes.
    pub fn new(
        records: Vec<PanelRecord>,
        categories: usize,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if categories < 2 {
            return Err(Error::Invalid(format!(
                "an ordinal outcome needs at least 2 categories, got {categories}"
            )));
        }
        let mut seen = BTreeSet::new();
        let mut family_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut individual_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (row, rec) in records.iter().enumerate() {
            if rec.outcome < 1 || rec.outcome as usize > categories {
                return Err(Error::OutcomeOutOfRange {
                    row,
                    value: rec.outcome as i64,
                    categories,
                });
            }
            if rec.covariates.len() != covariate_names.len() {
                return Err(Error::Invalid(format!(
                    "record {row} has {} covariates, expected {}",
                    rec.covariates.len(),
                    covariate_names.len()
                )));
            }
            if !seen.insert((rec.individual_id.as_str(), rec.wave)) {
                return Err(Error::DuplicateKey {
                    individual: rec.individual_id.clone(),
                    wave: rec.wave,
                });
            }
            family_index
                .entry(rec.family_id.clone())
                .or_default()
                .push(row);
            individual_index
                .entry(rec.individual_id.clone())
                .or_default()
                .push(row);
        }
        Ok(PanelDataset {
            records,
            categories,
            covariate_names,
            family_index,
            individual_index,
        })
    }

    pub fn records(&self) -> &[PanelRecord] {
        &self.records
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_position(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Records of each family, keyed in sorted family-id order.
    pub fn family_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.family_index
    }

    pub fn individual_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.individual_index
    }

    /// Number of families (`n`).
    pub fn n_families(&self) -> usize {
        self.family_index.len()
    }

    pub fn n_individuals(&self) -> usize {
        self.individual_index.len()
    }

    /// Number of records (`N`).
    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted distinct waves present in the data.
    pub fn waves(&self) -> Vec<i64> {
        self.records
            .iter()
            .map(|r| r.wave)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Keeps the records for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(usize, &PanelRecord) -> bool) -> Result<Self> {
        let records = self
            .records
            .iter()
            .enumerate()
            .filter(|(i, r)| keep(*i, r))
            .map(|(_, r)| r.clone())
            .collect();
        PanelDataset::new(records, self.categories, self.covariate_names.clone())
    }
}

/// Column mapping for [`load_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub family_id: String,
    pub individual_id: String,
    pub wave: String,
    pub outcome: String,
    /// Number of outcome categories; inferred as the largest observed value when absent.
    pub categories: Option<usize>,
    /// Covariate columns to keep, in order. All remaining columns when absent.
    pub covariates: Option<Vec<String>>,
    /// Columns read as categorical labels even if they parse as numbers.
    pub categorical: Vec<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            family_id: "family_id".into(),
            individual_id: "individual_id".into(),
            wave: "wave".into(),
            outcome: "outcome".into(),
            categories: None,
            covariates: None,
            categorical: Vec::new(),
        }
    }
}

pub fn load_dataset(path: &Path, schema: &Schema) -> Result<PanelDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema)
}

pub fn read_dataset<R: std::io::Read>(reader: R, schema: &Schema) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let fam_col = col(&schema.family_id)?;
    let ind_col = col(&schema.individual_id)?;
    let wave_col = col(&schema.wave)?;
    let out_col = col(&schema.outcome)?;
    let key_cols = [fam_col, ind_col, wave_col, out_col];

    let cov_names: Vec<String> = match &schema.covariates {
        Some(list) => list.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !key_cols.contains(i))
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let cov_cols = cov_names
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    for c in &schema.categorical {
        if !cov_names.contains(c) {
            return Err(Error::MissingColumn(c.clone()));
        }
    }

    let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;

    // A covariate column is real-valued when every cell parses and it is not
    // forced categorical.
    let is_real: Vec<bool> = cov_names
        .iter()
        .zip(&cov_cols)
        .map(|(name, &c)| {
            !schema.categorical.contains(name)
                && rows.iter().all(|r| r[c].parse::<f64>().is_ok())
        })
        .collect();

    let mut records = Vec::with_capacity(rows.len());
    let mut max_outcome = 0i64;
    for (row, r) in rows.iter().enumerate() {
        let cell = |c: usize, name: &str| -> Result<&str> {
            let v = &r[c];
            if v.is_empty() {
                Err(Error::BadCell {
                    row,
                    column: name.to_string(),
                    message: "empty cell".into(),
                })
            } else {
                Ok(v)
            }
        };
        let wave: i64 = cell(wave_col, &schema.wave)?
            .parse()
            .map_err(|e| Error::BadCell {
                row,
                column: schema.wave.clone(),
                message: format!("{e}"),
            })?;
        let outcome: i64 = cell(out_col, &schema.outcome)?
            .parse()
            .map_err(|e| Error::BadCell {
                row,
                column: schema.outcome.clone(),
                message: format!("{e}"),
            })?;
        let limit = schema.categories.unwrap_or(usize::MAX);
        if outcome < 1 || outcome as u64 > limit as u64 {
            return Err(Error::OutcomeOutOfRange {
                row,
                value: outcome,
                categories: schema.categories.unwrap_or(0),
            });
        }
        max_outcome = max_outcome.max(outcome);
        let mut covariates = Vec::with_capacity(cov_cols.len());
        for ((name, &c), &real) in cov_names.iter().zip(&cov_cols).zip(&is_real) {
            let v = cell(c, name)?;
            covariates.push(if real {
                CovariateValue::Real(v.parse().expect("checked above"))
            } else {
                CovariateValue::Level(v.to_string())
            });
        }
        records.push(PanelRecord {
            family_id: cell(fam_col, &schema.family_id)?.to_string(),
            individual_id: cell(ind_col, &schema.individual_id)?.to_string(),
            wave,
            outcome: outcome as u32,
            covariates,
        });
    }
    let categories = schema.categories.unwrap_or(max_outcome.max(2) as usize);
    PanelDataset::new(records, categories, cov_names)
}

/// Writes the dataset in the format [`load_dataset`] reads with the default schema.
pub fn write_dataset(ds: &PanelDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(ds, file)
}

pub fn write_dataset_to<W: std::io::Write>(ds: &PanelDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["family_id", "individual_id", "wave", "outcome"];
    header.extend(ds.covariate_names.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in &ds.records {
        let mut row = vec![
            r.family_id.clone(),
            r.individual_id.clone(),
            r.wave.to_string(),
            r.outcome.to_string(),
        ];
        row.extend(r.covariates.iter().map(CovariateValue::label));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Issue {
    ConstantCovariate(String),
    EmptyCategory(u32),
    NoRecords,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::ConstantCovariate(c) => write!(f, "constant covariate `{c}`"),
            Issue::EmptyCategory(a) => write!(f, "outcome category {a} never observed"),
            Issue::NoRecords => f.write_str("dataset has no records"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveSummary {
    pub wave: i64,
    pub families: usize,
    pub individuals: usize,
    /// Count per outcome category, index 0 is category 1.
    pub category_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub families: usize,
    pub individuals: usize,
    pub records: usize,
    pub waves: Vec<WaveSummary>,
    pub issues: Vec<Issue>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "families: {}", self.families)?;
        writeln!(f, "individuals: {}", self.individuals)?;
        writeln!(f, "records: {}", self.records)?;
        for w in &self.waves {
            let counts: Vec<String> = w.category_counts.iter().map(|c| c.to_string()).collect();
            writeln!(
                f,
                "wave {}: families={} individuals={} categories=[{}]",
                w.wave,
                w.families,
                w.individuals,
                counts.join(", ")
            )?;
        }
        if self.issues.is_empty() {
            writeln!(f, "issues: none")?;
        } else {
            for i in &self.issues {
                writeln!(f, "issue: {i}")?;
            }
        }
        Ok(())
    }
}

pub fn validate(ds: &PanelDataset) -> ValidationReport {
    let mut issues = Vec::new();
    if ds.is_empty() {
        issues.push(Issue::NoRecords);
    }
    for (c, name) in ds.covariate_names.iter().enumerate() {
        let mut values = ds.records.iter().map(|r| &r.covariates[c]);
        if let Some(first) = values.next() {
            if values.all(|v| v == first) {
                issues.push(Issue::ConstantCovariate(name.clone()));
            }
        }
    }
    let mut by_wave: BTreeMap<i64, (BTreeSet<&str>, BTreeSet<&str>, Vec<usize>)> = BTreeMap::new();
    let mut totals = vec![0usize; ds.categories];
    for r in &ds.records {
        let e = by_wave
            .entry(r.wave)
            .or_insert_with(|| (BTreeSet::new(), BTreeSet::new(), vec![0; ds.categories]));
        e.0.insert(&r.family_id);
        e.1.insert(&r.individual_id);
        e.2[r.outcome as usize - 1] += 1;
        totals[r.outcome as usize - 1] += 1;
    }
    if !ds.is_empty() {
        for (a, &t) in totals.iter().enumerate() {
            if t == 0 {
                issues.push(Issue::EmptyCategory(a as u32 + 1));
            }
        }
    }
    let waves = by_wave
        .into_iter()
        .map(|(wave, (fam, ind, counts))| WaveSummary {
            wave,
            families: fam.len(),
            individuals: ind.len(),
            category_counts: counts,
        })
        .collect();
    ValidationReport {
        families: ds.n_families(),
        individuals: ds.n_individuals(),
        records: ds.n_records(),
        waves,
        issues,
    }
}

/// One follow-up pattern with the number of families and individuals showing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PatternRow {
    pub pattern: Vec<bool>,
    pub family_count: usize,
    pub individual_count: usize,
}

/// Presence patterns over `waves`, ordered by number of waves present and then
/// with earlier waves first.
pub fn pattern_table(ds: &PanelDataset, waves: &[i64]) -> Vec<PatternRow> {
    let presence = |rows: &[usize]| -> Vec<bool> {
        let mut p = vec![false; waves.len()];
        for &r in rows {
            if let Some(k) = waves.iter().position(|&w| w == ds.records[r].wave) {
                p[k] = true;
            }
        }
        p
    };
    let mut table: BTreeMap<Vec<bool>, (usize, usize)> = BTreeMap::new();
    for rows in ds.family_index.values() {
        table.entry(presence(rows)).or_default().0 += 1;
    }
    for rows in ds.individual_index.values() {
        table.entry(presence(rows)).or_default().1 += 1;
    }
    let mut out: Vec<PatternRow> = table
        .into_iter()
        .map(|(pattern, (f, i))| PatternRow {
            pattern,
            family_count: f,
            individual_count: i,
        })
        .collect();
    out.sort_by(|a, b| {
        let ca = a.pattern.iter().filter(|&&x| x).count();
        let cb = b.pattern.iter().filter(|&&x| x).count();
        ca.cmp(&cb).then_with(|| b.pattern.cmp(&a.pattern))
    });
    out
}

pub fn write_pattern_csv<W: std::io::Write>(
    rows: &[PatternRow],
    waves: &[i64],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = waves.iter().map(|w| w.to_string()).collect();
    header.push("families".into());
    header.push("individuals".into());
    w.write_record(&header)?;
    for r in rows {
        let mut row: Vec<String> = r
            .pattern
            .iter()
            .map(|&p| if p { "1" } else { "0" }.to_string())
            .collect();
        row.push(r.family_count.to_string());
        row.push(r.individual_count.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateTerm {
    /// Numeric column, optionally entered as `log(x + 1)`.
    Real {
        name: String,
        #[serde(default)]
        log1p: bool,
    },
    /// Reference-coded factor: one indicator per non-reference level.
    Categorical { name: String, reference: String },
}

impl CovariateTerm {
    pub fn name(&self) -> &str {
        match self {
            CovariateTerm::Real { name, .. } | CovariateTerm::Categorical { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignSpec {
    pub terms: Vec<CovariateTerm>,
}

/// Column name that resolves to the wave index when no covariate uses it.
pub const WAVE_TERM: &str = "wave";

/// Row-major `N x p` covariate matrix aligned with the dataset records.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    column_names: Vec<String>,
    transform_log: Vec<String>,
}

impl DesignMatrix {
    pub fn new(rows: usize, column_names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let cols = column_names.len();
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: values.len(),
            });
        }
        Ok(DesignMatrix {
            rows,
            cols,
            values,
            column_names,
            transform_log: Vec::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn transform_log(&self) -> &[String] {
        &self.transform_log
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn sorted_levels<'a>(labels: impl Iterator<Item = String> + 'a) -> Vec<String> {
    let mut levels: Vec<String> = labels.collect::<BTreeSet<_>>().into_iter().collect();
    if levels.iter().all(|l| l.parse::<f64>().is_ok()) {
        levels.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        });
    }
    levels
}

pub fn build_design(ds: &PanelDataset, spec: &DesignSpec) -> Result<DesignMatrix> {
    let n = ds.n_records();
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let mut transform_log = Vec::new();
    for term in &spec.terms {
        let name = term.name();
        let cells: Vec<CovariateValue> = match ds.covariate_position(name) {
            Some(c) => ds.records.iter().map(|r| r.covariates[c].clone()).collect(),
            None if name == WAVE_TERM => ds
                .records
                .iter()
                .map(|r| CovariateValue::Real(r.wave as f64))
                .collect(),
            None => return Err(Error::UnknownCovariate(name.to_string())),
        };
        match term {
            CovariateTerm::Real { log1p, .. } => {
                let mut col = Vec::with_capacity(n);
                for v in &cells {
                    let x = match v {
                        CovariateValue::Real(x) => *x,
                        CovariateValue::Level(s) => {
                            return Err(Error::Invalid(format!(
                                "covariate `{name}` has non-numeric value `{s}`"
                            )))
                        }
                    };
                    if *log1p {
                        if x < 0.0 {
                            return Err(Error::NegativeLogInput {
                                column: name.to_string(),
                                value: x,
                            });
                        }
                        col.push(x.ln_1p());
                    } else {
                        col.push(x);
                    }
                }
                if *log1p {
                    let label = format!("log({name}+1)");
                    transform_log.push(label.clone());
                    columns.push((label, col));
                } else {
                    columns.push((name.to_string(), col));
                }
            }
            CovariateTerm::Categorical { reference, .. } => {
                let labels: Vec<String> = cells.iter().map(CovariateValue::label).collect();
                let levels = sorted_levels(labels.iter().cloned());
                if !levels.contains(reference) {
                    return Err(Error::Invalid(format!(
                        "reference level `{reference}` not present in `{name}`"
                    )));
                }
                for level in levels.iter().filter(|l| *l != reference) {
                    let col = labels
                        .iter()
                        .map(|l| if l == level { 1.0 } else { 0.0 })
                        .collect();
                    columns.push((format!("{name}[{level}]"), col));
                }
            }
        }
    }
    for (name, col) in &columns {
        if let Some(first) = col.first() {
            if col.iter().all(|x| x == first) {
                return Err(Error::ConstantColumn(name.clone()));
            }
        }
    }
    let p = columns.len();
    let mut values = vec![0.0; n * p];
    for (j, (_, col)) in columns.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            values[i * p + j] = x;
        }
    }
    Ok(DesignMatrix {
        rows: n,
        cols: p,
        values,
        column_names: columns.into_iter().map(|(n, _)| n).collect(),
        transform_log,
    })
}
