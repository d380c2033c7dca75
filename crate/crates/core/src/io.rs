//! Dataset ingestion, analysis configuration and machine-readable reports.
//!
//! Configuration files are flat TOML: top-level `key = value` pairs, with
//! lists written as arrays. Tables are not used.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{run_battery, EstimationOptions, Method, OmSpec};
use crate::inference::{InferenceOptions, LonelyPsuPolicy, VarianceMode};
use crate::selection::{SelectionMode, SelectionOptions, DEFAULT_CLAMP};
use crate::simulator::SimConfig;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn default_methods() -> Vec<Method> {
    Method::PROPOSED.into_iter().chain(Method::COMPARISON).collect()
}

fn default_alpha() -> f64 {
    0.05
}

fn default_clamp() -> f64 {
    DEFAULT_CLAMP
}

fn default_max_clamped() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub outcome: String,
    pub group: String,
    pub weight: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Covariates expanded to reference-coded indicators.
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Subsets of `covariates` per model; all covariates when absent.
    pub propensity_covariates: Option<Vec<String>>,
    pub outcome_covariates: Option<Vec<String>>,
    pub selection_covariates: Option<Vec<String>>,
    pub stratum: Option<String>,
    pub psu: Option<String>,
    /// Level of a text group column coded 0; defaults to the first level in
    /// lexicographic order.
    pub group_reference: Option<String>,
    pub population_size: Option<u64>,
    pub pi_bar: Option<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub om_spec: OmSpec,
    #[serde(default)]
    pub selection_mode: SelectionMode,
    #[serde(default)]
    pub variance: VarianceMode,
    #[serde(default)]
    pub lonely_psu: LonelyPsuPolicy,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_clamp")]
    pub clamp: f64,
    #[serde(default = "default_max_clamped")]
    pub max_clamped_fraction: f64,
    pub trim: Option<f64>,
    /// Data file, relative to the working directory.
    pub data: Option<String>,
    pub output_dir: Option<String>,
}

impl AnalysisConfig {
    /// Minimal configuration binding the given columns.
    pub fn new(outcome: &str, group: &str, weight: &str, covariates: &[&str]) -> Self {
        AnalysisConfig {
            outcome: outcome.into(),
            group: group.into(),
            weight: weight.into(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            categorical: Vec::new(),
            propensity_covariates: None,
            outcome_covariates: None,
            selection_covariates: None,
            stratum: None,
            psu: None,
            group_reference: None,
            population_size: None,
            pi_bar: None,
            methods: default_methods(),
            om_spec: OmSpec::Interacted,
            selection_mode: SelectionMode::Known,
            variance: VarianceMode::Iid,
            lonely_psu: LonelyPsuPolicy::Error,
            alpha: default_alpha(),
            clamp: DEFAULT_CLAMP,
            max_clamped_fraction: default_max_clamped(),
            trim: None,
            data: None,
            output_dir: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: AnalysisConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        AnalysisConfig::from_toml_str(&text).map_err(|e| io_err(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.clamp > 0.0 && self.clamp < 0.5) {
            return Err(Error::Config(format!("clamp {} must lie in (0, 0.5)", self.clamp)));
        }
        if !(0.0..=1.0).contains(&self.max_clamped_fraction) {
            return Err(Error::Config("max_clamped_fraction must lie in [0, 1]".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        let covs: BTreeSet<&str> = self.covariates.iter().map(String::as_str).collect();
        if covs.len() != self.covariates.len() {
            return Err(Error::Config("covariates contains duplicates".into()));
        }
        for (what, list) in [
            ("categorical", Some(&self.categorical)),
            ("propensity_covariates", self.propensity_covariates.as_ref()),
            ("outcome_covariates", self.outcome_covariates.as_ref()),
            ("selection_covariates", self.selection_covariates.as_ref()),
        ] {
            for c in list.into_iter().flatten() {
                if !covs.contains(c.as_str()) {
                    return Err(Error::Config(format!("{what} names `{c}`, which is not in covariates")));
                }
            }
        }
        for c in &self.covariates {
            if [&self.outcome, &self.group, &self.weight].contains(&c) {
                return Err(Error::Config(format!("column `{c}` is bound twice")));
            }
        }
        Ok(())
    }

    /// Every column the analysis reads.
    pub fn bound_columns(&self) -> Vec<&str> {
        let mut cols = vec![self.outcome.as_str(), self.group.as_str(), self.weight.as_str()];
        cols.extend(self.covariates.iter().map(String::as_str));
        cols.extend(self.stratum.as_deref());
        cols.extend(self.psu.as_deref());
        cols
    }

    pub fn inference_options(&self) -> InferenceOptions {
        InferenceOptions {
            variance: self.variance,
            lonely_psu: self.lonely_psu,
            alpha: self.alpha,
        }
    }

    /// Estimation options with covariate subsets resolved to design columns.
    pub fn estimation_options(&self, loaded: &Loaded) -> EstimationOptions {
        let pick = |names: &Option<Vec<String>>| {
            names.as_ref().map(|names| {
                names
                    .iter()
                    .flat_map(|n| loaded.columns_of(n))
                    .collect::<BTreeSet<usize>>()
                    .into_iter()
                    .collect::<Vec<usize>>()
            })
        };
        EstimationOptions {
            om_spec: self.om_spec,
            propensity_covariates: pick(&self.propensity_covariates),
            outcome_covariates: pick(&self.outcome_covariates),
            selection: SelectionOptions {
                mode: self.selection_mode,
                covariates: pick(&self.selection_covariates),
                pi_bar: self.pi_bar,
                clamp: self.clamp,
            },
            max_clamped_fraction: self.max_clamped_fraction,
            trim: self.trim,
        }
    }
}

/// A dataset with its complete-case bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub data: Dataset,
    pub rows_read: usize,
    pub dropped: usize,
    /// Text levels of the group column coded (0, 1), when it was not numeric.
    pub group_levels: Option<(String, String)>,
    /// Source covariate → design columns it expanded to.
    pub expansion: Vec<(String, Vec<usize>)>,
}

impl Loaded {
    pub fn columns_of(&self, covariate: &str) -> Vec<usize> {
        self.expansion
            .iter()
            .find(|(n, _)| n == covariate)
            .map(|(_, c)| c.clone())
            .unwrap_or_default()
    }

    pub fn summary(&self) -> String {
        format!(
            "read {} rows, dropped {} (complete-case), analyzing n={}",
            self.rows_read,
            self.dropped,
            self.data.n()
        )
    }
}

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t == "NA"
}

pub fn load_dataset_csv(path: &Path, cfg: &AnalysisConfig) -> Result<Loaded> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    load_dataset_reader(file, cfg).map_err(|e| match e {
        Error::Io { .. } => e,
        other => io_err(path, other),
    })
}

/// Reads a headed CSV, keeps complete cases on the bound columns and codes
/// categorical covariates against their lexicographically first level.
pub fn load_dataset_reader(reader: impl Read, cfg: &AnalysisConfig) -> Result<Loaded> {
    cfg.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::InvalidData(format!("column `{name}` not found in header")))
    };
    let bound = cfg.bound_columns();
    let idx: Vec<usize> = bound.iter().map(|c| index(c)).collect::<Result<_>>()?;

    // Complete cases, keeping the raw text of bound columns.
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    let mut rows_read = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows_read += 1;
        let vals: Vec<String> = idx.iter().map(|&i| rec.get(i).unwrap_or("").trim().to_string()).collect();
        if vals.iter().any(|v| is_missing(v)) {
            continue;
        }
        // Line number in the file, counting the header as line 1.
        rows.push((r + 2, vals));
    }
    let dropped = rows_read - rows.len();
    if rows.is_empty() {
        return Err(Error::InvalidData(format!(
            "no complete cases remain ({rows_read} rows read, all dropped)"
        )));
    }
    let n = rows.len();
    let col = |j: usize| rows.iter().map(move |(line, v)| (*line, v[j].as_str()));
    let numeric = |j: usize| -> Result<Vec<f64>> {
        col(j)
            .map(|(line, s)| {
                s.parse::<f64>().map_err(|_| {
                    Error::InvalidData(format!("line {line}, column `{}`: `{s}` is not a number", bound[j]))
                })
            })
            .collect()
    };

    let y = numeric(0)?;
    let (a, group_levels) = code_group(&col(1).map(|(_, s)| s).collect::<Vec<_>>(), cfg)?;
    let sel_weight = numeric(2)?;

    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    let mut expansion = Vec::new();
    for (k, cov) in cfg.covariates.iter().enumerate() {
        let j = 3 + k;
        let start = columns.len();
        if cfg.categorical.contains(cov) {
            let levels: BTreeSet<&str> = col(j).map(|(_, s)| s).collect();
            for level in levels.iter().skip(1) {
                columns.push(col(j).map(|(_, s)| (s == *level) as u8 as f64).collect());
                names.push(format!("{cov}[{level}]"));
            }
        } else {
            columns.push(numeric(j)?);
            names.push(cov.clone());
        }
        expansion.push((cov.clone(), (start..columns.len()).collect()));
    }
    let x = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);

    let base = 3 + cfg.covariates.len();
    let stratum = cfg
        .stratum
        .as_ref()
        .map(|_| col(base).map(|(_, s)| s.to_string()).collect::<Vec<_>>());
    let psu_j = base + cfg.stratum.is_some() as usize;
    let psu = cfg.psu.as_ref().map(|_| col(psu_j).map(|(_, s)| s.to_string()).collect::<Vec<_>>());

    let mut data = Dataset::new(y, a, x, names, sel_weight)?.with_design(stratum, psu)?;
    if let Some(big_n) = cfg.population_size {
        data = data.with_pop_size(big_n)?;
    }
    Ok(Loaded {
        data,
        rows_read,
        dropped,
        group_levels,
        expansion,
    })
}

/// Group codes and, for text columns, the (0, 1) levels.
type GroupCoding = (Vec<u8>, Option<(String, String)>);

fn code_group(raw: &[&str], cfg: &AnalysisConfig) -> Result<GroupCoding> {
    let numeric: Option<Vec<u8>> = raw
        .iter()
        .map(|s| match s.parse::<f64>() {
            Ok(0.0) => Some(0),
            Ok(1.0) => Some(1),
            _ => None,
        })
        .collect();
    if let Some(a) = numeric {
        if cfg.group_reference.is_none() {
            return Ok((a, None));
        }
    }
    let levels: BTreeSet<&str> = raw.iter().copied().collect();
    if levels.len() != 2 {
        return Err(Error::InvalidData(format!(
            "group column `{}` is not binary after coding: {} distinct values",
            cfg.group,
            levels.len()
        )));
    }
    let mut lv: Vec<&str> = levels.into_iter().collect();
    if let Some(reference) = &cfg.group_reference {
        match lv.iter().position(|l| l == reference) {
            Some(0) => {}
            Some(_) => lv.swap(0, 1),
            None => {
                return Err(Error::Config(format!(
                    "group_reference `{reference}` is not a level of `{}`",
                    cfg.group
                )))
            }
        }
    }
    let a = raw.iter().map(|s| (*s == lv[1]) as u8).collect();
    Ok((a, Some((lv[0].to_string(), lv[1].to_string()))))
}

/// Writes `y, a, covariates..., sel_weight[, stratum][, psu]` with 17
/// significant digits, enough to reload every value bit for bit.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header = vec!["y".to_string(), "a".to_string()];
    header.extend(data.x_names.iter().cloned());
    header.push("sel_weight".into());
    if data.stratum.is_some() {
        header.push("stratum".into());
    }
    if data.psu.is_some() {
        header.push("psu".into());
    }
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = vec![format!("{:.16e}", data.y[i]), data.a[i].to_string()];
        rec.extend((0..data.p()).map(|j| format!("{:.16e}", data.x[(i, j)])));
        rec.push(format!("{:.16e}", data.sel_weight[i]));
        rec.extend(data.stratum.as_ref().map(|s| s[i].clone()));
        rec.extend(data.psu.as_ref().map(|p| p[i].clone()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Configuration matching the layout written by [`write_dataset_csv`].
pub fn dataset_config(data: &Dataset) -> AnalysisConfig {
    let covs: Vec<&str> = data.x_names.iter().map(String::as_str).collect();
    let mut cfg = AnalysisConfig::new("y", "a", "sel_weight", &covs);
    cfg.stratum = data.stratum.as_ref().map(|_| "stratum".into());
    cfg.psu = data.psu.as_ref().map(|_| "psu".into());
    cfg.population_size = data.pop_size;
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: Method,
    pub description: String,
    pub acd: Option<f64>,
    pub mu1: Option<f64>,
    pub mu0: Option<f64>,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub clamped_selection: Option<usize>,
    pub clamped_propensity: Option<usize>,
    pub trimmed: Option<usize>,
    pub ess: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub n: usize,
    pub rows_read: usize,
    pub dropped: usize,
    pub alpha: f64,
    pub variance: VarianceMode,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }

    pub fn row(&self, method: Method) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "description",
            "acd",
            "se",
            "ci_low",
            "ci_high",
            "mu1",
            "mu0",
            "clamped_selection",
            "clamped_propensity",
            "trimmed",
            "ess",
            "error",
        ])?;
        let f = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v}"));
        let u = |v: Option<usize>| v.map_or_else(String::new, |v| v.to_string());
        for r in &self.rows {
            w.write_record([
                r.method.tag().to_string(),
                r.description.clone(),
                f(r.acd),
                f(r.se),
                f(r.ci_low),
                f(r.ci_high),
                f(r.mu1),
                f(r.mu0),
                u(r.clamped_selection),
                u(r.clamped_propensity),
                u(r.trimmed),
                f(r.ess),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io {
            path: "<report>".into(),
            message: e.to_string(),
        })?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for (name, body) in [("report.csv", self.to_csv()?), ("report.json", self.to_json()?)] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| io_err(&p, e))?;
        }
        Ok(())
    }
}

/// Runs the configured battery on an already loaded dataset.
pub fn run_loaded(cfg: &AnalysisConfig, loaded: &Loaded) -> Report {
    let opts = cfg.estimation_options(loaded);
    let inf = cfg.inference_options();
    let rows = run_battery(&cfg.methods, &loaded.data, &opts, Some(&inf))
        .into_iter()
        .map(|o| match o.result {
            Ok(e) => ReportRow {
                method: o.method,
                description: o.method.description().into(),
                acd: Some(e.acd),
                mu1: e.mu1,
                mu0: e.mu0,
                se: e.se,
                ci_low: e.ci_low,
                ci_high: e.ci_high,
                clamped_selection: Some(e.diagnostics.clamped_selection),
                clamped_propensity: Some(e.diagnostics.clamped_propensity),
                trimmed: Some(e.diagnostics.trimmed),
                ess: Some(e.diagnostics.ess),
                error: None,
            },
            Err(err) => ReportRow {
                method: o.method,
                description: o.method.description().into(),
                acd: None,
                mu1: None,
                mu0: None,
                se: None,
                ci_low: None,
                ci_high: None,
                clamped_selection: None,
                clamped_propensity: None,
                trimmed: None,
                ess: None,
                error: Some(err.to_string()),
            },
        })
        .collect();
    Report {
        n: loaded.data.n(),
        rows_read: loaded.rows_read,
        dropped: loaded.dropped,
        alpha: cfg.alpha,
        variance: cfg.variance,
        rows,
    }
}

/// Loads the data file and runs the battery.
pub fn run_config(cfg: &AnalysisConfig, data_path: &Path) -> Result<Report> {
    let loaded = load_dataset_csv(data_path, cfg)?;
    Ok(run_loaded(cfg, &loaded))
}

/// Simulation file: [`SimConfig`] keys plus output controls.
#[derive(Debug, Clone, PartialEq)]
pub struct SimFile {
    pub sim: SimConfig,
    /// Interaction values for a sensitivity sweep; a single study when absent.
    pub gamma_ax_sweep: Option<Vec<f64>>,
    pub per_rep: bool,
    pub output_dir: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimExtras {
    gamma_ax_sweep: Option<Vec<f64>>,
    #[serde(default)]
    per_rep: bool,
    output_dir: Option<String>,
    setting: Option<u8>,
}

impl SimFile {
    /// `setting = k` applies the settings-grid toggles over any explicit
    /// `tau_x`, `beta_a`, `beta_x`.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        let mut extras = toml::Table::new();
        for key in ["gamma_ax_sweep", "per_rep", "output_dir", "setting"] {
            if let Some(v) = table.remove(key) {
                extras.insert(key.into(), v);
            }
        }
        let extras: SimExtras = extras.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut sim: SimConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(id) = extras.setting {
            sim = sim.with_setting(id)?;
        }
        sim.validate()?;
        Ok(SimFile {
            sim,
            gamma_ax_sweep: extras.gamma_ax_sweep,
            per_rep: extras.per_rep,
            output_dir: extras.output_dir,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        SimFile::from_toml_str(&text).map_err(|e| io_err(path, e))
    }
}

/// Column → distinct values, for quick inspection during validation.
pub fn column_levels(loaded: &Loaded) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (j, name) in loaded.data.x_names.iter().enumerate() {
        let vals: BTreeSet<u64> = loaded.data.x.column(j).iter().map(|v| v.to_bits()).collect();
        out.insert(name.clone(), vals.len());
    }
    out
}
