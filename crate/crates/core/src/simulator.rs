//! Monte Carlo study: a super-population with a heterogeneous group
//! difference, repeated Poisson sub-sampling by a selection model that may
//! depend on group and covariate, and aggregation of the method battery.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{run_battery, EstimationOptions, Method, OmSpec};
use crate::glm::expit;
use crate::inference::{InferenceOptions, VarianceMode};
use crate::selection::{SelectionMode, SelectionOptions};

/// Resampling attempts before a degenerate draw is reported.
pub const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_pop: usize,
    pub tau0: f64,
    pub tau_x: f64,
    pub beta0: f64,
    pub beta_a: f64,
    pub beta_x: f64,
    pub gamma0: f64,
    pub gamma_a: f64,
    pub gamma_x: f64,
    pub gamma_ax: f64,
    pub sigma_s: f64,
    pub sigma_o: f64,
    pub n_reps: usize,
    pub seed: u64,
    pub setting_id: Option<u8>,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub om_spec: OmSpec,
    pub selection_mode: SelectionMode,
    pub variance: VarianceMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_pop: 100_000,
            tau0: -1.0,
            tau_x: 0.0,
            beta0: -4.5,
            beta_a: 0.0,
            beta_x: 0.0,
            gamma0: 1.0,
            gamma_a: 1.0,
            gamma_x: 1.0,
            gamma_ax: 0.1,
            sigma_s: 0.1,
            sigma_o: 1.0,
            n_reps: 200,
            seed: 20240601,
            setting_id: None,
            methods: default_methods(),
            alpha: 0.05,
            om_spec: OmSpec::Interacted,
            selection_mode: SelectionMode::Known,
            variance: VarianceMode::Iid,
        }
    }
}

/// Proposed methods, the comparison approaches and the oracle regression.
pub fn default_methods() -> Vec<Method> {
    let mut m: Vec<Method> = Method::PROPOSED.into_iter().chain(Method::COMPARISON).collect();
    m.push(Method::Oracle);
    m
}

/// Magnitude of an active toggle in the settings grid.
pub const SETTING_EFFECT: f64 = 1.0;

impl SimConfig {
    /// Settings 1–8 toggle `(tau_x, beta_a, beta_x)` over `{0, 1}^3` in the
    /// order (0,0,0), (1,0,0), (0,1,0), (1,1,0), (0,0,1), (1,0,1), (0,1,1), (1,1,1).
    pub fn setting(id: u8) -> Result<SimConfig> {
        SimConfig::default().with_setting(id)
    }

    pub fn with_setting(mut self, id: u8) -> Result<SimConfig> {
        if !(1..=8).contains(&id) {
            return Err(Error::Config(format!("setting {id} is not in 1..=8")));
        }
        let bits = id - 1;
        self.tau_x = SETTING_EFFECT * (bits & 1) as f64;
        self.beta_a = SETTING_EFFECT * ((bits >> 1) & 1) as f64;
        self.beta_x = SETTING_EFFECT * ((bits >> 2) & 1) as f64;
        self.setting_id = Some(id);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pop == 0 {
            return Err(Error::Config("population size must be positive".into()));
        }
        if self.n_reps == 0 {
            return Err(Error::Config("n_reps must be at least 1".into()));
        }
        if !(self.sigma_s >= 0.0 && self.sigma_o >= 0.0) {
            return Err(Error::Config("noise standard deviations must be nonnegative".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        let coefs = [
            self.tau0, self.tau_x, self.beta0, self.beta_a, self.beta_x, self.gamma0, self.gamma_a, self.gamma_x,
            self.gamma_ax,
        ];
        if coefs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Generator for the population (stream 0) or replicate `r` (stream r + 1).
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    fn estimation_options(&self) -> EstimationOptions {
        EstimationOptions {
            om_spec: self.om_spec,
            selection: SelectionOptions {
                mode: self.selection_mode,
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub x: Vec<f64>,
    pub a: Vec<u8>,
    pub y: Vec<f64>,
    pub pr_s: Vec<f64>,
    pub true_acd: f64,
}

impl Population {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

fn normal(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::Config(format!("normal sd {sd}: {e}")))
}

pub fn generate_population(cfg: &SimConfig, rng: &mut impl Rng) -> Result<Population> {
    cfg.validate()?;
    let n = cfg.n_pop;
    let std = normal(1.0)?;
    let eps_s = normal(cfg.sigma_s)?;
    let eps_o = normal(cfg.sigma_o)?;
    let mut pop = Population {
        x: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        pr_s: Vec::with_capacity(n),
        true_acd: 0.0,
    };
    for _ in 0..n {
        let x = 1.0 + std.sample(rng);
        let a = (rng.random::<f64>() < expit(cfg.tau0 + cfg.tau_x * x)) as u8;
        let af = a as f64;
        let pr_s = expit(cfg.beta0 + cfg.beta_a * af + cfg.beta_x * x + eps_s.sample(rng));
        let y = cfg.gamma0 + cfg.gamma_x * x + cfg.gamma_a * af + cfg.gamma_ax * af * x + eps_o.sample(rng);
        pop.x.push(x);
        pop.a.push(a);
        pop.y.push(y);
        pop.pr_s.push(pr_s);
    }
    let mean_x = pop.x.iter().sum::<f64>() / n as f64;
    pop.true_acd = cfg.gamma_a + cfg.gamma_ax * mean_x;
    Ok(pop)
}

/// A Poisson sample with its resampling count.
#[derive(Debug, Clone)]
pub struct Draw {
    pub data: Dataset,
    pub resamples: usize,
}

/// Draws `S ~ Bernoulli(pr_s)` per individual; rows keep `1 / pr_s` as weight.
/// Samples where either group has fewer than two rows are redrawn.
pub fn draw_sample(pop: &Population, rng: &mut impl Rng) -> Result<Draw> {
    for attempt in 0..=MAX_RESAMPLES {
        let rows: Vec<usize> = (0..pop.len()).filter(|&i| rng.random::<f64>() < pop.pr_s[i]).collect();
        let n1 = rows.iter().filter(|&&i| pop.a[i] == 1).count();
        if n1 < 2 || rows.len() - n1 < 2 {
            continue;
        }
        let x = DMatrix::from_iterator(rows.len(), 1, rows.iter().map(|&i| pop.x[i]));
        let data = Dataset::new(
            rows.iter().map(|&i| pop.y[i]).collect(),
            rows.iter().map(|&i| pop.a[i]).collect(),
            x,
            vec!["x".to_string()],
            rows.iter().map(|&i| 1.0 / pop.pr_s[i]).collect(),
        )?
        .with_pop_size(pop.len() as u64)?;
        return Ok(Draw {
            data,
            resamples: attempt,
        });
    }
    Err(Error::Sampling(format!(
        "every draw left a group with fewer than two rows after {MAX_RESAMPLES} resamples"
    )))
}

/// One method's outcome in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub method: Method,
    pub n: usize,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub covers: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    pub percent_bias: f64,
    pub mse: f64,
    pub coverage: f64,
    /// Standard deviation of the estimates across replicates.
    pub mc_se: f64,
    pub mean_se: f64,
    pub median_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub setting_id: Option<u8>,
    pub gamma_ax: f64,
    pub n_pop: usize,
    pub n_reps: usize,
    pub seed: u64,
    pub true_acd: f64,
    pub mean_sample_size: f64,
    pub resamples: usize,
    pub failed_draws: usize,
    pub methods: Vec<MethodSummary>,
    #[serde(skip)]
    pub reps: Vec<RepRecord>,
}

fn run_rep(cfg: &SimConfig, pop: &Population, rep: usize) -> (Vec<RepRecord>, usize, Option<usize>) {
    let mut rng = cfg.rng(rep as u64 + 1);
    let opts = cfg.estimation_options();
    let inf = InferenceOptions {
        variance: cfg.variance,
        alpha: cfg.alpha,
        ..Default::default()
    };
    match draw_sample(pop, &mut rng) {
        Err(e) => {
            let records = cfg
                .methods
                .iter()
                .map(|&method| RepRecord {
                    rep,
                    method,
                    n: 0,
                    estimate: None,
                    se: None,
                    ci_low: None,
                    ci_high: None,
                    covers: None,
                    error: Some(e.to_string()),
                })
                .collect();
            (records, MAX_RESAMPLES, None)
        }
        Ok(draw) => {
            let n = draw.data.n();
            let records = run_battery(&cfg.methods, &draw.data, &opts, Some(&inf))
                .into_iter()
                .map(|o| match o.result {
                    Ok(e) => RepRecord {
                        rep,
                        method: o.method,
                        n,
                        estimate: Some(e.acd),
                        se: e.se,
                        ci_low: e.ci_low,
                        ci_high: e.ci_high,
                        covers: e
                            .ci_low
                            .zip(e.ci_high)
                            .map(|(lo, hi)| lo <= pop.true_acd && pop.true_acd <= hi),
                        error: None,
                    },
                    Err(err) => RepRecord {
                        rep,
                        method: o.method,
                        n,
                        estimate: None,
                        se: None,
                        ci_low: None,
                        ci_high: None,
                        covers: None,
                        error: Some(err.to_string()),
                    },
                })
                .collect();
            (records, draw.resamples, Some(n))
        }
    }
}

/// Runs every replicate against a fixed population.
pub fn run_study_on(cfg: &SimConfig, pop: &Population) -> Result<SimResult> {
    cfg.validate()?;
    let task = |rep: usize| run_rep(cfg, pop, rep);
    #[cfg(feature = "parallel")]
    let outcomes: Vec<_> = {
        use rayon::prelude::*;
        (0..cfg.n_reps).into_par_iter().map(task).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<_> = (0..cfg.n_reps).map(task).collect();

    let mut reps = Vec::with_capacity(cfg.n_reps * cfg.methods.len());
    let mut resamples = 0;
    let mut failed_draws = 0;
    let mut sizes = Vec::new();
    for (records, r, n) in outcomes {
        reps.extend(records);
        resamples += r;
        match n {
            Some(n) => sizes.push(n as f64),
            None => failed_draws += 1,
        }
    }
    let methods = cfg
        .methods
        .iter()
        .map(|&m| summarize(m, &reps, pop.true_acd))
        .collect();
    Ok(SimResult {
        setting_id: cfg.setting_id,
        gamma_ax: cfg.gamma_ax,
        n_pop: cfg.n_pop,
        n_reps: cfg.n_reps,
        seed: cfg.seed,
        true_acd: pop.true_acd,
        mean_sample_size: mean(&sizes),
        resamples,
        failed_draws,
        methods,
        reps,
    })
}

/// Generates the population from stream 0 and runs the study.
pub fn run_study(cfg: &SimConfig) -> Result<SimResult> {
    let pop = generate_population(cfg, &mut cfg.rng(0))?;
    run_study_on(cfg, &pop)
}

/// Repeats the study for each interaction coefficient. The population draw
/// is shared: only the outcome's interaction term changes between runs.
pub fn run_sensitivity(cfg: &SimConfig, gamma_ax: &[f64]) -> Result<Vec<SimResult>> {
    gamma_ax
        .iter()
        .map(|&g| {
            let c = SimConfig {
                gamma_ax: g,
                ..cfg.clone()
            };
            run_study(&c)
        })
        .collect()
}

/// Interaction values swept in the sensitivity study.
pub const SENSITIVITY_GAMMA_AX: [f64; 5] = [0.0, 0.01, 0.05, 0.1, 0.5];

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

fn summarize(method: Method, reps: &[RepRecord], truth: f64) -> MethodSummary {
    let rows: Vec<&RepRecord> = reps.iter().filter(|r| r.method == method).collect();
    let est: Vec<f64> = rows.iter().filter_map(|r| r.estimate).collect();
    let ses: Vec<f64> = rows.iter().filter_map(|r| r.se).collect();
    let covers: Vec<bool> = rows.iter().filter_map(|r| r.covers).collect();
    let m = mean(&est);
    let mse = mean(&est.iter().map(|e| (e - truth).powi(2)).collect::<Vec<_>>());
    let mc_se = if est.len() > 1 {
        (est.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    MethodSummary {
        method,
        n_ok: est.len(),
        n_failed: rows.len() - est.len(),
        mean_estimate: m,
        bias: m - truth,
        percent_bias: 100.0 * (m - truth) / truth,
        mse,
        coverage: if covers.is_empty() {
            f64::NAN
        } else {
            covers.iter().filter(|&&c| c).count() as f64 / covers.len() as f64
        },
        mc_se,
        mean_se: mean(&ses),
        median_se: median(&ses),
    }
}

impl SimResult {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// One row per method.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "setting", "gamma_ax", "true_acd", "method", "n_ok", "n_failed", "mean_estimate", "bias", "percent_bias",
            "mse", "coverage", "mc_se", "mean_se", "median_se",
        ])?;
        let setting = self.setting_id.map_or_else(|| "custom".to_string(), |s| s.to_string());
        for m in &self.methods {
            w.write_record([
                setting.clone(),
                fmt(self.gamma_ax),
                fmt(self.true_acd),
                m.method.tag().to_string(),
                m.n_ok.to_string(),
                m.n_failed.to_string(),
                fmt(m.mean_estimate),
                fmt(m.bias),
                fmt(m.percent_bias),
                fmt(m.mse),
                fmt(m.coverage),
                fmt(m.mc_se),
                fmt(m.mean_se),
                fmt(m.median_se),
            ])?;
        }
        finish(w)
    }

    /// Raw per-replicate table.
    pub fn per_rep_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rep", "method", "n", "estimate", "se", "ci_low", "ci_high", "covers", "error"])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, fmt);
        for r in &self.reps {
            w.write_record([
                r.rep.to_string(),
                r.method.tag().to_string(),
                r.n.to_string(),
                opt(r.estimate),
                opt(r.se),
                opt(r.ci_low),
                opt(r.ci_high),
                r.covers.map_or_else(String::new, |c| c.to_string()),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        finish(w)
    }
}

/// Shortest decimal that round-trips.
fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v}")
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io {
        path: "<memory>".into(),
        message: e.to_string(),
    })?;
    String::from_utf8(bytes).map_err(|e| Error::Io {
        path: "<memory>".into(),
        message: e.to_string(),
    })
}
