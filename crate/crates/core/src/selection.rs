//! Sample-selection probabilities: design probabilities for sampled rows,
//! beta-GLM predictions for unobserved group levels (or for every row when the
//! mechanism is modeled), the group-marginalized probability and the overall
//! selection fraction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{expit, fit_beta_glm_design, GlmFit, BETA_CLAMP};

/// Lower clamp applied to every evaluated selection probability.
pub const DEFAULT_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Design probabilities `1 / sel_weight` are taken as known.
    #[default]
    Known,
    /// `Pr(S=1|A,X)` is modeled by a beta GLM of `1 / sel_weight` on `(A, X)`.
    #[serde(alias = "modelled")]
    Modeled,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "known" => Ok(SelectionMode::Known),
            "modeled" | "modelled" => Ok(SelectionMode::Modeled),
            other => Err(Error::Config(format!("unknown selection mode `{other}` (known|modeled)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOptions {
    pub mode: SelectionMode,
    /// Covariate columns entering the beta GLM next to `A`; `None` uses all.
    pub covariates: Option<Vec<usize>>,
    /// Externally known `Pr(S=1)`; otherwise `n / N`, or `n / sum(sel_weight)`
    /// when the population size is unknown.
    pub pi_bar: Option<f64>,
    pub clamp: f64,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions {
            mode: SelectionMode::Known,
            covariates: None,
            pi_bar: None,
            clamp: DEFAULT_CLAMP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionModel {
    pub mode: SelectionMode,
    pub pi_bar: f64,
    /// Beta GLM of the selection probability on `[1, A, X_sel]`.
    pub beta_fit: GlmFit,
    pub clamp: f64,
    /// Rows whose design probability exceeded 1 or fell below the clamp.
    pub clamped_rows: usize,
    a: Vec<u8>,
    observed: Vec<f64>,
    x_sel: DMatrix<f64>,
}

/// `Pr(S=1|x) = Pr(S=1|A=1,x) Pr(A=1|x) + Pr(S=1|A=0,x) (1 - Pr(A=1|x))`.
pub fn marginal_selection_prob(pi1: f64, pi0: f64, ew1: f64) -> Result<f64> {
    for (name, v) in [("pi1", pi1), ("pi0", pi0), ("ew1", ew1)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidData(format!("{name} = {v} is not a probability")));
        }
    }
    if pi1 <= 0.0 || pi0 <= 0.0 {
        return Err(Error::InvalidData("selection probabilities must be positive".into()));
    }
    Ok(decompose(pi1, pi0, ew1))
}

#[inline]
pub(crate) fn decompose(pi1: f64, pi0: f64, ew1: f64) -> f64 {
    pi1 * ew1 + pi0 * (1.0 - ew1)
}

/// Builds the selection model for `data`.
pub fn build_selection_model(data: &Dataset, opts: &SelectionOptions) -> Result<SelectionModel> {
    if !(opts.clamp > 0.0 && opts.clamp < 1.0) {
        return Err(Error::Config(format!("clamp {} must lie in (0, 1)", opts.clamp)));
    }
    let n = data.n();
    let pi_bar = match (opts.pi_bar, data.pop_size) {
        (Some(p), _) => p,
        (None, Some(big_n)) => n as f64 / big_n as f64,
        // Horvitz-Thompson estimate of N from the weights.
        (None, None) => n as f64 / data.sel_weight.iter().sum::<f64>(),
    };
    if !(pi_bar > 0.0 && pi_bar <= 1.0) {
        return Err(Error::Config(format!("Pr(S=1) = {pi_bar} must lie in (0, 1]")));
    }

    let observed: Vec<f64> = data.sel_weight.iter().map(|w| 1.0 / w).collect();
    let clamped_rows = observed.iter().filter(|&&p| p > 1.0 || p < opts.clamp).count();

    let x_sel = data.covariates(opts.covariates.as_deref());
    let design = selection_design(&data.a, &x_sel);
    let mut names = vec!["intercept".to_string(), "group".to_string()];
    names.extend(data.covariate_names(opts.covariates.as_deref()));
    let u: Vec<f64> = observed
        .iter()
        .map(|&p| p.clamp(BETA_CLAMP, 1.0 - BETA_CLAMP))
        .collect();
    let beta_fit = fit_beta_glm_design(&design, &names, &u, &vec![1.0; n])?;

    Ok(SelectionModel {
        mode: opts.mode,
        pi_bar,
        beta_fit,
        clamp: opts.clamp,
        clamped_rows,
        a: data.a.clone(),
        observed,
        x_sel,
    })
}

/// `[1, a_i, x_sel_i]` rows for the given group labels.
pub(crate) fn selection_design(a: &[u8], x_sel: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.len();
    let mut d = DMatrix::zeros(n, x_sel.ncols() + 2);
    for i in 0..n {
        d[(i, 0)] = 1.0;
        d[(i, 1)] = a[i] as f64;
        for j in 0..x_sel.ncols() {
            d[(i, j + 2)] = x_sel[(i, j)];
        }
    }
    d
}

impl SelectionModel {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// Design of the beta GLM at the observed group labels.
    pub fn design(&self) -> DMatrix<f64> {
        selection_design(&self.a, &self.x_sel)
    }

    /// Clamped beta responses used by the fit.
    pub fn response(&self) -> Vec<f64> {
        self.observed
            .iter()
            .map(|&p| p.clamp(BETA_CLAMP, 1.0 - BETA_CLAMP))
            .collect()
    }

    fn clamp_prob(&self, p: f64) -> f64 {
        p.clamp(self.clamp, 1.0)
    }

    fn modeled(&self, i: usize, a: u8, coef: &DVector<f64>) -> f64 {
        self.clamp_prob(expit(self.eta(i, a, coef)))
    }

    fn eta(&self, i: usize, a: u8, coef: &DVector<f64>) -> f64 {
        let mut eta = coef[0] + coef[1] * a as f64;
        for j in 0..self.x_sel.ncols() {
            eta += coef[j + 2] * self.x_sel[(i, j)];
        }
        eta
    }

    /// `Pr(S=1 | A=a, X=x_i)`.
    pub fn pi_ax(&self, i: usize, a: u8) -> f64 {
        self.pi_ax_with(i, a, &self.beta_fit.coef)
    }

    /// As [`Self::pi_ax`] with the beta-GLM coefficients replaced by `coef`.
    /// Known-mode probabilities at the observed group ignore `coef`.
    pub fn pi_ax_with(&self, i: usize, a: u8, coef: &DVector<f64>) -> f64 {
        match self.mode {
            SelectionMode::Known if self.a[i] == a => self.clamp_prob(self.observed[i]),
            _ => self.modeled(i, a, coef),
        }
    }

    /// Number of (row, group) probabilities that the clamp moved.
    pub fn clamped_count(&self) -> usize {
        let coef = &self.beta_fit.coef;
        let mut count = 0;
        for i in 0..self.n() {
            for a in [0u8, 1] {
                let raw = match self.mode {
                    SelectionMode::Known if self.a[i] == a => self.observed[i],
                    _ => expit(self.eta(i, a, coef)),
                };
                if raw < self.clamp || raw > 1.0 {
                    count += 1;
                }
            }
        }
        count
    }

    /// `Pr(S=1 | X=x_i)` given the population propensity `ew1 = Pr(A=1 | x_i)`.
    pub fn pi_x(&self, i: usize, ew1: f64) -> f64 {
        self.pi_x_with(i, ew1, &self.beta_fit.coef)
    }

    pub fn pi_x_with(&self, i: usize, ew1: f64, coef: &DVector<f64>) -> f64 {
        decompose(self.pi_ax_with(i, 1, coef), self.pi_ax_with(i, 0, coef), ew1)
    }
}
