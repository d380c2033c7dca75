//! Weighted generalized linear models used throughout the crate: gaussian
//! (identity link), binomial (logit link) and beta (logit mean link with a
//! constant precision).
//!
//! All fitting functions take a covariate matrix *without* an intercept
//! column; an intercept is always prepended, so coefficient vectors have
//! length `p + 1` with the intercept first.

mod beta;
mod linalg;
mod logistic;
pub(crate) mod special;
mod wls;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub use beta::{beta_limit_score_contributions, beta_log_likelihood, beta_score_contributions, fit_beta_glm, fit_beta_glm_design};
pub use linalg::weighted_least_squares;
pub use logistic::{fit_weighted_logistic, fit_weighted_logistic_design, logistic_score_contributions};
pub use wls::{fit_wls, fit_wls_design, wls_score_contributions};

/// Maximum iterations for IRLS and Newton solvers.
pub const MAX_ITER: usize = 100;
/// Relative coefficient change required for convergence.
pub const COEF_TOL: f64 = 1e-8;
/// Tolerance on the weight-normalized score max-norm.
pub const SCORE_TOL: f64 = 1e-8;
/// |coef| beyond this on the logit scale with a non-vanishing score is separation.
pub const SEPARATION_BOUND: f64 = 30.0;
/// Beta responses must be clamped into `[BETA_CLAMP, 1 - BETA_CLAMP]`.
pub const BETA_CLAMP: f64 = 1e-6;
/// Upper bound on the beta precision. Responses that the mean model fits
/// exactly drive the likelihood toward infinite precision.
pub const MAX_PRECISION: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Family {
    GaussianIdentity,
    BinomialLogit,
    BetaLogit,
}

/// A fitted weighted GLM.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub family: Family,
    pub coef: DVector<f64>,
    pub names: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    /// Residual variance for gaussian fits, precision for beta fits, 1 for logistic.
    pub dispersion: f64,
    /// Set when the beta precision hit [`MAX_PRECISION`].
    pub precision_at_bound: bool,
    pub fit_weights: Vec<f64>,
}

impl GlmFit {
    /// Number of covariates (excluding the intercept).
    pub fn n_covariates(&self) -> usize {
        self.coef.len() - 1
    }

    pub fn linear_predictor(&self, newx: &DMatrix<f64>) -> Result<DVector<f64>> {
        if newx.ncols() != self.n_covariates() {
            return Err(Error::Dimension(format!(
                "model has {} covariates, new data has {}",
                self.n_covariates(),
                newx.ncols()
            )));
        }
        Ok(with_intercept(newx) * &self.coef)
    }
}

/// Mean predictions on the response scale.
pub fn predict_mean(fit: &GlmFit, newx: &DMatrix<f64>) -> Result<DVector<f64>> {
    let eta = fit.linear_predictor(newx)?;
    Ok(match fit.family {
        Family::GaussianIdentity => eta,
        Family::BinomialLogit | Family::BetaLogit => eta.map(expit),
    })
}

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Prepends a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Default names for an intercept-augmented design: `intercept, x1, ..., xp`.
pub fn default_names(p: usize) -> Vec<String> {
    std::iter::once("intercept".to_string())
        .chain((1..=p).map(|j| format!("x{j}")))
        .collect()
}

pub(crate) fn check_fit_inputs(design: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<()> {
    if design.nrows() != y.len() || y.len() != w.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows, response {}, weights {}",
            design.nrows(),
            y.len(),
            w.len()
        )));
    }
    if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidData(format!("weight {} at row {i} is negative or non-finite", w[i])));
    }
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroWeights);
    }
    Ok(())
}

/// Max-norm of a score vector divided by the total weight.
pub(crate) fn normalized_score_norm(score: &DVector<f64>, total_weight: f64) -> f64 {
    score.amax() / total_weight
}

pub(crate) fn relative_change(old: &DVector<f64>, new: &DVector<f64>) -> f64 {
    (new - old).amax() / (1.0 + old.amax())
}
