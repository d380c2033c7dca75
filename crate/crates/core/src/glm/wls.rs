use nalgebra::{DMatrix, DVector};

use super::{check_fit_inputs, default_names, weighted_least_squares, with_intercept, Family, GlmFit};
use crate::error::Result;

/// Weighted least squares of `y` on `[1, x]`.
pub fn fit_wls(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<GlmFit> {
    fit_wls_design(&with_intercept(x), &default_names(x.ncols()), y, w)
}

/// Weighted least squares on a design that already carries its intercept.
pub fn fit_wls_design(design: &DMatrix<f64>, names: &[String], y: &[f64], w: &[f64]) -> Result<GlmFit> {
    check_fit_inputs(design, y, w)?;
    let coef = weighted_least_squares(design, y, w, names)?;
    let fitted = design * &coef;
    let rss: f64 = (0..y.len()).map(|i| w[i] * (y[i] - fitted[i]).powi(2)).sum();
    let df = w.iter().sum::<f64>() - design.ncols() as f64;
    Ok(GlmFit {
        family: Family::GaussianIdentity,
        coef,
        names: names.to_vec(),
        converged: true,
        iterations: 1,
        dispersion: if df > 0.0 { rss / df } else { 0.0 },
        precision_at_bound: false,
        fit_weights: w.to_vec(),
    })
}

/// Per-row normal-equation contributions `w_i d_i (y_i - d_i'b)` as an n×k matrix.
pub fn wls_score_contributions(design: &DMatrix<f64>, y: &[f64], w: &[f64], coef: &DVector<f64>) -> DMatrix<f64> {
    let fitted = design * coef;
    let mut out = design.clone();
    for i in 0..y.len() {
        let r = w[i] * (y[i] - fitted[i]);
        out.row_mut(i).scale_mut(r);
    }
    out
}
