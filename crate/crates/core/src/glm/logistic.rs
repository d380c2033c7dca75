use nalgebra::{DMatrix, DVector};

use super::{
    check_fit_inputs, default_names, expit, logit, normalized_score_norm, relative_change, weighted_least_squares,
    with_intercept, Family, GlmFit, COEF_TOL, MAX_ITER, SCORE_TOL, SEPARATION_BOUND,
};
use crate::error::{Error, Result};

const MAX_HALVINGS: usize = 40;
/// Floor on the binomial variance so saturated rows keep a finite working response.
const MIN_VARIANCE: f64 = 1e-15;

/// Weighted logistic regression of a 0/1 response on `[1, x]`.
pub fn fit_weighted_logistic(x: &DMatrix<f64>, t: &[f64], w: &[f64]) -> Result<GlmFit> {
    fit_weighted_logistic_design(&with_intercept(x), &default_names(x.ncols()), t, w)
}

/// IRLS with step-halving on a design that already carries its intercept.
pub fn fit_weighted_logistic_design(design: &DMatrix<f64>, names: &[String], t: &[f64], w: &[f64]) -> Result<GlmFit> {
    check_fit_inputs(design, t, w)?;
    if let Some(i) = t.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidData(format!("logistic response {} at row {i} is not 0/1", t[i])));
    }
    let total: f64 = w.iter().sum();
    let w1: f64 = t.iter().zip(w).map(|(t, w)| t * w).sum();
    if w1 <= 0.0 || w1 >= total {
        return Err(Error::InvalidData(
            "logistic response needs both classes with positive weight".into(),
        ));
    }

    let k = design.ncols();
    let mut coef = DVector::zeros(k);
    coef[0] = logit(w1 / total);
    let mut loglik = log_likelihood(design, t, w, &coef);
    let mut score_norm = f64::INFINITY;

    for iter in 1..=MAX_ITER {
        let eta = design * &coef;
        let mut z = vec![0.0; t.len()];
        let mut work = vec![0.0; t.len()];
        for i in 0..t.len() {
            let mu = expit(eta[i]);
            let var = (mu * (1.0 - mu)).max(MIN_VARIANCE);
            work[i] = w[i] * var;
            z[i] = eta[i] + (t[i] - mu) / var;
        }
        let target = weighted_least_squares(design, &z, &work, names)?;

        // Step-halving keeps the likelihood monotone.
        let mut step = &target - &coef;
        let mut candidate = &coef + &step;
        let mut cand_ll = log_likelihood(design, t, w, &candidate);
        let mut halvings = 0;
        while !(cand_ll >= loglik - 1e-12 * loglik.abs()) && halvings < MAX_HALVINGS {
            step *= 0.5;
            candidate = &coef + &step;
            cand_ll = log_likelihood(design, t, w, &candidate);
            halvings += 1;
        }

        let change = relative_change(&coef, &candidate);
        coef = candidate;
        loglik = cand_ll;
        score_norm = normalized_score_norm(&score(design, t, w, &coef), total);

        if change < COEF_TOL && score_norm < SCORE_TOL {
            return Ok(GlmFit {
                family: Family::BinomialLogit,
                coef,
                names: names.to_vec(),
                converged: true,
                iterations: iter,
                dispersion: 1.0,
                precision_at_bound: false,
                fit_weights: w.to_vec(),
            });
        }
        // Under quasi-complete separation the score can vanish while the
        // coefficients keep drifting, so any unconverged iterate past the bound counts.
        if coef.amax() > SEPARATION_BOUND {
            return Err(Error::Separation {
                iterations: iter,
                max_abs_coef: coef.amax(),
                coef: coef.as_slice().to_vec(),
            });
        }
    }
    Err(Error::NonConvergence {
        model: "logistic",
        iterations: MAX_ITER,
        score_norm,
        coef: coef.as_slice().to_vec(),
    })
}

/// Per-row score contributions `w_i d_i (t_i - expit(d_i'b))` as an n×k matrix.
pub fn logistic_score_contributions(design: &DMatrix<f64>, t: &[f64], w: &[f64], coef: &DVector<f64>) -> DMatrix<f64> {
    let eta = design * coef;
    let mut out = design.clone();
    for i in 0..t.len() {
        let r = w[i] * (t[i] - expit(eta[i]));
        out.row_mut(i).scale_mut(r);
    }
    out
}

fn score(design: &DMatrix<f64>, t: &[f64], w: &[f64], coef: &DVector<f64>) -> DVector<f64> {
    let eta = design * coef;
    let resid = DVector::from_iterator(t.len(), (0..t.len()).map(|i| w[i] * (t[i] - expit(eta[i]))));
    design.tr_mul(&resid)
}

fn log_likelihood(design: &DMatrix<f64>, t: &[f64], w: &[f64], coef: &DVector<f64>) -> f64 {
    let eta = design * coef;
    (0..t.len())
        .map(|i| w[i] * (t[i] * eta[i] - log1p_exp(eta[i])))
        .sum()
}

fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
