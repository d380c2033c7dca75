//! Beta regression in the mean–precision parameterization:
//! `u ~ Beta(μφ, (1-μ)φ)` with `logit(μ) = d'b` and a single precision `φ`.
//!
//! Newton iterations run on `(b, ln φ)` using the observed information, with a
//! Fisher-scoring fallback when the observed information is not positive
//! definite, and step-halving on the weighted log-likelihood.

use nalgebra::{DMatrix, DVector};

use super::special::{digamma, ln_gamma, trigamma};
use super::{
    check_fit_inputs, default_names, expit, logit, normalized_score_norm, relative_change, weighted_least_squares,
    with_intercept, Family, GlmFit, COEF_TOL, MAX_ITER, MAX_PRECISION, SCORE_TOL,
};
use crate::error::{Error, Result};

const MAX_HALVINGS: usize = 40;
const MIN_PRECISION: f64 = 1e-3;
/// Relative resolution of the weighted log-likelihood.
const LL_NOISE: f64 = 1e-10;

pub fn fit_beta_glm(x: &DMatrix<f64>, u: &[f64], w: &[f64]) -> Result<GlmFit> {
    fit_beta_glm_design(&with_intercept(x), &default_names(x.ncols()), u, w)
}

pub fn fit_beta_glm_design(design: &DMatrix<f64>, names: &[String], u: &[f64], w: &[f64]) -> Result<GlmFit> {
    check_fit_inputs(design, u, w)?;
    if let Some(row) = u.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::BoundaryResponse { row, value: u[row] });
    }
    let k = design.ncols();
    let total: f64 = w.iter().sum();
    let rho_max = MAX_PRECISION.ln();

    // Start from least squares on the logit scale and a moment estimate of φ.
    let logit_u: Vec<f64> = u.iter().map(|&v| logit(v)).collect();
    let mut coef = weighted_least_squares(design, &logit_u, w, names)?;
    let mu0 = (design * &coef).map(expit);
    let df = (total - k as f64).max(1.0);
    let resid_var = (0..u.len()).map(|i| w[i] * (u[i] - mu0[i]).powi(2)).sum::<f64>() / df;
    let mean_var = (0..u.len()).map(|i| w[i] * mu0[i] * (1.0 - mu0[i])).sum::<f64>() / total;
    let phi0 = if resid_var > 0.0 {
        (mean_var / resid_var - 1.0).clamp(1.0, MAX_PRECISION)
    } else {
        MAX_PRECISION
    };
    let mut rho = phi0.ln();
    let mut loglik = beta_log_likelihood(design, u, w, &coef, rho.exp());
    let mut score_norm = f64::INFINITY;

    for iter in 1..=MAX_ITER {
        let d = derivatives(design, u, w, &coef, rho);
        let at_bound = rho >= rho_max - 1e-12 && d.grad[k] > 0.0;
        let free = if at_bound { k } else { k + 1 };

        let grad = d.grad.rows(0, free).into_owned();
        let step_dir = newton_direction(&d, free).ok_or_else(|| Error::NonConvergence {
            model: "beta",
            iterations: iter,
            score_norm: normalized_score_norm(&grad, total),
            coef: coef.as_slice().to_vec(),
        })?;

        let mut scale = 1.0;
        let mut halvings = 0;
        let (mut cand_coef, mut cand_rho, mut cand_ll);
        loop {
            cand_coef = &coef + step_dir.rows(0, k) * scale;
            cand_rho = if free > k { rho + step_dir[k] * scale } else { rho };
            cand_rho = cand_rho.clamp(MIN_PRECISION.ln(), rho_max);
            cand_ll = beta_log_likelihood(design, u, w, &cand_coef, cand_rho.exp());
            if (cand_ll.is_finite() && cand_ll >= loglik - 1e-12 * loglik.abs()) || halvings >= MAX_HALVINGS {
                break;
            }
            // Near the optimum the log-likelihood is dominated by cancellation
            // between large log-gamma terms; within that noise floor a step is
            // judged by the score instead.
            if cand_ll.is_finite() && (cand_ll - loglik).abs() <= LL_NOISE * loglik.abs().max(1.0) {
                let cand = derivatives(design, u, w, &cand_coef, cand_rho);
                if cand.grad.rows(0, free).amax() < grad.amax() {
                    break;
                }
            }
            scale *= 0.5;
            halvings += 1;
        }

        let old = stacked(&coef, rho);
        let new = stacked(&cand_coef, cand_rho);
        let change = relative_change(&old, &new);
        coef = cand_coef;
        rho = cand_rho;
        loglik = cand_ll;

        let d = derivatives(design, u, w, &coef, rho);
        let bound_now = rho >= rho_max - 1e-12 && d.grad[k] > 0.0;
        let checked = if bound_now { k } else { k + 1 };
        score_norm = normalized_score_norm(&d.grad.rows(0, checked).into_owned(), total);
        if bound_now {
            // The mean score carries a factor φ; at the precision bound it is
            // judged on the response scale.
            score_norm /= rho.exp();
        }

        if change < COEF_TOL && score_norm < SCORE_TOL {
            if bound_now {
                coef = limit_mean_fit(design, names, u, w, coef)?;
            }
            return Ok(GlmFit {
                family: Family::BetaLogit,
                coef,
                names: names.to_vec(),
                converged: true,
                iterations: iter,
                dispersion: rho.exp(),
                precision_at_bound: bound_now,
                fit_weights: w.to_vec(),
            });
        }
    }
    Err(Error::NonConvergence {
        model: "beta",
        iterations: MAX_ITER,
        score_norm,
        coef: coef.as_slice().to_vec(),
    })
}

/// Weighted beta log-likelihood at mean coefficients `coef` and precision `phi`.
pub fn beta_log_likelihood(design: &DMatrix<f64>, u: &[f64], w: &[f64], coef: &DVector<f64>, phi: f64) -> f64 {
    let eta = design * coef;
    let lg_phi = ln_gamma(phi);
    (0..u.len())
        .map(|i| {
            let mu = expit(eta[i]);
            let (a, b) = (mu * phi, (1.0 - mu) * phi);
            w[i] * (lg_phi - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * u[i].ln() + (b - 1.0) * (1.0 - u[i]).ln())
        })
        .sum()
}

/// Per-row score contributions with respect to the mean coefficients and,
/// when `with_precision` is set, the precision `φ` (last column).
pub fn beta_score_contributions(
    design: &DMatrix<f64>,
    u: &[f64],
    w: &[f64],
    coef: &DVector<f64>,
    phi: f64,
    with_precision: bool,
) -> DMatrix<f64> {
    let k = design.ncols();
    let eta = design * coef;
    let cols = if with_precision { k + 1 } else { k };
    let mut out = DMatrix::zeros(u.len(), cols);
    let dg_phi = digamma(phi);
    for i in 0..u.len() {
        let r = RowTerms::new(eta[i], u[i], phi);
        let g_eta = w[i] * phi * (r.ystar - r.mustar) * r.dmu;
        for j in 0..k {
            out[(i, j)] = g_eta * design[(i, j)];
        }
        if with_precision {
            out[(i, k)] = w[i] * r.grad_phi(dg_phi);
        }
    }
    out
}

/// Mean-model score in the infinite-precision limit, `w_i (logit u_i - eta_i) mu_i (1 - mu_i) d_i`.
/// Used in place of [`beta_score_contributions`] for fits with `precision_at_bound`.
pub fn beta_limit_score_contributions(
    design: &DMatrix<f64>,
    u: &[f64],
    w: &[f64],
    coef: &DVector<f64>,
) -> DMatrix<f64> {
    let eta = design * coef;
    let mut out = design.clone();
    for i in 0..u.len() {
        let mu = expit(eta[i]);
        out.row_mut(i).scale_mut(w[i] * (logit(u[i]) - eta[i]) * mu * (1.0 - mu));
    }
    out
}

/// Solves the infinite-precision mean equations by reweighted least squares on
/// `logit(u)`. Data fit exactly by the mean model are then reproduced exactly
/// rather than with the O(1/φ) digamma bias of the bounded-precision fit.
fn limit_mean_fit(
    design: &DMatrix<f64>,
    names: &[String],
    u: &[f64],
    w: &[f64],
    mut coef: DVector<f64>,
) -> Result<DVector<f64>> {
    let z: Vec<f64> = u.iter().map(|&v| logit(v)).collect();
    for _ in 0..MAX_ITER {
        let eta = design * &coef;
        let ww: Vec<f64> = (0..u.len())
            .map(|i| {
                let mu = expit(eta[i]);
                w[i] * mu * (1.0 - mu)
            })
            .collect();
        let next = weighted_least_squares(design, &z, &ww, names)?;
        let change = relative_change(&coef, &next);
        coef = next;
        if change < 1e-12 {
            break;
        }
    }
    Ok(coef)
}

struct RowTerms {
    mu: f64,
    dmu: f64,
    a: f64,
    b: f64,
    ystar: f64,
    mustar: f64,
    lu: f64,
    l1u: f64,
}

impl RowTerms {
    fn new(eta: f64, u: f64, phi: f64) -> Self {
        let mu = expit(eta);
        let (a, b) = (mu * phi, (1.0 - mu) * phi);
        let (lu, l1u) = (u.ln(), (1.0 - u).ln());
        RowTerms {
            mu,
            dmu: mu * (1.0 - mu),
            a,
            b,
            ystar: lu - l1u,
            mustar: digamma(a) - digamma(b),
            lu,
            l1u,
        }
    }

    fn grad_phi(&self, dg_phi: f64) -> f64 {
        dg_phi - self.mu * digamma(self.a) - (1.0 - self.mu) * digamma(self.b)
            + self.mu * self.lu
            + (1.0 - self.mu) * self.l1u
    }
}

struct Derivatives {
    /// Gradient in (b, ρ = ln φ).
    grad: DVector<f64>,
    /// Observed Hessian in (b, ρ).
    hess: DMatrix<f64>,
    /// Expected (Fisher) information in (b, ρ).
    fisher: DMatrix<f64>,
}

fn derivatives(design: &DMatrix<f64>, u: &[f64], w: &[f64], coef: &DVector<f64>, rho: f64) -> Derivatives {
    let k = design.ncols();
    let phi = rho.exp();
    let eta = design * coef;
    let (dg_phi, tg_phi) = (digamma(phi), trigamma(phi));
    let mut grad = DVector::zeros(k + 1);
    let mut hess = DMatrix::zeros(k + 1, k + 1);
    let mut fisher = DMatrix::zeros(k + 1, k + 1);

    for i in 0..u.len() {
        let r = RowTerms::new(eta[i], u[i], phi);
        let (ta, tb) = (trigamma(r.a), trigamma(r.b));
        let resid = r.ystar - r.mustar;
        let g_eta = phi * resid * r.dmu;
        let g_phi = r.grad_phi(dg_phi);
        let info_eta = phi * phi * (ta + tb) * r.dmu * r.dmu;
        let h_eta = -info_eta + phi * resid * r.dmu * (1.0 - 2.0 * r.mu);
        let cross_expected = -r.dmu * phi * (r.mu * ta - (1.0 - r.mu) * tb);
        let h_eta_phi = r.dmu * resid + cross_expected;
        let h_phi = tg_phi - r.mu * r.mu * ta - (1.0 - r.mu).powi(2) * tb;

        let wi = w[i];
        let row = design.row(i);
        for j in 0..k {
            grad[j] += wi * g_eta * row[j];
            for l in 0..=j {
                let v = row[j] * row[l];
                hess[(j, l)] += wi * h_eta * v;
                fisher[(j, l)] += wi * info_eta * v;
            }
            // chain rule to ρ: ∂/∂ρ = φ ∂/∂φ
            hess[(k, j)] += wi * phi * h_eta_phi * row[j];
            fisher[(k, j)] -= wi * phi * cross_expected * row[j];
        }
        grad[k] += wi * phi * g_phi;
        hess[(k, k)] += wi * (phi * phi * h_phi + phi * g_phi);
        fisher[(k, k)] -= wi * phi * phi * h_phi;
    }
    hess.fill_upper_triangle_with_lower_triangle();
    fisher.fill_upper_triangle_with_lower_triangle();
    Derivatives { grad, hess, fisher }
}

/// Newton direction on the first `free` parameters; falls back to Fisher
/// scoring when the observed information is not positive definite.
fn newton_direction(d: &Derivatives, free: usize) -> Option<DVector<f64>> {
    let g = d.grad.rows(0, free).into_owned();
    let neg_h = -d.hess.view((0, 0), (free, free)).into_owned();
    let step = match neg_h.cholesky() {
        Some(ch) => ch.solve(&g),
        None => d.fisher.view((0, 0), (free, free)).into_owned().cholesky()?.solve(&g),
    };
    let mut full = DVector::zeros(d.grad.len());
    full.rows_mut(0, free).copy_from(&step);
    Some(full)
}

fn stacked(coef: &DVector<f64>, rho: f64) -> DVector<f64> {
    let mut v = coef.clone().insert_row(coef.len(), 0.0);
    v[coef.len()] = rho;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_responses_give_zero_mean_coefficient() {
        let u = [0.3, 0.5, 0.7, 0.4, 0.6];
        let fit = fit_beta_glm(&DMatrix::zeros(5, 0), &u, &[1.0; 5]).unwrap();
        assert!(fit.coef[0].abs() < 1e-10, "{}", fit.coef[0]);
    }

    #[test]
    fn constant_half_gives_zero_mean_coefficient() {
        let fit = fit_beta_glm(&DMatrix::zeros(4, 0), &[0.5; 4], &[1.0; 4]).unwrap();
        assert!(fit.coef[0].abs() < 1e-10);
        assert!(fit.precision_at_bound);
    }

    #[test]
    fn boundary_response_errors() {
        let err = fit_beta_glm(&DMatrix::zeros(3, 0), &[0.2, 1.0, 0.4], &[1.0; 3]).unwrap_err();
        assert!(matches!(err, Error::BoundaryResponse { row: 1, .. }));
        assert!(err.to_string().contains("clamp"));
    }

    #[test]
    fn constant_covariate_flagged() {
        let x = DMatrix::from_column_slice(3, 1, &[2.0, 2.0, 2.0]);
        let err = fit_beta_glm(&x, &[0.2, 0.3, 0.4], &[1.0; 3]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { ref columns } if columns == &["x1".to_string()]));
    }

    #[test]
    fn analytic_score_matches_likelihood_gradient() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let design = with_intercept(&x);
        let u = [0.2, 0.35, 0.3, 0.6];
        let w = [1.0, 2.0, 0.5, 1.0];
        let coef = DVector::from_column_slice(&[-0.4, 0.2]);
        let phi = 7.0;
        let s = beta_score_contributions(&design, &u, &w, &coef, phi, true).row_sum();
        let h = 1e-6;
        for j in 0..2 {
            let mut cp = coef.clone();
            let mut cm = coef.clone();
            cp[j] += h;
            cm[j] -= h;
            let fd = (beta_log_likelihood(&design, &u, &w, &cp, phi) - beta_log_likelihood(&design, &u, &w, &cm, phi))
                / (2.0 * h);
            assert!((s[j] - fd).abs() < 1e-6, "coef {j}: {} vs {fd}", s[j]);
        }
        let fd = (beta_log_likelihood(&design, &u, &w, &coef, phi + h) - beta_log_likelihood(&design, &u, &w, &coef, phi - h))
            / (2.0 * h);
        assert!((s[2] - fd).abs() < 1e-6);
    }

    #[test]
    fn exact_mean_model_is_recovered() {
        // u depends only on a binary covariate: 0.5 and 0.2
        let x = DMatrix::from_column_slice(6, 1, &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let u = [0.5, 0.5, 0.5, 0.2, 0.2, 0.2];
        let fit = fit_beta_glm(&x, &u, &[1.0; 6]).unwrap();
        assert!(fit.precision_at_bound);
        assert!((expit(fit.coef[0]) - 0.2).abs() < 1e-12);
        assert!((expit(fit.coef[0] + fit.coef[1]) - 0.5).abs() < 1e-12);
        let s = beta_limit_score_contributions(&with_intercept(&x), &u, &[1.0; 6], &fit.coef);
        assert!(s.amax() < 1e-12);
    }
}
