//! Oracles shared by the focused tests and the acceptance runner.
#![allow(dead_code)]

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;
use svyacd::Dataset;

/// Coarse grid over a box, then compass search with step halving.
pub fn maximize(f: impl Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64], grid: usize) -> Vec<f64> {
    let k = lo.len();
    let mut best = lo.to_vec();
    let mut best_v = f64::NEG_INFINITY;
    let total = grid.pow(k as u32);
    for idx in 0..total {
        let mut rem = idx;
        let p: Vec<f64> = (0..k)
            .map(|j| {
                let g = rem % grid;
                rem /= grid;
                lo[j] + (hi[j] - lo[j]) * g as f64 / (grid - 1) as f64
            })
            .collect();
        let v = f(&p);
        if v > best_v {
            best_v = v;
            best = p;
        }
    }
    let mut step: Vec<f64> = (0..k).map(|j| (hi[j] - lo[j]) / (grid - 1) as f64).collect();
    while step.iter().any(|&s| s > 1e-10) {
        let mut moved = false;
        for j in 0..k {
            for sign in [1.0, -1.0] {
                let mut p = best.clone();
                p[j] += sign * step[j];
                let v = f(&p);
                if v > best_v {
                    best_v = v;
                    best = p;
                    moved = true;
                }
            }
        }
        if !moved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    best
}

pub fn logistic_ll(x: &[f64], t: &[f64], w: &[f64], b: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| {
            let eta = b[0] + b[1] * x[i];
            w[i] * (t[i] * eta - (1.0 + eta.exp()).ln())
        })
        .sum()
}

pub fn beta_ll(x: &[f64], u: &[f64], w: &[f64], p: &[f64]) -> f64 {
    let phi = p[2].exp();
    (0..x.len())
        .map(|i| {
            let mu = 1.0 / (1.0 + (-(p[0] + p[1] * x[i])).exp());
            let (a, b) = (mu * phi, (1.0 - mu) * phi);
            w[i] * (ln_gamma(phi) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * u[i].ln() + (b - 1.0) * (1.0 - u[i]).ln())
        })
        .sum()
}

pub fn col(x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(x.len(), 1, x)
}

pub struct Fixture {
    pub x: Vec<f64>,
    pub r: Vec<f64>,
    pub w: Vec<f64>,
}

pub fn logistic_fixtures() -> Vec<Fixture> {
    vec![
        Fixture {
            x: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            r: vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0],
            w: vec![1.0; 6],
        },
        Fixture {
            x: vec![-1.2, -0.7, -0.3, 0.1, 0.4, 0.8, 1.1, 1.5, 2.0, 2.2],
            r: vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0],
            w: vec![2.0, 1.0, 3.5, 1.0, 0.5, 2.0, 1.0, 4.0, 1.5, 1.0],
        },
        Fixture {
            x: vec![0.5, 0.5, 1.0, 1.0, 1.5, 1.5, 2.0, 2.0, 2.5, 2.5, 3.0, 3.0],
            r: vec![0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0],
            w: vec![1.0, 7.0, 2.0, 3.0, 1.0, 1.0, 5.0, 2.0, 1.0, 3.0, 2.0, 1.0],
        },
    ]
}

pub fn beta_fixtures() -> Vec<Fixture> {
    vec![
        Fixture {
            x: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5],
            r: vec![0.12, 0.30, 0.22, 0.45, 0.41, 0.66, 0.58, 0.80],
            w: vec![1.0; 8],
        },
        Fixture {
            x: vec![-1.0, -0.5, 0.0, 0.2, 0.7, 1.0, 1.3, 1.8, 2.0, 2.4, 2.9, 3.1],
            r: vec![0.05, 0.20, 0.15, 0.31, 0.27, 0.50, 0.38, 0.62, 0.71, 0.55, 0.85, 0.77],
            w: vec![1.0, 2.0, 0.5, 3.0, 1.0, 1.5, 2.5, 1.0, 0.8, 2.0, 1.0, 4.0],
        },
    ]
}


/// Largest |fit - oracle| over every logistic and beta fixture parameter.
pub fn glm_oracle_gap() -> f64 {
    use svyacd::glm::{fit_beta_glm, fit_weighted_logistic};
    let mut gap = 0.0f64;
    for f in logistic_fixtures() {
        let fit = fit_weighted_logistic(&col(&f.x), &f.r, &f.w).unwrap();
        let oracle = maximize(|b| logistic_ll(&f.x, &f.r, &f.w, b), &[-6.0, -6.0], &[6.0, 6.0], 61);
        for j in 0..2 {
            gap = gap.max((fit.coef[j] - oracle[j]).abs());
        }
    }
    for f in beta_fixtures() {
        let fit = fit_beta_glm(&col(&f.x), &f.r, &f.w).unwrap();
        assert!(!fit.precision_at_bound);
        let oracle = maximize(|p| beta_ll(&f.x, &f.r, &f.w, p), &[-4.0, -3.0, 0.0], &[4.0, 3.0, 6.0], 25);
        let got = [fit.coef[0], fit.coef[1], fit.dispersion.ln()];
        for j in 0..3 {
            gap = gap.max((got[j] - oracle[j]).abs());
        }
    }
    gap
}

/// Weighted least squares against Cramer's rule on 2- and 3-column designs.
pub fn wls_normal_equation_gap() -> f64 {
    use svyacd::glm::fit_wls;
    let x = [0.3, 1.1, 2.0, 2.7, 3.9, 5.2, 6.0];
    let y = [1.0, 2.9, 4.2, 6.1, 8.3, 10.0, 12.9];
    let w = [1.0, 2.0, 0.5, 3.0, 1.0, 0.25, 2.0];
    let z = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
    let s = |f: &dyn Fn(usize) -> f64| (0..x.len()).map(|i| w[i] * f(i)).sum::<f64>();

    let (s0, sx, sxx) = (s(&|_| 1.0), s(&|i| x[i]), s(&|i| x[i] * x[i]));
    let (sy, sxy) = (s(&|i| y[i]), s(&|i| x[i] * y[i]));
    let det = s0 * sxx - sx * sx;
    let b = [(sy * sxx - sx * sxy) / det, (s0 * sxy - sx * sy) / det];
    let fit = fit_wls(&col(&x), &y, &w).unwrap();
    let mut gap = (fit.coef[0] - b[0]).abs().max((fit.coef[1] - b[1]).abs());

    let cols: [&dyn Fn(usize) -> f64; 3] = [&|_| 1.0, &|i| x[i], &|i| z[i]];
    let mut a = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for r in 0..3 {
        for c in 0..3 {
            a[r][c] = s(&|i| cols[r](i) * cols[c](i));
        }
        rhs[r] = s(&|i| cols[r](i) * y[i]);
    }
    let det3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(a);
    let design = DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { x[i] } else { z[i] });
    let fit = fit_wls(&design, &y, &w).unwrap();
    for k in 0..3 {
        let mut m = a;
        for r in 0..3 {
            m[r][k] = rhs[r];
        }
        gap = gap.max((fit.coef[k] - det3(m) / d).abs());
    }
    gap
}

fn expit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Selection probability over the eight (A, X) cells, additive on the logit
/// scale so the beta working model is exact.
pub fn cell_pr_s(a: usize, x: usize) -> f64 {
    expit(-1.5 + 0.8 * a as f64 + [0.0, -0.4, 0.5, 1.1][x])
}

pub const CELL_COUNTS: [[usize; 4]; 2] = [[6, 10, 4, 8], [4, 6, 12, 10]];
pub const CELL_MEANS: [[f64; 4]; 2] = [[1.0, 2.5, -0.5, 3.0], [2.0, 2.0, 1.5, 5.5]];

/// Sample over eight cells, its selection fraction, and the population ACD.
pub fn cell_data() -> (Dataset, f64, f64) {
    let (mut y, mut a, mut xs, mut w) = (vec![], vec![], vec![], vec![]);
    for g in 0..2 {
        for x in 0..4 {
            for k in 0..CELL_COUNTS[g][x] {
                let spread = if k % 2 == 0 { 0.75 } else { -0.75 };
                y.push(CELL_MEANS[g][x] + spread);
                a.push(g as u8);
                xs.push(x);
                w.push(1.0 / cell_pr_s(g, x));
            }
        }
    }
    let n = y.len();
    let design = DMatrix::from_fn(n, 3, |i, j| (xs[i] == j + 1) as u8 as f64);
    let data = Dataset::from_columns(y, a, design, w).unwrap();

    // Population cells implied by the sample: N_ax = n_ax / pr_s(a, x).
    let big_n: Vec<[f64; 4]> = (0..2)
        .map(|g| std::array::from_fn(|x| CELL_COUNTS[g][x] as f64 / cell_pr_s(g, x)))
        .collect();
    let total: f64 = big_n.iter().flatten().sum();
    let acd: f64 = (0..4)
        .map(|x| (big_n[0][x] + big_n[1][x]) / total * (CELL_MEANS[1][x] - CELL_MEANS[0][x]))
        .sum();
    (data, n as f64 / total, acd)
}

/// OM, IPW1 and IPW2 on the eight-cell design under a selection mode.
pub fn cell_estimates(mode: svyacd::selection::SelectionMode) -> (Vec<f64>, f64) {
    use svyacd::estimators::{estimate_acd, fit_propensities};
    use svyacd::selection::build_selection_model;
    use svyacd::{EstimationOptions, Method};
    let (data, pi_bar, truth) = cell_data();
    let mut opts = EstimationOptions::default();
    opts.selection.pi_bar = Some(pi_bar);
    opts.selection.mode = mode;
    let prop = fit_propensities(&data, None).unwrap();
    let sel = build_selection_model(&data, &opts.selection).unwrap();
    let est = Method::PROPOSED
        .iter()
        .map(|&m| estimate_acd(m, &data, Some(&prop), Some(&sel), &opts, None).unwrap().acd)
        .collect();
    (est, truth)
}
