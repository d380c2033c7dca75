use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Columns whose residual norm after projection onto the preceding columns
/// falls below this fraction of their own norm are treated as collinear.
const RANK_TOL: f64 = 1e-10;

/// Solves `min_b Σ w_i (y_i - d_i'b)^2` by a Householder QR of `diag(√w) D`.
///
/// `design` already contains any intercept column. `names` labels the design
/// columns for rank-deficiency errors.
pub fn weighted_least_squares(
    design: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    names: &[String],
) -> Result<DVector<f64>> {
    let (n, p) = design.shape();
    let mut scaled = design.clone();
    let mut rhs = DVector::zeros(n);
    for i in 0..n {
        let s = w[i].sqrt();
        scaled.row_mut(i).scale_mut(s);
        rhs[i] = s * y[i];
    }
    let norms: Vec<f64> = scaled.column_iter().map(|c| c.norm()).collect();

    if n < p {
        return Err(Error::RankDeficient {
            columns: names[n..].to_vec(),
        });
    }

    let qr = scaled.qr();
    let r = qr.r();
    let collinear: Vec<String> = (0..p)
        .filter(|&j| norms[j] == 0.0 || r[(j, j)].abs() <= RANK_TOL * norms[j])
        .map(|j| names.get(j).cloned().unwrap_or_else(|| format!("column {j}")))
        .collect();
    if !collinear.is_empty() {
        return Err(Error::RankDeficient { columns: collinear });
    }

    qr.q_tr_mul(&mut rhs);
    let top = rhs.rows(0, p).into_owned();
    r.solve_upper_triangular(&top)
        .ok_or_else(|| Error::RankDeficient { columns: names.to_vec() })
}
