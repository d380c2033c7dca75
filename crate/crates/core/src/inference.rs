//! Stacked M-estimation: numeric Jacobian, influence functions and the iid or
//! stratified-cluster sandwich variance.
//!
//! Scaling: `psi_bar = n^-1 sum psi_i`, `M = -d psi_bar / d theta`,
//! `phi_i = M^-1 psi_i` and `V = n^-2 sum phi_i phi_i'`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Condition number above which the Jacobian is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

type PsiFn<'a> = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'a;

/// Parameter vector, per-row estimating-equation evaluator and labels.
pub struct EstimatingSystem<'a> {
    pub theta: DVector<f64>,
    pub labels: Vec<String>,
    psi: Box<PsiFn<'a>>,
}

impl<'a> EstimatingSystem<'a> {
    /// `psi(theta)` must return an n × m matrix of per-row contributions.
    pub fn new(
        theta: DVector<f64>,
        labels: Vec<String>,
        psi: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'a,
    ) -> Result<Self> {
        if labels.len() != theta.len() {
            return Err(Error::System(format!(
                "{} labels for {} parameters",
                labels.len(),
                theta.len()
            )));
        }
        let sys = EstimatingSystem {
            theta,
            labels,
            psi: Box::new(psi),
        };
        let m = sys.psi(&sys.theta);
        if m.ncols() != sys.theta.len() {
            return Err(Error::System(format!(
                "psi returns {} columns for {} parameters",
                m.ncols(),
                sys.theta.len()
            )));
        }
        Ok(sys)
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn psi(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        (self.psi)(theta)
    }

    /// Column sums of the contributions.
    pub fn psi_sum(&self, theta: &DVector<f64>) -> DVector<f64> {
        column_sums(&self.psi(theta))
    }

    /// Max-norm of `sum_i psi_i` at the stored estimate.
    pub fn stationarity(&self) -> f64 {
        self.psi_sum(&self.theta).amax()
    }
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

/// `M = -d psi_bar / d theta` by central differences with steps
/// `h_j = cbrt(eps) max(1, |theta_j|)`. Fails when M is numerically singular.
pub fn numeric_jacobian(system: &EstimatingSystem, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let m = theta.len();
    let n = system.psi(theta).nrows();
    if n == 0 {
        return Err(Error::System("estimating system has no rows".into()));
    }
    let h0 = f64::EPSILON.cbrt();
    let column = |j: usize| -> DVector<f64> {
        let h = h0 * theta[j].abs().max(1.0);
        let mut up = theta.clone();
        let mut down = theta.clone();
        up[j] += h;
        down[j] -= h;
        // Use the step actually representable in floating point.
        let step = up[j] - down[j];
        (system.psi_sum(&up) - system.psi_sum(&down)) / (-(step) * n as f64)
    };
    #[cfg(feature = "parallel")]
    let cols: Vec<DVector<f64>> = {
        use rayon::prelude::*;
        (0..m).into_par_iter().map(column).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let cols: Vec<DVector<f64>> = (0..m).map(column).collect();

    let mut jac = DMatrix::zeros(m, m);
    for (j, c) in cols.into_iter().enumerate() {
        jac.set_column(j, &c);
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::System("Jacobian has non-finite entries".into()));
    }
    check_conditioning(&jac, &system.labels)?;
    Ok(jac)
}

/// Condition number of the row-equilibrated matrix; names the parameter that
/// loads most on the weakest direction when it exceeds [`MAX_CONDITION`].
fn check_conditioning(jac: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    let mut scaled = jac.clone();
    for mut row in scaled.row_iter_mut() {
        let s = row.amax();
        if s > 0.0 {
            row /= s;
        }
    }
    let svd = scaled.svd(false, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let (imin, smin) = sv.argmin();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if condition > MAX_CONDITION || !condition.is_finite() {
        let v_t = svd.v_t.expect("requested right singular vectors");
        let dir = v_t.row(imin);
        let k = dir.iter().enumerate().fold(0, |best, (j, v)| if v.abs() > dir[best].abs() { j } else { best });
        return Err(Error::SingularJacobian {
            condition,
            parameter: labels.get(k).cloned().unwrap_or_else(|| format!("theta[{k}]")),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    #[default]
    Iid,
    StratifiedCluster,
}

impl std::str::FromStr for VarianceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "iid" => Ok(VarianceMode::Iid),
            "stratifiedcluster" | "stratified_cluster" | "cluster" => Ok(VarianceMode::StratifiedCluster),
            other => Err(Error::Config(format!("unknown variance mode `{other}` (iid|stratified_cluster)"))),
        }
    }
}

/// Handling of strata that contain a single PSU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum LonelyPsuPolicy {
    #[default]
    Error,
    /// The lone PSU is centered at the grand mean of all PSU totals.
    CenterAtGrandMean,
    /// The stratum is merged into its neighbour in sorted stratum order.
    CollapseStrata,
}

impl std::str::FromStr for LonelyPsuPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "error" => Ok(LonelyPsuPolicy::Error),
            "centeratgrandmean" | "center_at_grand_mean" => Ok(LonelyPsuPolicy::CenterAtGrandMean),
            "collapsestrata" | "collapse_strata" => Ok(LonelyPsuPolicy::CollapseStrata),
            other => Err(Error::Config(format!(
                "unknown lonely-PSU policy `{other}` (error|centerAtGrandMean|collapseStrata)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub variance: VarianceMode,
    pub lonely_psu: LonelyPsuPolicy,
    pub alpha: f64,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            variance: VarianceMode::Iid,
            lonely_psu: LonelyPsuPolicy::Error,
            alpha: 0.05,
        }
    }
}

/// Stratum and PSU membership of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyDesign {
    pub strata: Vec<String>,
    /// PSU labels within each stratum.
    pub psus: Vec<Vec<String>>,
    /// Row → (stratum index, PSU index within stratum).
    pub membership: Vec<(usize, usize)>,
    /// Strata kept with a single PSU under [`LonelyPsuPolicy::CenterAtGrandMean`].
    lonely: Vec<bool>,
}

impl SurveyDesign {
    /// Builds a design from per-row labels. A missing PSU column makes each
    /// row its own PSU; a missing stratum column puts every row in one stratum.
    pub fn new(stratum: Option<&[String]>, psu: Option<&[String]>, n: usize, policy: LonelyPsuPolicy) -> Result<Self> {
        for (what, col) in [("stratum", stratum), ("psu", psu)] {
            if let Some(c) = col {
                if c.len() != n {
                    return Err(Error::Dimension(format!("{what} column has {} rows, expected {n}", c.len())));
                }
            }
        }
        let stratum_of = |i: usize| stratum.map_or_else(String::new, |s| s[i].clone());
        let psu_of = |i: usize| psu.map_or_else(|| format!("row{i:012}"), |p| p[i].clone());

        let mut cells: BTreeMap<String, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
        for i in 0..n {
            cells.entry(stratum_of(i)).or_default().entry(psu_of(i)).or_default().push(i);
        }

        let mut groups: Vec<(String, BTreeMap<String, Vec<usize>>)> = cells.into_iter().collect();
        if policy == LonelyPsuPolicy::CollapseStrata {
            while groups.len() > 1 {
                let Some(k) = groups.iter().position(|g| g.1.len() == 1) else {
                    break;
                };
                let (name, cell) = groups.remove(k);
                let target = k.min(groups.len() - 1);
                let merged = &mut groups[target];
                merged.0 = if target < k {
                    format!("{}+{name}", merged.0)
                } else {
                    format!("{name}+{}", merged.0)
                };
                for (p, rows) in cell {
                    // Prefix keeps PSU labels from different strata distinct.
                    merged.1.entry(format!("{name}/{p}")).or_default().extend(rows);
                }
            }
        }

        let mut strata = Vec::new();
        let mut psus = Vec::new();
        let mut lonely = Vec::new();
        let mut membership = vec![(0, 0); n];
        for (k, (name, cell)) in groups.into_iter().enumerate() {
            if cell.len() == 1 && policy != LonelyPsuPolicy::CenterAtGrandMean {
                return Err(Error::LonelyPsu {
                    stratum: if name.is_empty() { "<all>".into() } else { name },
                });
            }
            lonely.push(cell.len() == 1);
            let mut labels = Vec::new();
            for (j, (p, rows)) in cell.into_iter().enumerate() {
                for r in rows {
                    membership[r] = (k, j);
                }
                labels.push(p);
            }
            strata.push(name);
            psus.push(labels);
        }
        Ok(SurveyDesign {
            strata,
            psus,
            membership,
            lonely,
        })
    }

    pub fn from_dataset(data: &Dataset, policy: LonelyPsuPolicy) -> Result<Self> {
        SurveyDesign::new(data.stratum.as_deref(), data.psu.as_deref(), data.n(), policy)
    }

    pub fn n_rows(&self) -> usize {
        self.membership.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceEstimate {
    #[serde(skip)]
    pub vcov: DMatrix<f64>,
    pub se: Vec<f64>,
    pub mode: VarianceMode,
}

/// Influence contributions `phi_i = M^-1 psi_i` as rows of an n × m matrix.
pub fn influence(system: &EstimatingSystem, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let jac = numeric_jacobian(system, theta)?;
    let lu = jac.clone().lu();
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::SingularJacobian {
            condition: f64::INFINITY,
            parameter: "<all>".into(),
        })?;
    let psi = system.psi(theta);
    Ok(psi * inv.transpose())
}

/// Sandwich covariance of `theta`. `design = None` gives the iid form.
pub fn sandwich_variance(
    system: &EstimatingSystem,
    theta: &DVector<f64>,
    design: Option<&SurveyDesign>,
) -> Result<VarianceEstimate> {
    let phi = influence(system, theta)?;
    variance_from_influence(&phi, design)
}

/// Iid or stratified-cluster covariance from influence rows.
pub fn variance_from_influence(phi: &DMatrix<f64>, design: Option<&SurveyDesign>) -> Result<VarianceEstimate> {
    let (n, m) = phi.shape();
    let nf = n as f64;
    let (mut vcov, mode) = match design {
        None => (phi.tr_mul(phi) / (nf * nf), VarianceMode::Iid),
        Some(d) => {
            if d.n_rows() != n {
                return Err(Error::Dimension(format!(
                    "survey design covers {} rows, influence matrix has {n}",
                    d.n_rows()
                )));
            }
            // PSU totals of phi_i / n.
            let mut totals: Vec<Vec<DVector<f64>>> =
                d.psus.iter().map(|p| vec![DVector::zeros(m); p.len()]).collect();
            for (i, &(k, j)) in d.membership.iter().enumerate() {
                totals[k][j] += phi.row(i).transpose() / nf;
            }
            let n_psu: usize = totals.iter().map(|t| t.len()).sum();
            let grand = totals.iter().flatten().fold(DVector::zeros(m), |acc, t| acc + t) / n_psu as f64;
            let mut v = DMatrix::zeros(m, m);
            for (k, t) in totals.iter().enumerate() {
                let jk = t.len();
                if d.lonely[k] {
                    let dev = &t[0] - &grand;
                    v += &dev * dev.transpose();
                    continue;
                }
                let mean = t.iter().fold(DVector::zeros(m), |acc, x| acc + x) / jk as f64;
                let mut s = DMatrix::zeros(m, m);
                for x in t {
                    let dev = x - &mean;
                    s += &dev * dev.transpose();
                }
                v += s * (jk as f64 / (jk as f64 - 1.0));
            }
            (v, VarianceMode::StratifiedCluster)
        }
    };
    vcov = (&vcov + vcov.transpose()) * 0.5;
    let se = vcov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(VarianceEstimate { vcov, se, mode })
}

/// `estimate ± z_{1-alpha/2} se`.
pub fn wald_ci(estimate: f64, se: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(se >= 0.0) {
        return Err(Error::InvalidData(format!("standard error {se} is negative")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} must lie in (0, 1)")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    Ok((estimate - z * se, estimate + z * se))
}
