//! Per-method parameter layout shared by point estimation and the stacked
//! estimating equations.
//!
//! A plan lists the model blocks a method depends on (propensity fits,
//! outcome regressions, the selection model) followed by its estimand
//! equations. Point estimates and the per-row estimating-equation
//! contributions are both computed from the same parameter vector, so the
//! fitted vector solves the stacked system by construction.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::{EstimationOptions, Method, OmSpec, PropensityPair};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{
    beta_limit_score_contributions, beta_score_contributions, expit, fit_wls_design, logistic_score_contributions, wls_score_contributions,
    with_intercept,
};
use crate::selection::{SelectionMode, SelectionModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PsSource {
    Sample,
    Pop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RegWeights {
    Unit,
    Selection,
    Ipt(PsSource),
    IptSelection(PsSource),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BlockKind {
    PsSample,
    PsPop,
    /// Group-specific outcome regressions, group 0 then group 1.
    OutInteracted { survey_weighted: bool },
    OutAdditive,
    Regression(RegWeights),
    Selection { with_precision: bool },
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub kind: BlockKind,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Estimand {
    /// `μ(a) = Σ c_i(a) / Σ d_i` with `d_i = 1` or the selection weight.
    Means { weighted: bool },
    /// Coefficient on the group indicator in the regression block.
    Coefficient,
}

pub(crate) struct Plan<'a> {
    pub method: Method,
    data: &'a Dataset,
    prop: Option<&'a PropensityPair>,
    sel: Option<&'a SelectionModel>,
    t: Vec<f64>,
    out_design: DMatrix<f64>,
    out_names: Vec<String>,
    add_design: DMatrix<f64>,
    add_names: Vec<String>,
    reg_design: DMatrix<f64>,
    reg_names: Vec<String>,
    sel_design: DMatrix<f64>,
    sel_response: Vec<f64>,
    pub blocks: Vec<Block>,
    pub estimand: Estimand,
    pub n_params: usize,
    pi_bar: f64,
    clamp: f64,
    trim_bounds: [Option<(f64, f64)>; 2],
}

/// Values derived from a parameter vector that the mean terms need.
struct Eval {
    e_sample: Option<Vec<f64>>,
    e_pop: Option<Vec<f64>>,
    sel_coef: DVector<f64>,
    g: Option<[Vec<f64>; 2]>,
}

impl<'a> Plan<'a> {
    pub fn new(
        method: Method,
        data: &'a Dataset,
        prop: Option<&'a PropensityPair>,
        sel: Option<&'a SelectionModel>,
        opts: &EstimationOptions,
    ) -> Result<Self> {
        let n = data.n();
        if method.needs_propensity() && prop.is_none() {
            return Err(Error::Config("propensity models are required".into()));
        }
        if method.needs_selection() && sel.is_none() {
            return Err(Error::Config("a selection model is required".into()));
        }
        let om_spec = if method == Method::OmAdditive {
            OmSpec::Additive
        } else {
            opts.om_spec
        };
        let x_out = data.covariates(opts.outcome_covariates.as_deref());
        let out_cov_names = data.covariate_names(opts.outcome_covariates.as_deref());
        let out_design = with_intercept(&x_out);
        let mut out_names = vec!["intercept".to_string()];
        out_names.extend(out_cov_names.iter().cloned());

        let group_col = DMatrix::from_iterator(n, 1, data.a.iter().map(|&a| a as f64));
        let mut add_names = vec!["intercept".to_string(), "group".to_string()];
        add_names.extend(out_cov_names.iter().cloned());
        let add_design = with_intercept(&concat_columns(&group_col, &x_out));
        let (reg_design, reg_names) = if method == Method::Slr {
            (with_intercept(&group_col), add_names[..2].to_vec())
        } else {
            (add_design.clone(), add_names.clone())
        };

        let modeled = sel.is_some_and(|s| s.mode == SelectionMode::Modeled);
        let sel_block = BlockKind::Selection {
            with_precision: sel.is_some_and(|s| !s.beta_fit.precision_at_bound),
        };
        use BlockKind::*;
        let mut kinds = match method {
            Method::Om | Method::OmAdditive => {
                let out = if om_spec == OmSpec::Interacted {
                    OutInteracted { survey_weighted: false }
                } else {
                    OutAdditive
                };
                vec![PsPop, out]
            }
            Method::Ipw1 => vec![PsPop],
            Method::Ipw2 => vec![PsSample, PsPop],
            Method::IptwHt => vec![PsSample],
            Method::NaiveG => vec![if om_spec == OmSpec::Interacted {
                OutInteracted { survey_weighted: false }
            } else {
                OutAdditive
            }],
            Method::Oracle => vec![OutInteracted { survey_weighted: true }],
            Method::Slr | Method::Mr => vec![Regression(RegWeights::Unit)],
            Method::SvyMr => vec![Regression(RegWeights::Selection)],
            Method::IptwMr => vec![PsSample, Regression(RegWeights::Ipt(PsSource::Sample))],
            Method::IptwSvyMr => vec![PsSample, Regression(RegWeights::IptSelection(PsSource::Sample))],
            Method::WiptwSvyMr => vec![PsPop, Regression(RegWeights::IptSelection(PsSource::Pop))],
        };
        if modeled && method.needs_selection() {
            kinds.push(sel_block);
        }
        let estimand = match method {
            Method::NaiveG | Method::Oracle => Estimand::Means { weighted: true },
            Method::Om | Method::OmAdditive | Method::Ipw1 | Method::Ipw2 | Method::IptwHt => {
                Estimand::Means { weighted: false }
            }
            _ => Estimand::Coefficient,
        };

        let k_ps = prop.map_or(0, |p| p.design.ncols());
        let sel_design = sel.map_or_else(|| DMatrix::zeros(0, 0), |s| s.design());
        let mut blocks = Vec::with_capacity(kinds.len());
        let mut offset = 0;
        for kind in kinds {
            let len = match kind {
                PsSample | PsPop => k_ps,
                OutInteracted { .. } => 2 * out_design.ncols(),
                OutAdditive => add_design.ncols(),
                Regression(_) => reg_design.ncols(),
                Selection { with_precision } => sel_design.ncols() + with_precision as usize,
            };
            blocks.push(Block {
                kind,
                range: offset..offset + len,
            });
            offset += len;
        }
        let n_params = offset
            + match estimand {
                Estimand::Means { .. } => 3,
                Estimand::Coefficient => 1,
            };

        let mut plan = Plan {
            method,
            data,
            prop,
            sel,
            t: data.a.iter().map(|&a| a as f64).collect(),
            out_design,
            out_names,
            add_design,
            add_names,
            reg_design,
            reg_names,
            sel_response: sel.map_or_else(Vec::new, |s| s.response()),
            sel_design,
            blocks,
            estimand,
            n_params,
            pi_bar: sel.map_or(f64::NAN, |s| s.pi_bar),
            clamp: opts.selection.clamp,
            trim_bounds: [None, None],
        };
        if let Some(q) = opts.trim {
            plan.trim_bounds = plan.trim_bounds(q)?;
        }
        Ok(plan)
    }

    fn prop(&self) -> &'a PropensityPair {
        self.prop.expect("checked in Plan::new")
    }

    fn sel(&self) -> &'a SelectionModel {
        self.sel.expect("checked in Plan::new")
    }

    fn block(&self, kind: BlockKind) -> Option<&Block> {
        self.blocks.iter().find(|b| b.kind == kind)
    }

    fn regression_block(&self) -> Option<&Block> {
        self.blocks.iter().find(|b| matches!(b.kind, BlockKind::Regression(_)))
    }

    fn outcome_block(&self) -> Option<&Block> {
        self.blocks
            .iter()
            .find(|b| matches!(b.kind, BlockKind::OutInteracted { .. } | BlockKind::OutAdditive))
    }

    fn selection_block(&self) -> Option<&Block> {
        self.blocks.iter().find(|b| matches!(b.kind, BlockKind::Selection { .. }))
    }

    /// Index of μ(1), μ(0) and the ACD in the parameter vector.
    pub fn estimand_indices(&self) -> (Option<usize>, Option<usize>, usize) {
        let m = self.n_params;
        match self.estimand {
            Estimand::Means { .. } => (Some(m - 3), Some(m - 2), m - 1),
            Estimand::Coefficient => (None, None, m - 1),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.n_params);
        for b in &self.blocks {
            match b.kind {
                BlockKind::PsSample => labels.extend(self.prop().e_sample.names.iter().map(|s| format!("ps_sample:{s}"))),
                BlockKind::PsPop => labels.extend(self.prop().e_pop.names.iter().map(|s| format!("ps_pop:{s}"))),
                BlockKind::OutInteracted { .. } => {
                    for g in 0..2 {
                        labels.extend(self.out_names.iter().map(|s| format!("outcome_g{g}:{s}")));
                    }
                }
                BlockKind::OutAdditive => labels.extend(self.add_names.iter().map(|s| format!("outcome:{s}"))),
                BlockKind::Regression(_) => labels.extend(self.reg_names.iter().map(|s| format!("regression:{s}"))),
                BlockKind::Selection { with_precision } => {
                    labels.extend(self.sel().beta_fit.names.iter().map(|s| format!("selection:{s}")));
                    if with_precision {
                        labels.push("selection:precision".into());
                    }
                }
            }
        }
        match self.estimand {
            Estimand::Means { .. } => labels.extend(["mu1".into(), "mu0".into(), "acd".into()]),
            Estimand::Coefficient => labels.push("acd".into()),
        }
        labels
    }

    /// Fits every block, then solves the estimand equations.
    pub fn fit(&self) -> Result<DVector<f64>> {
        let mut theta = DVector::zeros(self.n_params);
        let n = self.data.n();
        for b in &self.blocks {
            match b.kind {
                BlockKind::PsSample => theta.rows_mut(b.range.start, b.range.len()).copy_from(&self.prop().e_sample.coef),
                BlockKind::PsPop => theta.rows_mut(b.range.start, b.range.len()).copy_from(&self.prop().e_pop.coef),
                BlockKind::Selection { with_precision } => {
                    let k = self.sel_design.ncols();
                    theta.rows_mut(b.range.start, k).copy_from(&self.sel().beta_fit.coef);
                    if with_precision {
                        theta[b.range.start + k] = self.sel().beta_fit.dispersion;
                    }
                }
                BlockKind::OutInteracted { survey_weighted } => {
                    let k = self.out_design.ncols();
                    for g in 0..2u8 {
                        let w: Vec<f64> = (0..n)
                            .map(|i| {
                                let ind = (self.data.a[i] == g) as u8 as f64;
                                if survey_weighted {
                                    ind * self.data.sel_weight[i]
                                } else {
                                    ind
                                }
                            })
                            .collect();
                        let fit = fit_wls_design(&self.out_design, &self.out_names, &self.data.y, &w)
                            .map_err(|e| group_context(e, g))?;
                        theta.rows_mut(b.range.start + g as usize * k, k).copy_from(&fit.coef);
                    }
                }
                BlockKind::OutAdditive => {
                    let fit = fit_wls_design(&self.add_design, &self.add_names, &self.data.y, &vec![1.0; n])?;
                    theta.rows_mut(b.range.start, b.range.len()).copy_from(&fit.coef);
                }
                BlockKind::Regression(rw) => {
                    let w = self.regression_weights(rw, &theta);
                    let fit = fit_wls_design(&self.reg_design, &self.reg_names, &self.data.y, &w)?;
                    theta.rows_mut(b.range.start, b.range.len()).copy_from(&fit.coef);
                }
            }
        }

        let (i1, i0, iacd) = self.estimand_indices();
        match self.estimand {
            Estimand::Means { .. } => {
                let eval = self.eval(&theta);
                let mu = |a: u8| {
                    let (c, d): (f64, f64) = (0..n).map(|i| self.mean_terms(&eval, a, i)).fold((0.0, 0.0), |acc, t| {
                        (acc.0 + t.0, acc.1 + t.1)
                    });
                    c / d
                };
                let (m1, m0) = (mu(1), mu(0));
                theta[i1.unwrap()] = m1;
                theta[i0.unwrap()] = m0;
                theta[iacd] = m1 - m0;
            }
            Estimand::Coefficient => {
                let b = self.regression_block().expect("coefficient estimand has a regression block");
                theta[iacd] = theta[b.range.start + 1];
            }
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite estimate".into()));
        }
        Ok(theta)
    }

    /// Per-row estimating-equation contributions at `theta` (n × m).
    pub fn psi(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.data.n();
        let mut out = DMatrix::zeros(n, self.n_params);
        let ones = vec![1.0; n];
        for b in &self.blocks {
            let coef = theta.rows(b.range.start, b.range.len()).into_owned();
            let contrib = match b.kind {
                BlockKind::PsSample => logistic_score_contributions(&self.prop().design, &self.t, &ones, &coef),
                BlockKind::PsPop => {
                    logistic_score_contributions(&self.prop().design, &self.t, &self.data.sel_weight, &coef)
                }
                BlockKind::OutInteracted { survey_weighted } => {
                    let k = self.out_design.ncols();
                    let mut m = DMatrix::zeros(n, 2 * k);
                    for g in 0..2u8 {
                        let w: Vec<f64> = (0..n)
                            .map(|i| {
                                let ind = (self.data.a[i] == g) as u8 as f64;
                                if survey_weighted {
                                    ind * self.data.sel_weight[i]
                                } else {
                                    ind
                                }
                            })
                            .collect();
                        let cg = coef.rows(g as usize * k, k).into_owned();
                        let s = wls_score_contributions(&self.out_design, &self.data.y, &w, &cg);
                        m.columns_mut(g as usize * k, k).copy_from(&s);
                    }
                    m
                }
                BlockKind::OutAdditive => wls_score_contributions(&self.add_design, &self.data.y, &ones, &coef),
                BlockKind::Regression(rw) => {
                    let w = self.regression_weights(rw, theta);
                    wls_score_contributions(&self.reg_design, &self.data.y, &w, &coef)
                }
                BlockKind::Selection { with_precision } => {
                    let k = self.sel_design.ncols();
                    let c = coef.rows(0, k).into_owned();
                    if with_precision {
                        beta_score_contributions(&self.sel_design, &self.sel_response, &ones, &c, coef[k], true)
                    } else {
                        beta_limit_score_contributions(&self.sel_design, &self.sel_response, &ones, &c)
                    }
                }
            };
            out.columns_mut(b.range.start, b.range.len()).copy_from(&contrib);
        }

        let (i1, i0, iacd) = self.estimand_indices();
        match self.estimand {
            Estimand::Means { .. } => {
                let (i1, i0) = (i1.unwrap(), i0.unwrap());
                let eval = self.eval(theta);
                let (mu1, mu0, acd) = (theta[i1], theta[i0], theta[iacd]);
                for i in 0..n {
                    let (c1, d1) = self.mean_terms(&eval, 1, i);
                    let (c0, d0) = self.mean_terms(&eval, 0, i);
                    out[(i, i1)] = c1 - d1 * mu1;
                    out[(i, i0)] = c0 - d0 * mu0;
                    out[(i, iacd)] = mu1 - mu0 - acd;
                }
            }
            Estimand::Coefficient => {
                let b = self.regression_block().expect("coefficient estimand has a regression block");
                let v = theta[b.range.start + 1] - theta[iacd];
                out.column_mut(iacd).fill(v);
            }
        }
        out
    }

    fn propensities(&self, theta: &DVector<f64>, kind: BlockKind) -> Option<Vec<f64>> {
        let b = self.block(kind)?;
        let coef = theta.rows(b.range.start, b.range.len());
        let eta = &self.prop().design * coef;
        Some(eta.iter().map(|&v| expit(v).clamp(self.clamp, 1.0 - self.clamp)).collect())
    }

    fn regression_weights(&self, rw: RegWeights, theta: &DVector<f64>) -> Vec<f64> {
        let n = self.data.n();
        let ipt = |src: PsSource| {
            let kind = match src {
                PsSource::Sample => BlockKind::PsSample,
                PsSource::Pop => BlockKind::PsPop,
            };
            let e = self.propensities(theta, kind).expect("IPT weights need a propensity block");
            (0..n)
                .map(|i| if self.data.a[i] == 1 { 1.0 / e[i] } else { 1.0 / (1.0 - e[i]) })
                .collect::<Vec<f64>>()
        };
        match rw {
            RegWeights::Unit => vec![1.0; n],
            RegWeights::Selection => self.data.sel_weight.clone(),
            RegWeights::Ipt(src) => ipt(src),
            RegWeights::IptSelection(src) => ipt(src)
                .into_iter()
                .zip(&self.data.sel_weight)
                .map(|(v, w)| v * w)
                .collect(),
        }
    }

    fn eval(&self, theta: &DVector<f64>) -> Eval {
        let sel_coef = match (self.selection_block(), self.sel) {
            (Some(b), _) => theta.rows(b.range.start, self.sel_design.ncols()).into_owned(),
            (None, Some(s)) => s.beta_fit.coef.clone(),
            (None, None) => DVector::zeros(0),
        };
        let g = self.outcome_block().map(|b| {
            let coef = theta.rows(b.range.start, b.range.len()).into_owned();
            let n = self.data.n();
            match b.kind {
                BlockKind::OutInteracted { .. } => {
                    let k = self.out_design.ncols();
                    let g0 = &self.out_design * coef.rows(0, k);
                    let g1 = &self.out_design * coef.rows(k, k);
                    [g0.as_slice().to_vec(), g1.as_slice().to_vec()]
                }
                _ => {
                    let base = &self.add_design * &coef;
                    let mut g0 = vec![0.0; n];
                    let mut g1 = vec![0.0; n];
                    for i in 0..n {
                        let own = self.data.a[i] as f64;
                        g1[i] = base[i] + coef[1] * (1.0 - own);
                        g0[i] = base[i] - coef[1] * own;
                    }
                    [g0, g1]
                }
            }
        });
        Eval {
            e_sample: self.propensities(theta, BlockKind::PsSample),
            e_pop: self.propensities(theta, BlockKind::PsPop),
            sel_coef,
            g,
        }
    }

    /// Raw inverse-probability factor of row `i` for group `a` before trimming.
    fn ip_factor(&self, eval: &Eval, a: u8, i: usize) -> f64 {
        let pick = |e: &Option<Vec<f64>>| {
            let e1 = e.as_ref().expect("propensity block present")[i];
            if a == 1 {
                e1
            } else {
                1.0 - e1
            }
        };
        match self.method {
            Method::Ipw1 => {
                let pi = self.sel().pi_ax_with(i, a, &eval.sel_coef);
                self.pi_bar / (pick(&eval.e_pop) * pi)
            }
            Method::Ipw2 => {
                let ew1 = eval.e_pop.as_ref().expect("population propensity")[i];
                let pi_x = self.sel().pi_x_with(i, ew1, &eval.sel_coef);
                self.pi_bar / (pick(&eval.e_sample) * pi_x)
            }
            Method::IptwHt => 1.0 / pick(&eval.e_sample),
            _ => unreachable!("ip_factor on a non-weighting method"),
        }
    }

    /// `(c_i(a), d_i)` so that `μ(a) = Σ c / Σ d`.
    fn mean_terms(&self, eval: &Eval, a: u8, i: usize) -> (f64, f64) {
        let y = self.data.y[i];
        match self.method {
            Method::Om | Method::OmAdditive => {
                let g = eval.g.as_ref().expect("outcome block")[a as usize][i];
                let ew1 = eval.e_pop.as_ref().expect("population propensity")[i];
                let pi_x = self.sel().pi_x_with(i, ew1, &eval.sel_coef);
                (g * self.pi_bar / pi_x, 1.0)
            }
            Method::Ipw1 | Method::Ipw2 | Method::IptwHt => {
                if self.data.a[i] != a {
                    return (0.0, 1.0);
                }
                let mut w = self.ip_factor(eval, a, i);
                if let Some((lo, hi)) = self.trim_bounds[a as usize] {
                    w = w.clamp(lo, hi);
                }
                (y * w, 1.0)
            }
            Method::NaiveG | Method::Oracle => {
                let g = eval.g.as_ref().expect("outcome block")[a as usize][i];
                let w = self.data.sel_weight[i];
                (w * g, w)
            }
            _ => unreachable!("mean terms on a regression method"),
        }
    }

    /// Symmetric percentile bounds on the inverse-probability factors of each group.
    fn trim_bounds(&self, q: f64) -> Result<[Option<(f64, f64)>; 2]> {
        if !(0.0..0.5).contains(&q) {
            return Err(Error::Config(format!("trim percentile {q} must lie in [0, 0.5)")));
        }
        if !matches!(self.method, Method::Ipw1 | Method::Ipw2 | Method::IptwHt) {
            return Ok([None, None]);
        }
        let theta = self.nuisance_theta();
        let eval = self.eval(&theta);
        let mut out = [None, None];
        for a in 0..2u8 {
            let mut w: Vec<f64> = (0..self.data.n())
                .filter(|&i| self.data.a[i] == a)
                .map(|i| self.ip_factor(&eval, a, i))
                .collect();
            w.sort_by(f64::total_cmp);
            out[a as usize] = Some((quantile(&w, q), quantile(&w, 1.0 - q)));
        }
        Ok(out)
    }

    /// Parameter vector with only the fixed nuisance blocks filled in.
    fn nuisance_theta(&self) -> DVector<f64> {
        let mut theta = DVector::zeros(self.n_params);
        for b in &self.blocks {
            match b.kind {
                BlockKind::PsSample => theta.rows_mut(b.range.start, b.range.len()).copy_from(&self.prop().e_sample.coef),
                BlockKind::PsPop => theta.rows_mut(b.range.start, b.range.len()).copy_from(&self.prop().e_pop.coef),
                BlockKind::Selection { .. } => theta
                    .rows_mut(b.range.start, self.sel_design.ncols())
                    .copy_from(&self.sel().beta_fit.coef),
                _ => {}
            }
        }
        theta
    }

    /// Counts of trimmed rows and the Kish effective sample size of the
    /// method's implied row weights, evaluated at `theta`.
    pub fn weight_diagnostics(&self, theta: &DVector<f64>) -> (usize, f64) {
        let n = self.data.n();
        let eval = self.eval(theta);
        let mut trimmed = 0;
        let weights: Vec<f64> = match self.method {
            Method::Ipw1 | Method::Ipw2 | Method::IptwHt => (0..n)
                .map(|i| {
                    let a = self.data.a[i];
                    let w = self.ip_factor(&eval, a, i);
                    match self.trim_bounds[a as usize] {
                        Some((lo, hi)) => {
                            if w < lo || w > hi {
                                trimmed += 1;
                            }
                            w.clamp(lo, hi)
                        }
                        None => w,
                    }
                })
                .collect(),
            Method::Om | Method::OmAdditive => (0..n)
                .map(|i| {
                    let ew1 = eval.e_pop.as_ref().expect("population propensity")[i];
                    self.pi_bar / self.sel().pi_x_with(i, ew1, &eval.sel_coef)
                })
                .collect(),
            Method::NaiveG | Method::Oracle => self.data.sel_weight.clone(),
            _ => match self.regression_block().map(|b| b.kind) {
                Some(BlockKind::Regression(rw)) => self.regression_weights(rw, theta),
                _ => vec![1.0; n],
            },
        };
        let s: f64 = weights.iter().sum();
        let s2: f64 = weights.iter().map(|w| w * w).sum();
        (trimmed, s * s / s2)
    }
}

fn concat_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn group_context(e: Error, g: u8) -> Error {
    match e {
        Error::RankDeficient { columns } => Error::RankDeficient {
            columns: columns.into_iter().map(|c| format!("{c} (group {g} outcome model)")).collect(),
        },
        other => other,
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
