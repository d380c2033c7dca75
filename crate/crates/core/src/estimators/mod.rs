//! Group means and average controlled differences under the proposed
//! estimators and the comparison approaches.

mod method;
mod plan;

pub use method::{Method, OmSpec};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{expit, fit_weighted_logistic_design, with_intercept, GlmFit};
use crate::inference::{
    influence, variance_from_influence, wald_ci, EstimatingSystem, InferenceOptions, SurveyDesign, VarianceMode,
};
use crate::selection::{build_selection_model, SelectionModel, SelectionOptions};
use plan::{Estimand, Plan};

/// Within-sample and survey-weighted propensity fits on a shared design.
#[derive(Debug, Clone)]
pub struct PropensityPair {
    /// `Pr(A=1 | S=1, X)`, unweighted.
    pub e_sample: GlmFit,
    /// `Pr(A=1 | X)`, weighted by the selection weights.
    pub e_pop: GlmFit,
    /// `[1, X_ps]`.
    pub design: DMatrix<f64>,
}

impl PropensityPair {
    pub fn predict_sample(&self) -> Vec<f64> {
        predict(&self.design, &self.e_sample.coef)
    }

    pub fn predict_pop(&self) -> Vec<f64> {
        predict(&self.design, &self.e_pop.coef)
    }

    /// Predicted propensities outside `[clamp, 1 - clamp]`, over both fits.
    pub fn clamped_count(&self, clamp: f64) -> usize {
        self.predict_sample()
            .into_iter()
            .chain(self.predict_pop())
            .filter(|&e| e < clamp || e > 1.0 - clamp)
            .count()
    }
}

fn predict(design: &DMatrix<f64>, coef: &DVector<f64>) -> Vec<f64> {
    (design * coef).iter().map(|&v| expit(v)).collect()
}

/// Fits both propensity models on the covariate columns `cols` (all when `None`).
pub fn fit_propensities(data: &Dataset, cols: Option<&[usize]>) -> Result<PropensityPair> {
    let design = with_intercept(&data.covariates(cols));
    let mut names = vec!["intercept".to_string()];
    names.extend(data.covariate_names(cols));
    let t: Vec<f64> = data.a.iter().map(|&a| a as f64).collect();
    let e_sample = fit_weighted_logistic_design(&design, &names, &t, &vec![1.0; data.n()])?;
    let e_pop = fit_weighted_logistic_design(&design, &names, &t, &data.sel_weight)?;
    Ok(PropensityPair { e_sample, e_pop, design })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationOptions {
    pub om_spec: OmSpec,
    pub propensity_covariates: Option<Vec<usize>>,
    pub outcome_covariates: Option<Vec<usize>>,
    pub selection: SelectionOptions,
    /// Largest tolerated fraction of clamped probabilities.
    pub max_clamped_fraction: f64,
    /// Symmetric percentile at which inverse-probability factors are winsorized.
    pub trim: Option<f64>,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions {
            om_spec: OmSpec::Interacted,
            propensity_covariates: None,
            outcome_covariates: None,
            selection: SelectionOptions::default(),
            max_clamped_fraction: 0.05,
            trim: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub n: usize,
    pub clamped_selection: usize,
    pub clamped_propensity: usize,
    pub trimmed: usize,
    /// Kish effective sample size of the method's implied row weights.
    pub ess: f64,
    /// Max-norm of the summed estimating equations at the estimate.
    pub stationarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcdEstimate {
    pub method: Method,
    pub mu1: Option<f64>,
    pub mu0: Option<f64>,
    pub acd: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub diagnostics: Diagnostics,
}

fn check_positivity(
    method: Method,
    prop: Option<&PropensityPair>,
    sel: Option<&SelectionModel>,
    opts: &EstimationOptions,
    diag: &mut Diagnostics,
) -> Result<()> {
    let n = diag.n;
    let limit = opts.max_clamped_fraction;
    if method.needs_propensity() {
        if let Some(p) = prop {
            diag.clamped_propensity = p.clamped_count(opts.selection.clamp);
            if diag.clamped_propensity as f64 > limit * (2 * n) as f64 {
                return Err(Error::Positivity {
                    what: "propensity",
                    clamped: diag.clamped_propensity,
                    total: 2 * n,
                    limit,
                });
            }
        }
    }
    if method.needs_selection() {
        if let Some(s) = sel {
            diag.clamped_selection = s.clamped_count();
            if diag.clamped_selection as f64 > limit * (2 * n) as f64 {
                return Err(Error::Positivity {
                    what: "selection",
                    clamped: diag.clamped_selection,
                    total: 2 * n,
                    limit,
                });
            }
        }
    }
    Ok(())
}

/// `μ(a)` under one of the mean-type methods.
pub fn estimate_mu(
    method: Method,
    a: u8,
    data: &Dataset,
    prop: &PropensityPair,
    sel: &SelectionModel,
    opts: &EstimationOptions,
) -> Result<f64> {
    if a > 1 {
        return Err(Error::Config(format!("group {a} is not 0 or 1")));
    }
    let plan = Plan::new(method, data, Some(prop), Some(sel), opts).map_err(|e| e.in_method(method))?;
    if plan.estimand == Estimand::Coefficient {
        return Err(Error::Config(format!("{method} does not estimate group means")));
    }
    check_positivity(method, Some(prop), Some(sel), opts, &mut Diagnostics { n: data.n(), ..Default::default() })
        .map_err(|e| e.in_method(method))?;
    let theta = plan.fit().map_err(|e| e.in_method(method))?;
    let (i1, i0, _) = plan.estimand_indices();
    Ok(theta[if a == 1 { i1 } else { i0 }.expect("mean estimand")])
}

/// Stacked estimating system of `method` at its point estimate.
pub fn stack_system<'a>(
    method: Method,
    data: &'a Dataset,
    prop: Option<&'a PropensityPair>,
    sel: Option<&'a SelectionModel>,
    opts: &EstimationOptions,
) -> Result<EstimatingSystem<'a>> {
    let plan = Plan::new(method, data, prop, sel, opts)?;
    let theta = plan.fit()?;
    let labels = plan.labels();
    EstimatingSystem::new(theta, labels, move |t| plan.psi(t))
}

/// ACD under `method`, with a Wald interval when `inference` is given.
pub fn estimate_acd(
    method: Method,
    data: &Dataset,
    prop: Option<&PropensityPair>,
    sel: Option<&SelectionModel>,
    opts: &EstimationOptions,
    inference: Option<&InferenceOptions>,
) -> Result<AcdEstimate> {
    estimate_acd_inner(method, data, prop, sel, opts, inference).map_err(|e| e.in_method(method))
}

fn estimate_acd_inner(
    method: Method,
    data: &Dataset,
    prop: Option<&PropensityPair>,
    sel: Option<&SelectionModel>,
    opts: &EstimationOptions,
    inference: Option<&InferenceOptions>,
) -> Result<AcdEstimate> {
    let mut diagnostics = Diagnostics {
        n: data.n(),
        ..Default::default()
    };
    check_positivity(method, prop, sel, opts, &mut diagnostics)?;
    let plan = Plan::new(method, data, prop, sel, opts)?;
    let theta = plan.fit()?;
    let (trimmed, ess) = plan.weight_diagnostics(&theta);
    diagnostics.trimmed = trimmed;
    diagnostics.ess = ess;
    let (i1, i0, iacd) = plan.estimand_indices();
    let mut est = AcdEstimate {
        method,
        mu1: i1.map(|i| theta[i]),
        mu0: i0.map(|i| theta[i]),
        acd: theta[iacd],
        se: None,
        ci_low: None,
        ci_high: None,
        diagnostics,
    };
    if let Some(inf) = inference {
        let labels = plan.labels();
        let system = EstimatingSystem::new(theta.clone(), labels, |t| plan.psi(t))?;
        est.diagnostics.stationarity = Some(system.stationarity());
        let design = match inf.variance {
            VarianceMode::Iid => None,
            VarianceMode::StratifiedCluster => Some(SurveyDesign::from_dataset(data, inf.lonely_psu)?),
        };
        let phi = influence(&system, &theta)?;
        let var = variance_from_influence(&phi, design.as_ref())?;
        let se = var.se[iacd];
        let (lo, hi) = wald_ci(est.acd, se, inf.alpha)?;
        est.se = Some(se);
        est.ci_low = Some(lo);
        est.ci_high = Some(hi);
    }
    Ok(est)
}

/// Comparison approaches on shared fits; fails on the first method error.
pub fn comparison_estimators(
    which: &[Method],
    data: &Dataset,
    prop: Option<&PropensityPair>,
    sel: Option<&SelectionModel>,
    opts: &EstimationOptions,
    inference: Option<&InferenceOptions>,
) -> Result<Vec<AcdEstimate>> {
    which
        .iter()
        .map(|&m| estimate_acd(m, data, prop, sel, opts, inference))
        .collect()
}

/// Outcome of one method in a battery.
#[derive(Debug)]
pub struct MethodOutcome {
    pub method: Method,
    pub result: Result<AcdEstimate>,
}

/// Fits the shared propensity and selection models once and runs every
/// requested method. Methods whose inputs failed to fit report that error.
pub fn run_battery(
    methods: &[Method],
    data: &Dataset,
    opts: &EstimationOptions,
    inference: Option<&InferenceOptions>,
) -> Vec<MethodOutcome> {
    let prop = if methods.iter().any(|m| m.needs_propensity()) {
        Some(fit_propensities(data, opts.propensity_covariates.as_deref()))
    } else {
        None
    };
    let sel = if methods.iter().any(|m| m.needs_selection()) {
        Some(build_selection_model(data, &opts.selection))
    } else {
        None
    };
    let run = |&method: &Method| {
        let result = (|| {
            let p = match (&prop, method.needs_propensity()) {
                (Some(Err(e)), true) => return Err(Error::Config(format!("propensity model: {e}"))),
                (Some(Ok(p)), _) => Some(p),
                _ => None,
            };
            let s = match (&sel, method.needs_selection()) {
                (Some(Err(e)), true) => return Err(Error::Config(format!("selection model: {e}"))),
                (Some(Ok(s)), _) => Some(s),
                _ => None,
            };
            estimate_acd_inner(method, data, p, s, opts, inference)
        })();
        MethodOutcome {
            method,
            result: result.map_err(|e| e.in_method(method)),
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        methods.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        methods.iter().map(run).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::SelectionMode;

    /// Rows with x ∈ {0,1}, both groups in both cells, varied weights.
    fn toy(y: impl Fn(usize) -> f64) -> Dataset {
        let x = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let a = [0u8, 1, 0, 1, 0, 1, 0, 1, 1, 0, 0, 1];
        let w = [4.0, 2.0, 5.0, 3.0, 6.0, 2.5, 4.0, 3.0, 2.0, 8.0, 3.0, 2.0];
        let n = x.len();
        Dataset::from_columns(
            (0..n).map(y).collect(),
            a.to_vec(),
            DMatrix::from_column_slice(n, 1, &x),
            w.to_vec(),
        )
        .unwrap()
        .with_pop_size(60)
        .unwrap()
    }

    fn all_fits(data: &Dataset, opts: &EstimationOptions) -> (PropensityPair, SelectionModel) {
        (
            fit_propensities(data, None).unwrap(),
            build_selection_model(data, &opts.selection).unwrap(),
        )
    }

    #[test]
    fn constant_outcome_gives_zero_acd() {
        let data = toy(|_| 3.5);
        let opts = EstimationOptions::default();
        let (p, s) = all_fits(&data, &opts);
        // IPW2 is unnormalized: its two group sums of weights only agree when
        // the design is uniform (covered below).
        for m in Method::ALL.into_iter().filter(|&m| m != Method::Ipw2) {
            let e = estimate_acd(m, &data, Some(&p), Some(&s), &opts, None).unwrap();
            assert!(e.acd.abs() < 1e-10, "{m}: {}", e.acd);
        }
    }

    #[test]
    fn uniform_design_constant_outcome_means() {
        let mut data = toy(|_| 2.0);
        data.sel_weight = vec![5.0; data.n()];
        let opts = EstimationOptions::default();
        let (p, s) = all_fits(&data, &opts);
        for m in [Method::Om, Method::Ipw1, Method::Ipw2, Method::IptwHt] {
            for a in [0, 1] {
                let mu = estimate_mu(m, a, &data, &p, &s, &opts).unwrap();
                assert!((mu - 2.0).abs() < 1e-9, "{m} a={a}: {mu}");
            }
        }
    }

    #[test]
    fn slr_equals_difference_of_group_means() {
        let data = toy(|i| (i as f64 * 0.9).sin() * 2.0 + i as f64 * 0.1);
        let e = estimate_acd(Method::Slr, &data, None, None, &EstimationOptions::default(), None).unwrap();
        let mean = |g: u8| {
            let v: Vec<f64> = (0..data.n()).filter(|&i| data.a[i] == g).map(|i| data.y[i]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((e.acd - (mean(1) - mean(0))).abs() < 1e-12);
    }

    #[test]
    fn constant_weights_collapse_ipw2_to_iptw() {
        let mut data = toy(|i| i as f64 * 0.5 + (i % 3) as f64);
        data.sel_weight = vec![5.0; data.n()];
        let opts = EstimationOptions::default();
        let (p, s) = all_fits(&data, &opts);
        let ipw2 = estimate_acd(Method::Ipw2, &data, Some(&p), Some(&s), &opts, None).unwrap();
        let ht = estimate_acd(Method::IptwHt, &data, Some(&p), Some(&s), &opts, None).unwrap();
        assert!((ipw2.acd - ht.acd).abs() < 1e-10);
    }

    #[test]
    fn group_swap_negates_acd() {
        let data = toy(|i| (i as f64).sqrt() + (i % 2) as f64);
        let swapped = data.swap_groups();
        let opts = EstimationOptions::default();
        let (p, s) = all_fits(&data, &opts);
        let (ps, ss) = all_fits(&swapped, &opts);
        for m in Method::ALL {
            let e = estimate_acd(m, &data, Some(&p), Some(&s), &opts, None).unwrap();
            let f = estimate_acd(m, &swapped, Some(&ps), Some(&ss), &opts, None).unwrap();
            assert!((e.acd + f.acd).abs() < 1e-9, "{m}: {} vs {}", e.acd, f.acd);
        }
    }

    #[test]
    fn inference_attaches_interval_and_stationarity() {
        let data = toy(|i| (i as f64 * 0.4).cos() + (i % 2) as f64);
        let opts = EstimationOptions::default();
        let (p, s) = all_fits(&data, &opts);
        let inf = InferenceOptions::default();
        for m in Method::ALL {
            let e = estimate_acd(m, &data, Some(&p), Some(&s), &opts, Some(&inf)).unwrap();
            let (lo, hi) = (e.ci_low.unwrap(), e.ci_high.unwrap());
            assert!(lo <= e.acd && e.acd <= hi, "{m}");
            assert!(e.diagnostics.stationarity.unwrap() < 1e-6 * data.n() as f64, "{m}");
            if let (Some(m1), Some(m0)) = (e.mu1, e.mu0) {
                assert!((m1 - m0 - e.acd).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn modeled_selection_adds_beta_block() {
        let data = toy(|i| i as f64 * 0.3);
        let opts = EstimationOptions {
            selection: SelectionOptions {
                mode: SelectionMode::Modeled,
                ..Default::default()
            },
            ..Default::default()
        };
        let (p, s) = all_fits(&data, &opts);
        let sys = stack_system(Method::Ipw1, &data, Some(&p), Some(&s), &opts).unwrap();
        assert!(sys.labels.iter().any(|l| l.starts_with("selection:")));
        assert!(sys.stationarity() < 1e-6 * data.n() as f64);
        let known_sel = build_selection_model(&data, &SelectionOptions::default()).unwrap();
        let known = stack_system(Method::Ipw1, &data, Some(&p), Some(&known_sel), &EstimationOptions::default()).unwrap();
        assert!(!known.labels.iter().any(|l| l.starts_with("selection:")));
    }

    #[test]
    fn perturbing_theta_breaks_stationarity() {
        let data = toy(|i| i as f64 * 0.3 + 1.0);
        let opts = EstimationOptions::default();
        let (p, s) = all_fits(&data, &opts);
        let sys = stack_system(Method::Om, &data, Some(&p), Some(&s), &opts).unwrap();
        for j in 0..sys.n_params() {
            let mut t = sys.theta.clone();
            t[j] += 0.1;
            assert!(sys.psi_sum(&t).amax() > 1e-6, "{}", sys.labels[j]);
        }
    }

    #[test]
    fn battery_reports_missing_inputs_per_method() {
        let mut data = toy(|i| i as f64);
        // x duplicates the group indicator: propensities separate and every
        // design containing both A and X is collinear; only SLR survives.
        data.x = DMatrix::from_iterator(data.n(), 1, data.a.iter().map(|&a| a as f64 * 2.0 - 1.0));
        let out = run_battery(&Method::ALL, &data, &EstimationOptions::default(), None);
        for o in out {
            assert_eq!(o.result.is_ok(), o.method == Method::Slr, "{}", o.method);
        }
    }

    #[test]
    fn trimming_caps_weights() {
        let data = toy(|i| i as f64);
        let opts = EstimationOptions {
            trim: Some(0.2),
            ..Default::default()
        };
        let (p, s) = all_fits(&data, &opts);
        let e = estimate_acd(Method::Ipw1, &data, Some(&p), Some(&s), &opts, None).unwrap();
        assert!(e.diagnostics.trimmed > 0);
        let bad = EstimationOptions {
            trim: Some(0.7),
            ..Default::default()
        };
        assert!(estimate_acd(Method::Ipw1, &data, Some(&p), Some(&s), &bad, None).is_err());
    }
}
