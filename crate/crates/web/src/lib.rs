//! Browser bindings. Each entry point takes plain numbers and returns a JSON
//! string so the page can stay dependency-free.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use svyacd::estimators::run_battery;
use svyacd::inference::InferenceOptions;
use svyacd::selection::marginal_selection_prob;
use svyacd::simulator::{draw_sample, generate_population, run_study_on, SimConfig};
use svyacd::{EstimationOptions, Method};

/// Upper bounds that keep a single call responsive on the main thread.
const MAX_POP: usize = 200_000;
const MAX_REPS: usize = 200;

#[derive(Serialize)]
struct Curve {
    ew1: Vec<f64>,
    pi_x: Vec<f64>,
}

#[derive(Serialize)]
struct Row {
    method: &'static str,
    acd: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct SampleReport {
    n: usize,
    true_acd: f64,
    rows: Vec<Row>,
}

#[derive(Serialize)]
struct McRow {
    method: &'static str,
    bias: f64,
    percent_bias: f64,
    coverage: f64,
    mc_sd: f64,
    median_se: f64,
    n_failed: usize,
}

#[derive(Serialize)]
struct McReport {
    true_acd: f64,
    mean_n: f64,
    rows: Vec<McRow>,
}

fn sim_config(setting: u8, n_pop: usize, gamma_ax: f64, seed: u64) -> Result<SimConfig, String> {
    if n_pop > MAX_POP {
        return Err(format!("population size is capped at {MAX_POP} in the browser"));
    }
    let cfg = SimConfig {
        n_pop,
        gamma_ax,
        seed,
        ..SimConfig::setting(setting).map_err(|e| e.to_string())?
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// `Pr(S=1 | x)` as the population share of group 1 sweeps over (0, 1).
pub fn selection_curve_json(pi1: f64, pi0: f64, points: usize) -> Result<String, String> {
    let points = points.clamp(2, 1000);
    let ew1: Vec<f64> = (0..points).map(|k| k as f64 / (points - 1) as f64).collect();
    let pi_x = ew1
        .iter()
        .map(|&e| marginal_selection_prob(pi1, pi0, e))
        .collect::<svyacd::Result<Vec<f64>>>()
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&Curve { ew1, pi_x }).map_err(|e| e.to_string())
}

/// Draws one sample from a simulated population and runs the estimator battery.
pub fn sample_battery_json(setting: u8, n_pop: usize, seed: u64) -> Result<String, String> {
    let cfg = sim_config(setting, n_pop, 0.1, seed)?;
    let pop = generate_population(&cfg, &mut cfg.rng(0)).map_err(|e| e.to_string())?;
    let data = draw_sample(&pop, &mut cfg.rng(1)).map_err(|e| e.to_string())?.data;
    let methods: Vec<Method> = Method::PROPOSED.into_iter().chain(Method::COMPARISON).collect();
    let rows = run_battery(&methods, &data, &EstimationOptions::default(), Some(&InferenceOptions::default()))
        .into_iter()
        .map(|o| match o.result {
            Ok(e) => Row {
                method: o.method.tag(),
                acd: Some(e.acd),
                ci_low: e.ci_low,
                ci_high: e.ci_high,
                error: None,
            },
            Err(err) => Row {
                method: o.method.tag(),
                acd: None,
                ci_low: None,
                ci_high: None,
                error: Some(err.to_string()),
            },
        })
        .collect();
    serde_json::to_string(&SampleReport {
        n: data.n(),
        true_acd: pop.true_acd,
        rows,
    })
    .map_err(|e| e.to_string())
}

/// A small Monte Carlo study: bias and coverage per method.
pub fn monte_carlo_json(setting: u8, n_pop: usize, reps: usize, gamma_ax: f64, seed: u64) -> Result<String, String> {
    if reps == 0 || reps > MAX_REPS {
        return Err(format!("replicates must lie in 1..={MAX_REPS}"));
    }
    let mut cfg = sim_config(setting, n_pop, gamma_ax, seed)?;
    cfg.n_reps = reps;
    cfg.methods = vec![
        Method::Om,
        Method::Ipw1,
        Method::Ipw2,
        Method::OmAdditive,
        Method::Slr,
        Method::Mr,
        Method::IptwHt,
    ];
    let pop = generate_population(&cfg, &mut cfg.rng(0)).map_err(|e| e.to_string())?;
    let res = run_study_on(&cfg, &pop).map_err(|e| e.to_string())?;
    let rows = res
        .methods
        .iter()
        .map(|m| McRow {
            method: m.method.tag(),
            bias: m.bias,
            percent_bias: m.percent_bias,
            coverage: m.coverage,
            mc_sd: m.mc_se,
            median_se: m.median_se,
            n_failed: m.n_failed,
        })
        .collect();
    serde_json::to_string(&McReport {
        true_acd: res.true_acd,
        mean_n: res.mean_sample_size,
        rows,
    })
    .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn selection_curve(pi1: f64, pi0: f64, points: usize) -> Result<String, JsError> {
    selection_curve_json(pi1, pi0, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sample_battery(setting: u8, n_pop: usize, seed: u32) -> Result<String, JsError> {
    sample_battery_json(setting, n_pop, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn monte_carlo(setting: u8, n_pop: usize, reps: usize, gamma_ax: f64, seed: u32) -> Result<String, JsError> {
    monte_carlo_json(setting, n_pop, reps, gamma_ax, seed as u64).map_err(|e| JsError::new(&e))
}
