//! Browser demo: stagewise fits on synthetic crowdsourcing data.
//!
//! Every export returns a JSON string; `www/index.html` draws it on canvases.
//! The plain Rust functions behind the exports are what the native tests use.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use mdpd_core::baselines::{fit_mv_em, majority_vote};
use mdpd_core::crowd::{predict, prediction_error, Matching};
use mdpd_core::synth::{compute_benchmark, gen_synthetic, SynthData, SynthMode, SynthSpec};
use mdpd_core::{
    cmi_tensor, fit_stagewise, init_one_component, posterior, FitConfig, InformativeSet, MdpdError, Result,
};

/// Largest problem the page accepts; bigger ones stall the tab.
pub const MAX_WORKERS: usize = 200;
pub const MAX_ITEMS: usize = 5000;

fn synth(mode: &str, alpha: f64, m: usize, n: usize, seed: u64) -> Result<SynthData> {
    if m > MAX_WORKERS || n > MAX_ITEMS {
        return Err(MdpdError::InvalidConfig(format!(
            "demo is limited to {MAX_WORKERS} workers and {MAX_ITEMS} items"
        )));
    }
    let mode = match mode {
        "alpha-sparse" => SynthMode::AlphaSparse { alpha, p: 0.6 },
        "decaying" => SynthMode::Decaying {
            n_informative: m.min(30),
            p_start: 0.7,
            p_end: 0.45,
        },
        other => return Err(MdpdError::InvalidConfig(format!("unknown mode {other:?}"))),
    };
    gen_synthetic(&SynthSpec { m, n, k: 3, mode, seed })
}

fn config(seed: u64) -> FitConfig {
    FitConfig {
        k_target: 3,
        seed,
        ..FitConfig::default()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub max_cmi: f64,
    pub set_size: usize,
    pub n_components: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitDemo {
    pub initial_log_likelihood: f64,
    pub benchmark_log_likelihood: f64,
    pub benchmark_max_cmi: f64,
    pub trace: Vec<TracePoint>,
    /// Workers in the order they joined the informative set.
    pub informative_set: Vec<usize>,
    pub abilities: Vec<f64>,
    pub error: f64,
    pub benchmark_error: f64,
}

/// Simulates a data set, fits it stagewise and reports the trajectory.
pub fn fit_demo(mode: &str, alpha: f64, m: usize, n: usize, seed: u64) -> Result<FitDemo> {
    let s = synth(mode, alpha, m, n, seed)?;
    let bench = compute_benchmark(&s.truth_model, &s.data, &s.truth, mdpd_core::DEFAULT_SMOOTHING)?;
    let fit = fit_stagewise(&s.data, &config(seed))?;
    let pred = predict(&fit.model, &s.data, None)?;
    Ok(FitDemo {
        initial_log_likelihood: fit.trace.initial_log_likelihood,
        benchmark_log_likelihood: bench.log_likelihood,
        benchmark_max_cmi: bench.max_cmi,
        trace: fit
            .trace
            .records
            .iter()
            .map(|r| TracePoint {
                iteration: r.iteration,
                log_likelihood: r.log_likelihood,
                max_cmi: r.max_cmi,
                set_size: r.set_size,
                n_components: r.n_components,
            })
            .collect(),
        informative_set: fit.informative_set.as_slice().to_vec(),
        abilities: s.abilities,
        error: prediction_error(&pred, &s.truth, Matching::BestPermutation)?,
        benchmark_error: bench.error,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Heatmap {
    pub m: usize,
    pub iteration: usize,
    /// Row-major `m x m` aggregate CMI; the diagonal is 0.
    pub values: Vec<f64>,
    pub informative_set: Vec<usize>,
}

/// Aggregate CMI matrix at the start of iteration `iteration + 1` of a
/// stagewise fit on decaying data; `iteration = 0` is the one-component start.
pub fn cmi_heatmap(m: usize, n: usize, seed: u64, iteration: usize) -> Result<Heatmap> {
    let s = synth("decaying", 0.0, m, n, seed)?;
    let (model, set) = if iteration == 0 {
        (
            init_one_component(&s.data, mdpd_core::DEFAULT_SMOOTHING)?,
            InformativeSet::new(),
        )
    } else {
        let fit = fit_stagewise(
            &s.data,
            &FitConfig {
                max_iters: iteration,
                ..config(seed)
            },
        )?;
        (fit.model, fit.informative_set)
    };
    let post = posterior(&model, &s.data, &set)?;
    let t = cmi_tensor(&s.data, &post, mdpd_core::DEFAULT_SMOOTHING)?;
    let mut values = t.aggregate_matrix().to_vec();
    for i in 0..m {
        values[i * m + i] = 0.0;
    }
    Ok(Heatmap {
        m,
        iteration,
        values,
        informative_set: set.as_slice().to_vec(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub alpha: f64,
    pub benchmark: f64,
    pub stagewise: f64,
    /// Stagewise error with the posterior restricted to the informative set.
    pub stagewise_on_set: f64,
    pub set_size: usize,
    pub majority_vote: f64,
    pub mv_em: f64,
}

/// Prediction errors of every method on one alpha-sparse data set.
pub fn compare_demo(alpha: f64, m: usize, n: usize, seed: u64) -> Result<Comparison> {
    let s = synth("alpha-sparse", alpha, m, n, seed)?;
    let bench = compute_benchmark(&s.truth_model, &s.data, &s.truth, mdpd_core::DEFAULT_SMOOTHING)?;
    let cfg = config(seed);
    let fit = fit_stagewise(&s.data, &cfg)?;
    let (mv_em, _) = fit_mv_em(&s.data, 3, &cfg)?;
    let err = |pred: Vec<usize>| prediction_error(&pred, &s.truth, Matching::BestPermutation);
    Ok(Comparison {
        alpha,
        benchmark: bench.error,
        stagewise: err(predict(&fit.model, &s.data, None)?)?,
        stagewise_on_set: err(predict(&fit.model, &s.data, Some(&fit.informative_set))?)?,
        set_size: fit.informative_set.len(),
        majority_vote: err(majority_vote(&s.data))?,
        mv_em: err(predict(&mv_em, &s.data, None)?)?,
    })
}

fn to_json<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = fitDemo)]
pub fn fit_demo_json(mode: &str, alpha: f64, m: usize, n: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_json(fit_demo(mode, alpha, m, n, seed.into()))
}

#[wasm_bindgen(js_name = cmiHeatmap)]
pub fn cmi_heatmap_json(m: usize, n: usize, seed: u32, iteration: usize) -> std::result::Result<String, JsError> {
    to_json(cmi_heatmap(m, n, seed.into(), iteration))
}

#[wasm_bindgen(js_name = compareDemo)]
pub fn compare_demo_json(alpha: f64, m: usize, n: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_json(compare_demo(alpha, m, n, seed.into()))
}
