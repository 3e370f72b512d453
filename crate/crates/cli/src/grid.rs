//! Experiment grid: every (alpha, seed, algorithm) cell on alpha-sparse data.
//!
//! Cells run one after another; each is fully determined by its seed.

use std::io::Write;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use mdpd_core::crowd::{numbered_ids, predict, prediction_error, LabelTable, Matching};
use mdpd_core::io::FORMAT_VERSION;
use mdpd_core::synth::{compute_benchmark, gen_alpha_sparse, SynthMode, SynthSpec};
use mdpd_core::{FitConfig, InformativeSet};

use crate::commands::{run_fit, synthetic_labels};
use crate::{usage, Algorithm, GridArgs, PosteriorArg};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSynth {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_p")]
    pub p: f64,
}

fn default_m() -> usize {
    100
}
fn default_n() -> usize {
    1000
}
fn default_k() -> usize {
    3
}
fn default_p() -> f64 {
    0.6
}

impl Default for GridSynth {
    fn default() -> Self {
        Self {
            m: default_m(),
            n: default_n(),
            k: default_k(),
            p: default_p(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridMatching {
    Aligned,
    #[default]
    BestPermutation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub alphas: Vec<f64>,
    /// Seeds `0..seeds`.
    pub seeds: u64,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub matching: GridMatching,
    /// Posterior used to predict with stagewise models.
    #[serde(default)]
    pub posterior: PosteriorArg,
    #[serde(default)]
    pub synth: GridSynth,
    /// Fit settings; `seed` is replaced by the cell seed.
    #[serde(default)]
    pub fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub alpha: f64,
    pub seed: u64,
    pub algorithm: &'static str,
    pub error: f64,
    pub benchmark_error: f64,
    pub set_size: usize,
    pub iterations: usize,
    pub ll: f64,
    pub benchmark_ll: f64,
}

pub fn parse_config(text: &str) -> Result<GridConfig> {
    let config: GridConfig = toml::from_str(text).map_err(|e| usage(e.to_string()))?;
    if config.alphas.is_empty() || config.seeds == 0 || config.algorithms.is_empty() {
        return Err(usage("alphas, seeds and algorithms must be non-empty"));
    }
    if config.algorithms.contains(&Algorithm::Refine) {
        return Err(usage(
            "refine needs a starting model and cannot run in a grid; use `fit refine`",
        ));
    }
    config.fit.validate()?;
    Ok(config)
}

pub fn run_cell(config: &GridConfig, alpha: f64, seed: u64, algorithm: Algorithm) -> Result<Cell> {
    let spec = SynthSpec {
        m: config.synth.m,
        n: config.synth.n,
        k: config.synth.k,
        mode: SynthMode::AlphaSparse {
            alpha,
            p: config.synth.p,
        },
        seed,
    };
    let synth = gen_alpha_sparse(&spec)?;
    let bench = compute_benchmark(&synth.truth_model, &synth.data, &synth.truth, config.fit.smoothing)?;
    let table = LabelTable {
        data: synth.data,
        item_ids: numbered_ids(spec.n),
        worker_ids: numbered_ids(spec.m),
        label_map: synthetic_labels(spec.k),
    };
    let fit_config = FitConfig {
        seed,
        ..config.fit.clone()
    };
    let fit = run_fit(algorithm, &table, &fit_config, None)?;
    let set = match config.posterior {
        PosteriorArg::Informative if !fit.set.is_empty() => fit.set.clone(),
        _ => InformativeSet::full(spec.m),
    };
    let pred = predict(&fit.model, &table.data, Some(&set))?;
    let matching = match config.matching {
        GridMatching::Aligned => Matching::Aligned,
        GridMatching::BestPermutation => Matching::BestPermutation,
    };
    Ok(Cell {
        alpha,
        seed,
        algorithm: algorithm.name(),
        error: prediction_error(&pred, &synth.truth, matching)?,
        benchmark_error: bench.error,
        set_size: fit.set.len(),
        iterations: fit.trace.iterations(),
        ll: fit
            .trace
            .last()
            .map_or(fit.trace.initial_log_likelihood, |r| r.log_likelihood),
        benchmark_ll: bench.log_likelihood,
    })
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn run(args: &GridArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let config = parse_config(&text).with_context(|| format!("in {}", args.config.display()))?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let header = format!(
        "# format_version={FORMAT_VERSION}\n# config={}\n",
        serde_json::to_string(&config)?
    );

    let mut cells = Vec::new();
    for &alpha in &config.alphas {
        for seed in 0..config.seeds {
            for &algorithm in &config.algorithms {
                let cell = run_cell(&config, alpha, seed, algorithm)?;
                log::info!("alpha {alpha} seed {seed} {}: error {:.4}", cell.algorithm, cell.error);
                cells.push(cell);
            }
        }
    }

    let mut out = std::fs::File::create(args.out.join("cells.csv"))?;
    out.write_all(header.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    for cell in &cells {
        w.serialize(cell)?;
    }
    w.flush()?;

    let mut out = std::fs::File::create(args.out.join("summary.csv"))?;
    out.write_all(header.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "alpha",
        "algorithm",
        "median_error",
        "median_benchmark_error",
        "median_set_size",
    ])?;
    println!("alpha  algorithm   median_error  median_benchmark_error");
    for &alpha in &config.alphas {
        for &algorithm in &config.algorithms {
            let chosen: Vec<&Cell> = cells
                .iter()
                .filter(|c| c.alpha == alpha && c.algorithm == algorithm.name())
                .collect();
            let err = median(&mut chosen.iter().map(|c| c.error).collect::<Vec<_>>());
            let bench = median(&mut chosen.iter().map(|c| c.benchmark_error).collect::<Vec<_>>());
            let size = median(&mut chosen.iter().map(|c| c.set_size as f64).collect::<Vec<_>>());
            w.write_record([
                alpha.to_string(),
                algorithm.name().to_string(),
                err.to_string(),
                bench.to_string(),
                size.to_string(),
            ])?;
            println!("{alpha:<6} {:<11} {err:<13.4} {bench:.4}", algorithm.name());
        }
    }
    w.flush()?;
    println!("wrote {}", args.out.display());
    Ok(())
}
