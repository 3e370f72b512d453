//! Synthetic sparse crowdsourcing data and truth-model benchmarks.
//!
//! Items carry a uniform true class. Informative workers report it with a
//! worker-specific accuracy and otherwise pick a wrong class uniformly;
//! every other worker labels from a fixed random distribution drawn once
//! from a flat Dirichlet, independent of the class.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::data::LabelMatrix;
use crate::em::{log_likelihood, posterior};
use crate::error::{MdpdError, Result};
use crate::info::{cmi_tensor, max_cmi_norm, InformativeSet};
use crate::model::MixtureModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SynthMode {
    /// The first `ceil(alpha * M)` workers share accuracy `p`.
    AlphaSparse { alpha: f64, p: f64 },
    /// Accuracy falls linearly from `p_start` (first worker) to `p_end`
    /// (worker `n_informative`).
    Decaying {
        n_informative: usize,
        p_start: f64,
        p_end: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    #[serde(flatten)]
    pub mode: SynthMode,
    pub seed: u64,
}

impl SynthSpec {
    /// 100 workers, 1000 items, 3 classes, accuracy 0.6 on the informative fraction.
    pub fn alpha_sparse(alpha: f64, seed: u64) -> Self {
        Self {
            m: 100,
            n: 1000,
            k: 3,
            mode: SynthMode::AlphaSparse { alpha, p: 0.6 },
            seed,
        }
    }

    /// 100 workers, 1000 items, 3 classes, 30 informative workers from 0.7 down to 0.45.
    pub fn decaying(seed: u64) -> Self {
        Self {
            m: 100,
            n: 1000,
            k: 3,
            mode: SynthMode::Decaying {
                n_informative: 30,
                p_start: 0.7,
                p_end: 0.45,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MdpdError::InvalidConfig(msg));
        if self.m == 0 || self.n == 0 {
            return bad("m and n must be positive".into());
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        let chance = 1.0 / self.k as f64;
        match self.mode {
            SynthMode::AlphaSparse { alpha, p } => {
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return bad(format!("alpha must be in (0, 1], got {alpha}"));
                }
                if !(p > chance && p <= 1.0) {
                    return bad(format!("p must be in (1/k, 1], got {p}"));
                }
            }
            SynthMode::Decaying {
                n_informative,
                p_start,
                p_end,
            } => {
                if n_informative == 0 || n_informative > self.m {
                    return bad(format!("n_informative must be in 1..={}, got {n_informative}", self.m));
                }
                if p_start < p_end {
                    return bad(format!("p_start {p_start} below p_end {p_end}"));
                }
                if !(p_end > chance && p_start <= 1.0) {
                    return bad(format!("accuracies must lie in (1/k, 1], got {p_start}..{p_end}"));
                }
            }
        }
        Ok(())
    }

    /// Accuracy of each informative worker, in worker order.
    pub fn abilities(&self) -> Vec<f64> {
        match self.mode {
            SynthMode::AlphaSparse { alpha, p } => vec![p; informative_count(alpha, self.m)],
            SynthMode::Decaying {
                n_informative,
                p_start,
                p_end,
            } => (0..n_informative)
                .map(|i| {
                    if n_informative == 1 {
                        p_start
                    } else {
                        p_start + (p_end - p_start) * i as f64 / (n_informative - 1) as f64
                    }
                })
                .collect(),
        }
    }
}

/// `ceil(alpha * m)`, robust to products like `0.3 * 100 = 30.000000000000004`.
pub fn informative_count(alpha: f64, m: usize) -> usize {
    let x = alpha * m as f64;
    let rounded = x.round();
    if (x - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        x.ceil() as usize
    }
    .min(m)
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub data: LabelMatrix,
    /// 0-based true class of every item.
    pub truth: Vec<usize>,
    pub truth_model: MixtureModel,
    pub informative_workers: Vec<usize>,
    pub abilities: Vec<f64>,
}

fn flat_dirichlet(rng: &mut StdRng, len: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..len).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// The generating mixture: uniform class weights and `R = K` labels.
pub fn truth_model(spec: &SynthSpec) -> Result<MixtureModel> {
    spec.validate()?;
    let k = spec.k;
    let abilities = spec.abilities();
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let mut cond = vec![vec![Vec::new(); spec.m]; k];
    for i in 0..spec.m {
        if let Some(&p) = abilities.get(i) {
            let wrong = (1.0 - p) / (k - 1) as f64;
            for (class, slice) in cond.iter_mut().enumerate() {
                slice[i] = (0..k).map(|r| if r == class { p } else { wrong }).collect();
            }
        } else {
            let dist = flat_dirichlet(&mut rng, k);
            for slice in cond.iter_mut() {
                slice[i] = dist.clone();
            }
        }
    }
    MixtureModel::from_nested(vec![1.0 / k as f64; k], &cond, None)
}

fn generate(spec: &SynthSpec) -> Result<SynthData> {
    let model = truth_model(spec)?;
    let (data, truth) = model.sample(spec.n, spec.seed ^ 0x5DEE_CE66_D1CE_5EED)?;
    let abilities = spec.abilities();
    Ok(SynthData {
        spec: *spec,
        data,
        truth,
        truth_model: model,
        informative_workers: (0..abilities.len()).collect(),
        abilities,
    })
}

pub fn gen_alpha_sparse(spec: &SynthSpec) -> Result<SynthData> {
    if !matches!(spec.mode, SynthMode::AlphaSparse { .. }) {
        return Err(MdpdError::InvalidConfig("expected an alpha-sparse spec".into()));
    }
    generate(spec)
}

pub fn gen_decaying(spec: &SynthSpec) -> Result<SynthData> {
    if !matches!(spec.mode, SynthMode::Decaying { .. }) {
        return Err(MdpdError::InvalidConfig("expected a decaying spec".into()));
    }
    generate(spec)
}

/// Generates data for either mode.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<SynthData> {
    generate(spec)
}

/// Metrics of the generating model on the same sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub log_likelihood: f64,
    pub max_cmi: f64,
    pub error: f64,
}

pub fn compute_benchmark(
    truth_model: &MixtureModel,
    data: &LabelMatrix,
    truth: &[usize],
    smoothing: f64,
) -> Result<Benchmark> {
    if truth.len() != data.n_items() {
        return Err(MdpdError::ShapeMismatch("truth labels length".into()));
    }
    let post = posterior(truth_model, data, &InformativeSet::full(data.n_workers()))?;
    let tensor = cmi_tensor(data, &post, smoothing)?;
    let wrong = post.argmax().iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(Benchmark {
        log_likelihood: log_likelihood(truth_model, data)?,
        max_cmi: max_cmi_norm(&tensor),
        error: wrong as f64 / truth.len() as f64,
    })
}
