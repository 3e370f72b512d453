//! Comparison fitters: majority vote, EM from random or majority-vote starts,
//! and full EM continued from a stagewise fit.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Exp1};

use crate::data::LabelMatrix;
use crate::em::{log_likelihood, m_step, posterior, Posterior};
use crate::error::{MdpdError, Result};
use crate::info::{cmi_tensor, max_cmi_norm, InformativeSet};
use crate::model::{missing_frozen_coords, MixtureModel};
use crate::stagewise::{stopwatch, FitConfig, FitTrace, StopReason, TraceRecord};

/// Modal label of every item, ignoring missing entries.
///
/// Ties go to the smallest label. An item nobody labelled gets label 0.
pub fn majority_vote(data: &LabelMatrix) -> Vec<usize> {
    let r = data.n_labels();
    let mut silent = 0;
    let out = (0..data.n_items())
        .map(|item| {
            let mut votes = vec![0usize; r];
            for c in data.row(item).into_iter().flatten() {
                votes[c] += 1;
            }
            if votes.iter().all(|&v| v == 0) {
                silent += 1;
            }
            let mut best = 0;
            for (c, &v) in votes.iter().enumerate() {
                if v > votes[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    if silent > 0 {
        log::warn!("{silent} items have no labels; majority vote assigns label 0");
    }
    out
}

/// One M-step from a one-hot posterior on `labels`.
///
/// Classes with no items are reset to global frequencies by the M-step.
pub fn init_from_labels(data: &LabelMatrix, labels: &[usize], k: usize, smoothing: f64) -> Result<MixtureModel> {
    if labels.len() != data.n_items() {
        return Err(MdpdError::ShapeMismatch(format!(
            "{} labels for {} items",
            labels.len(),
            data.n_items()
        )));
    }
    let post = Posterior::from_assignments(labels, k)?;
    let frozen = missing_frozen_coords(data)?;
    Ok(m_step(data, &post, frozen.as_ref(), smoothing)?.0)
}

/// Uniform weights and conditionals drawn from a flat Dirichlet, scaled onto
/// the trainable mass of each worker.
pub fn random_init(data: &LabelMatrix, k: usize, seed: u64) -> Result<MixtureModel> {
    if k == 0 {
        return Err(MdpdError::InvalidConfig("k must be at least 1".into()));
    }
    let frozen = missing_frozen_coords(data)?;
    let m = data.n_workers();
    let r = frozen.as_ref().map_or(data.n_labels(), |f| f.n_categories());
    let mut rng = StdRng::seed_from_u64(seed);
    let mut conditionals = vec![0.0; k * m * r];
    for kk in 0..k {
        for i in 0..m {
            let row = &mut conditionals[(kk * m + i) * r..(kk * m + i + 1) * r];
            let trainable: Vec<usize> = match &frozen {
                Some(f) => f.trainable(i),
                None => (0..r).collect(),
            };
            let free_mass = 1.0 - frozen.as_ref().map_or(0.0, |f| f.frozen_mass(i));
            let draws: Vec<f64> = trainable.iter().map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            for (&c, d) in trainable.iter().zip(draws) {
                row[c] = d / total * free_mass;
            }
            if let Some(f) = &frozen {
                for (c, v) in row.iter_mut().enumerate() {
                    if f.is_frozen(i, c) {
                        *v = f.value(i, c);
                    }
                }
            }
        }
    }
    MixtureModel::new(vec![1.0 / k as f64; k], m, r, conditionals, frozen)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmInit {
    Random { seed: u64 },
    FromLabels(Vec<usize>),
    FromModel(MixtureModel),
}

/// Plain EM with every worker in the E-step.
///
/// Uses `max_iters`, `ll_tolerance` and `smoothing` from `config`; `k` is
/// ignored for [`EmInit::FromModel`].
pub fn fit_em(data: &LabelMatrix, k: usize, init: EmInit, config: &FitConfig) -> Result<(MixtureModel, FitTrace)> {
    config.validate()?;
    let mut model = match init {
        EmInit::Random { seed } => random_init(data, k, seed)?,
        EmInit::FromLabels(labels) => init_from_labels(data, &labels, k, config.smoothing)?,
        EmInit::FromModel(model) => {
            model.check_data(data)?;
            model
        }
    };
    let set = InformativeSet::full(data.n_workers());
    let mut trace = FitTrace {
        initial_log_likelihood: log_likelihood(&model, data)?,
        records: Vec::new(),
        stop: None,
    };
    let mut prev_ll = trace.initial_log_likelihood;
    for iteration in 1..=config.max_iters {
        let elapsed_ms = stopwatch();
        let post = posterior(&model, data, &set)?;
        let max_cmi = max_cmi_norm(&cmi_tensor(data, &post, config.smoothing)?);
        model = m_step(data, &post, model.frozen(), config.smoothing)?.0;
        let ll = log_likelihood(&model, data)?;
        trace.records.push(TraceRecord {
            iteration,
            log_likelihood: ll,
            max_cmi,
            set_size: set.len(),
            n_components: model.n_components(),
            triplet: None,
            added: Vec::new(),
            split: None,
            informative_set: set.clone(),
            wall_time_ms: elapsed_ms(),
        });
        if (ll - prev_ll).abs() < config.ll_tolerance {
            trace.stop = Some(StopReason::LikelihoodStalled);
            break;
        }
        prev_ll = ll;
    }
    if trace.stop.is_none() {
        trace.stop = Some(StopReason::MaxIters);
        log::warn!("EM stopped at max_iters = {}", config.max_iters);
    }
    Ok((model, trace))
}

/// EM from majority-vote hard labels.
pub fn fit_mv_em(data: &LabelMatrix, k: usize, config: &FitConfig) -> Result<(MixtureModel, FitTrace)> {
    fit_em(data, k, EmInit::FromLabels(majority_vote(data)), config)
}

/// Full EM continued from `model`.
pub fn refine(model: &MixtureModel, data: &LabelMatrix, config: &FitConfig) -> Result<(MixtureModel, FitTrace)> {
    fit_em(data, model.n_components(), EmInit::FromModel(model.clone()), config)
}
