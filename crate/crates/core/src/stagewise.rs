//! Stagewise EM: grow the informative set from the largest conditional MI
//! triplet, split components until the target count is reached, and run
//! regularized EM on the informative workers.

use serde::{Deserialize, Serialize};

use crate::data::LabelMatrix;
use crate::em::{log_likelihood, m_step, posterior};
use crate::error::{MdpdError, Result};
use crate::info::{
    cmi_tensor, max_cmi_norm, max_triplet, InformativeSet, Triplet, TripletChoice, TripletScore, DEFAULT_CMI_THRESHOLD,
};
use crate::model::{init_one_component, MixtureModel, DEFAULT_SMOOTHING};
use crate::split::{perturb_split, SplitConfig, SplitKind};

/// Milliseconds since the call, for trace timings. wasm32 has no clock; it reads 0.
#[cfg(not(target_arch = "wasm32"))]
pub(crate) fn stopwatch() -> impl Fn() -> f64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_secs_f64() * 1e3
}

#[cfg(target_arch = "wasm32")]
pub(crate) fn stopwatch() -> impl Fn() -> f64 {
    || 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub k_target: usize,
    pub max_iters: usize,
    pub cmi_threshold: f64,
    pub ll_tolerance: f64,
    pub seed: u64,
    pub smoothing: f64,
    pub split: SplitConfig,
    pub triplet_score: TripletScore,
    /// Split even when the chosen pair is already informative.
    pub split_when_in_set: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k_target: 2,
            max_iters: 100,
            cmi_threshold: DEFAULT_CMI_THRESHOLD,
            ll_tolerance: 1e-6,
            seed: 0,
            smoothing: DEFAULT_SMOOTHING,
            split: SplitConfig::default(),
            triplet_score: TripletScore::default(),
            split_when_in_set: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MdpdError::InvalidConfig(msg));
        if self.k_target == 0 {
            return bad("k_target must be at least 1".into());
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        for (name, v) in [
            ("cmi_threshold", self.cmi_threshold),
            ("ll_tolerance", self.ll_tolerance),
            ("split.h", self.split.h),
            ("split.step", self.split.step),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.smoothing >= 0.0) || !(self.split.margin >= 0.0) {
            return bad("smoothing and split.margin must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    CmiBelowThreshold,
    LikelihoodStalled,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Average log-likelihood after this iteration's M-step.
    pub log_likelihood: f64,
    /// Largest aggregate CMI at the start of the iteration.
    pub max_cmi: f64,
    pub set_size: usize,
    pub n_components: usize,
    pub triplet: Option<Triplet>,
    pub added: Vec<usize>,
    pub split: Option<SplitKind>,
    pub informative_set: InformativeSet,
    #[serde(skip)]
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    /// Log-likelihood of the starting model.
    pub initial_log_likelihood: f64,
    pub records: Vec<TraceRecord>,
    pub stop: Option<StopReason>,
}

impl FitTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

/// Why the loop should stop after the latest record, if it should.
pub fn converged(trace: &FitTrace, config: &FitConfig) -> Option<StopReason> {
    let last = trace.records.last()?;
    if last.max_cmi < config.cmi_threshold {
        return Some(StopReason::CmiBelowThreshold);
    }
    let prev_ll = match trace.records.len() {
        1 => trace.initial_log_likelihood,
        n => trace.records[n - 2].log_likelihood,
    };
    if last.n_components == config.k_target && (last.log_likelihood - prev_ll).abs() < config.ll_tolerance {
        return Some(StopReason::LikelihoodStalled);
    }
    if last.iteration >= config.max_iters {
        return Some(StopReason::MaxIters);
    }
    None
}

#[derive(Debug, Clone)]
pub struct StagewiseFit {
    pub model: MixtureModel,
    pub informative_set: InformativeSet,
    pub trace: FitTrace,
}

pub fn fit_stagewise(data: &LabelMatrix, config: &FitConfig) -> Result<StagewiseFit> {
    config.validate()?;
    if data.n_workers() < 2 {
        return Err(MdpdError::InvalidData("stagewise EM needs at least two workers".into()));
    }
    let mut model = init_one_component(data, config.smoothing)?;
    let mut set = InformativeSet::new();
    let mut trace = FitTrace {
        initial_log_likelihood: log_likelihood(&model, data)?,
        records: Vec::new(),
        stop: None,
    };

    for iteration in 1..=config.max_iters {
        let elapsed_ms = stopwatch();
        let post = posterior(&model, data, &set)?;
        let tensor = cmi_tensor(data, &post, config.smoothing)?;
        let max_cmi = max_cmi_norm(&tensor);
        let mut triplet = None;
        let mut added = Vec::new();
        let mut split = None;
        if let TripletChoice::Found(t) = max_triplet(&tensor, config.cmi_threshold, config.triplet_score)? {
            triplet = Some(t);
            let new_pair = !set.contains(t.i) || !set.contains(t.j);
            for w in [t.i, t.j] {
                if set.insert(w) {
                    added.push(w);
                }
            }
            if (new_pair || config.split_when_in_set) && model.n_components() < config.k_target {
                let split_config = SplitConfig {
                    smoothing: config.smoothing,
                    seed: config.seed.wrapping_add(iteration as u64),
                    ..config.split
                };
                let outcome = perturb_split(&model, data, &set, t.i, t.j, t.k, &split_config)?;
                log::debug!(
                    "iteration {iteration}: split component {} on ({}, {}), {:?}, objective {:.6} -> {:.6}",
                    t.k,
                    t.i,
                    t.j,
                    outcome.kind,
                    outcome.objective_before,
                    outcome.objective_after
                );
                model = outcome.model;
                split = Some(outcome.kind);
            }
        }

        let post = posterior(&model, data, &set)?;
        model = m_step(data, &post, model.frozen(), config.smoothing)?.0;
        let ll = log_likelihood(&model, data)?;
        trace.records.push(TraceRecord {
            iteration,
            log_likelihood: ll,
            max_cmi,
            set_size: set.len(),
            n_components: model.n_components(),
            triplet,
            added,
            split,
            informative_set: set.clone(),
            wall_time_ms: elapsed_ms(),
        });
        if let Some(reason) = converged(&trace, config) {
            trace.stop = Some(reason);
            break;
        }
    }
    if trace.stop == Some(StopReason::MaxIters) {
        log::warn!("stagewise EM stopped at max_iters = {}", config.max_iters);
    }
    Ok(StagewiseFit {
        model,
        informative_set: set,
        trace,
    })
}
