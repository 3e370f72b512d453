//! Likelihood, regularized E-step and closed-form M-step.
//!
//! Every kernel accepts optional per-item weights. Unweighted calls treat each
//! item as one observation; the exact-enumeration mode passes the probability
//! of each configuration instead.

use serde::{Deserialize, Serialize};

use crate::data::LabelMatrix;
use crate::error::{MdpdError, Result};
use crate::info::InformativeSet;
use crate::model::{FrozenCoords, MixtureModel};

/// Total responsibility below which a component is treated as empty.
pub const DEGENERATE_MASS: f64 = 1e-12;

/// Row-stochastic N x K responsibilities and the informative set used to
/// compute them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    n: usize,
    k: usize,
    resp: Vec<f64>,
    informative_set: InformativeSet,
}

impl Posterior {
    pub fn from_rows(rows: &[Vec<f64>], informative_set: InformativeSet) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if n == 0 || k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(MdpdError::ShapeMismatch("posterior rows".into()));
        }
        for (idx, row) in rows.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-10 {
                return Err(MdpdError::InvalidData(format!(
                    "posterior row {idx} is not a distribution"
                )));
            }
        }
        Ok(Self {
            n,
            k,
            resp: rows.concat(),
            informative_set,
        })
    }

    /// One-hot rows from hard 0-based assignments.
    pub fn from_assignments(assignments: &[usize], k: usize) -> Result<Self> {
        if let Some(&bad) = assignments.iter().find(|&&a| a >= k) {
            return Err(MdpdError::InvalidData(format!("assignment {bad} outside 0..{k}")));
        }
        let mut resp = vec![0.0; assignments.len() * k];
        for (n, &a) in assignments.iter().enumerate() {
            resp[n * k + a] = 1.0;
        }
        Ok(Self {
            n: assignments.len(),
            k,
            resp,
            informative_set: InformativeSet::new(),
        })
    }

    pub(crate) fn uniform_single(n: usize, informative_set: InformativeSet) -> Self {
        Self {
            n,
            k: 1,
            resp: vec![1.0; n],
            informative_set,
        }
    }

    pub fn n_items(&self) -> usize {
        self.n
    }

    pub fn n_components(&self) -> usize {
        self.k
    }

    pub fn row(&self, item: usize) -> &[f64] {
        &self.resp[item * self.k..(item + 1) * self.k]
    }

    /// Flat row-major responsibilities.
    pub fn as_slice(&self) -> &[f64] {
        &self.resp
    }

    pub fn informative_set(&self) -> &InformativeSet {
        &self.informative_set
    }

    /// Index of the largest responsibility per item, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n)
            .map(|n| {
                let row = self.row(n);
                let mut best = 0;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Unnormalized `ln w_k + sum_{i in workers} ln mu_{k,i,x_i}` for every item.
fn log_joint_scores(model: &MixtureModel, codes: &[u16], n: usize, workers: &[usize]) -> Vec<f64> {
    let k = model.n_components();
    let r = model.n_categories();
    let table = model.log_table();
    let mut scores = Vec::with_capacity(n * k);
    let log_w: Vec<f64> = model.weights().iter().map(|w| w.ln()).collect();
    for _ in 0..n {
        scores.extend_from_slice(&log_w);
    }
    for &i in workers {
        let column = &codes[i * n..(i + 1) * n];
        for (item, &c) in column.iter().enumerate() {
            let base = (i * r + c as usize) * k;
            let row = &mut scores[item * k..(item + 1) * k];
            for (s, &lp) in row.iter_mut().zip(&table[base..base + k]) {
                *s += lp;
            }
        }
    }
    scores
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + row.iter().map(|&s| (s - max).exp()).sum::<f64>().ln()
}

/// Average log marginal likelihood per item, in nats.
pub fn log_likelihood(model: &MixtureModel, data: &LabelMatrix) -> Result<f64> {
    log_likelihood_weighted(model, data, None)
}

/// `sum_n w_n ln f(x_n) / sum_n w_n`; unweighted when `weights` is `None`.
///
/// Items with zero model probability make the result negative infinity.
pub fn log_likelihood_weighted(model: &MixtureModel, data: &LabelMatrix, weights: Option<&[f64]>) -> Result<f64> {
    model.check_data(data)?;
    let n = data.n_items();
    check_weights(weights, n)?;
    let codes = data.codes(model.n_categories())?;
    let k = model.n_components();
    let all: Vec<usize> = (0..model.n_workers()).collect();
    let scores = log_joint_scores(model, &codes, n, &all);
    let mut total = 0.0;
    let mut mass = 0.0;
    let mut zero_items = 0usize;
    for item in 0..n {
        let w = weights.map_or(1.0, |w| w[item]);
        if w == 0.0 {
            continue;
        }
        let lse = log_sum_exp(&scores[item * k..(item + 1) * k]);
        if lse == f64::NEG_INFINITY {
            zero_items += 1;
        }
        total += w * lse;
        mass += w;
    }
    if zero_items > 0 {
        log::warn!("{zero_items} items have zero probability under the model");
    }
    Ok(total / mass)
}

/// Regularized E-step: responsibilities computed from the workers in `set` only.
///
/// An empty set returns the mixing weights on every row.
pub fn posterior(model: &MixtureModel, data: &LabelMatrix, set: &InformativeSet) -> Result<Posterior> {
    model.check_data(data)?;
    let n = data.n_items();
    let k = model.n_components();
    if let Some(&bad) = set.iter().find(|&&i| i >= model.n_workers()) {
        return Err(MdpdError::ShapeMismatch(format!(
            "informative worker {bad} out of range"
        )));
    }
    if set.is_empty() {
        return Ok(Posterior {
            n,
            k,
            resp: model.weights().repeat(n),
            informative_set: set.clone(),
        });
    }
    let codes = data.codes(model.n_categories())?;
    let mut resp = log_joint_scores(model, &codes, n, set.as_slice());
    let mut dead_rows = 0usize;
    for item in 0..n {
        let row = &mut resp[item * k..(item + 1) * k];
        let lse = log_sum_exp(row);
        if lse == f64::NEG_INFINITY {
            dead_rows += 1;
            row.copy_from_slice(model.weights());
            continue;
        }
        for s in row.iter_mut() {
            *s = (*s - lse).exp();
        }
        let total: f64 = row.iter().sum();
        for s in row.iter_mut() {
            *s /= total;
        }
    }
    if dead_rows > 0 {
        log::warn!("{dead_rows} items have zero probability under every component; using the prior");
    }
    Ok(Posterior {
        n,
        k,
        resp,
        informative_set: set.clone(),
    })
}

/// Components whose responsibility vanished during an M-step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MStepReport {
    pub degenerate: Vec<usize>,
}

/// Closed-form M-step with additive smoothing.
///
/// `frozen` fixes the alphabet: with a missing category the model has one
/// more category than the data has labels.
pub fn m_step(
    data: &LabelMatrix,
    post: &Posterior,
    frozen: Option<&FrozenCoords>,
    smoothing: f64,
) -> Result<(MixtureModel, MStepReport)> {
    m_step_weighted(data, None, post, frozen, smoothing)
}

pub fn m_step_weighted(
    data: &LabelMatrix,
    weights: Option<&[f64]>,
    post: &Posterior,
    frozen: Option<&FrozenCoords>,
    smoothing: f64,
) -> Result<(MixtureModel, MStepReport)> {
    let n = data.n_items();
    let m = data.n_workers();
    if post.n_items() != n {
        return Err(MdpdError::ShapeMismatch(format!(
            "posterior has {} rows, data has {n} items",
            post.n_items()
        )));
    }
    check_weights(weights, n)?;
    if !(smoothing >= 0.0) {
        return Err(MdpdError::InvalidConfig(format!(
            "smoothing must be >= 0, got {smoothing}"
        )));
    }
    let r = frozen.map_or(data.n_labels(), FrozenCoords::n_categories);
    if let Some(f) = frozen {
        if f.n_workers() != m {
            return Err(MdpdError::ShapeMismatch("frozen coordinates worker count".into()));
        }
    }
    let codes = data.codes(r)?;
    let k = post.n_components();

    let mut mass = vec![0.0; k];
    let mut item_w = Vec::with_capacity(n * k);
    for item in 0..n {
        let s = weights.map_or(1.0, |w| w[item]);
        for (kk, &p) in post.row(item).iter().enumerate() {
            let v = s * p;
            item_w.push(v);
            mass[kk] += v;
        }
    }
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Err(MdpdError::InvalidData("posterior carries no mass".into()));
    }

    let mut counts = vec![0.0; k * m * r];
    for i in 0..m {
        let column = &codes[i * n..(i + 1) * n];
        for (item, &c) in column.iter().enumerate() {
            let c = c as usize;
            for kk in 0..k {
                counts[(kk * m + i) * r + c] += item_w[item * k + kk];
            }
        }
    }

    let mut report = MStepReport::default();
    let mut conditionals = vec![0.0; k * m * r];
    let mut global: Option<Vec<f64>> = None;
    for kk in 0..k {
        let degenerate = mass[kk] < DEGENERATE_MASS;
        if degenerate {
            report.degenerate.push(kk);
            log::warn!("component {kk} has vanishing responsibility; resetting to global frequencies");
            if global.is_none() {
                let mut g = vec![0.0; m * r];
                for i in 0..m {
                    for (item, &c) in codes[i * n..(i + 1) * n].iter().enumerate() {
                        g[i * r + c as usize] += weights.map_or(1.0, |w| w[item]);
                    }
                }
                global = Some(g);
            }
        }
        for i in 0..m {
            let src = if degenerate {
                &global.as_ref().unwrap()[i * r..(i + 1) * r]
            } else {
                &counts[(kk * m + i) * r..(kk * m + i + 1) * r]
            };
            normalize_row(
                src,
                i,
                frozen,
                smoothing,
                &mut conditionals[(kk * m + i) * r..(kk * m + i + 1) * r],
            );
        }
    }
    let weights_out = mass.iter().map(|&z| z / total).collect();
    let model = MixtureModel::new(weights_out, m, r, conditionals, frozen.cloned())?;
    Ok((model, report))
}

/// Smoothed normalization of one worker's counts onto the trainable mass.
pub(crate) fn normalize_row(
    counts: &[f64],
    worker: usize,
    frozen: Option<&FrozenCoords>,
    smoothing: f64,
    out: &mut [f64],
) {
    let r = counts.len();
    let is_frozen = |c: usize| frozen.is_some_and(|f| f.is_frozen(worker, c));
    let trainable = (0..r).filter(|&c| !is_frozen(c)).count() as f64;
    let free_mass = 1.0 - frozen.map_or(0.0, |f| f.frozen_mass(worker));
    let denom: f64 = (0..r).filter(|&c| !is_frozen(c)).map(|c| counts[c]).sum::<f64>() + smoothing * trainable;
    for c in 0..r {
        out[c] = if is_frozen(c) {
            frozen.unwrap().value(worker, c)
        } else if denom > 0.0 {
            (counts[c] + smoothing) / denom * free_mass
        } else {
            free_mass / trainable
        };
    }
}

/// Expected complete-data log-likelihood per item, `(1/N) sum_n sum_k q_nk ln f(x_n, k)`.
///
/// This is the M-step objective up to the entropy of `post`, which does not
/// depend on the model being scored.
pub fn expected_complete_log_likelihood(model: &MixtureModel, data: &LabelMatrix, post: &Posterior) -> Result<f64> {
    model.check_data(data)?;
    let n = data.n_items();
    let k = model.n_components();
    if post.n_items() != n || post.n_components() != k {
        return Err(MdpdError::ShapeMismatch("posterior shape".into()));
    }
    let codes = data.codes(model.n_categories())?;
    let all: Vec<usize> = (0..model.n_workers()).collect();
    let scores = log_joint_scores(model, &codes, n, &all);
    let mut total = 0.0;
    for item in 0..n {
        for (kk, &q) in post.row(item).iter().enumerate() {
            if q > 0.0 {
                total += q * scores[item * k + kk];
            }
        }
    }
    Ok(total / n as f64)
}

/// Alternates the regularized E-step and the M-step `n_steps` times.
///
/// Returns the final model and the log-likelihood before the first step and
/// after every step.
pub fn em_iterate(
    model: &MixtureModel,
    data: &LabelMatrix,
    set: &InformativeSet,
    n_steps: usize,
    smoothing: f64,
) -> Result<(MixtureModel, Vec<f64>)> {
    if n_steps == 0 {
        return Err(MdpdError::InvalidConfig("n_steps must be at least 1".into()));
    }
    let mut current = model.clone();
    let mut lls = Vec::with_capacity(n_steps + 1);
    lls.push(log_likelihood(&current, data)?);
    for _ in 0..n_steps {
        let post = posterior(&current, data, set)?;
        current = m_step(data, &post, current.frozen(), smoothing)?.0;
        lls.push(log_likelihood(&current, data)?);
    }
    Ok((current, lls))
}

fn check_weights(weights: Option<&[f64]>, n: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != n {
            return Err(MdpdError::ShapeMismatch(format!(
                "{} item weights for {n} items",
                w.len()
            )));
        }
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(MdpdError::InvalidData(
                "item weights must be finite and non-negative".into(),
            ));
        }
    }
    Ok(())
}
