//! Mixture of discrete product distributions.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::data::{LabelMatrix, MISSING};
use crate::em::{m_step, Posterior};
use crate::error::{MdpdError, Result};
use crate::info::InformativeSet;

/// Pseudo-count added to every cell of an M-step or pairwise joint table.
pub const DEFAULT_SMOOTHING: f64 = 1e-6;

const SIMPLEX_TOL: f64 = 1e-9;

/// Coordinates of the conditional tables that the M-step never updates.
///
/// Frozen values are shared by every component. In practice the only frozen
/// coordinates are the per-worker rates of the appended missing category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenCoords {
    m: usize,
    r: usize,
    mask: Vec<bool>,
    values: Vec<f64>,
}

impl FrozenCoords {
    pub fn new(m: usize, r: usize, mask: Vec<bool>, values: Vec<f64>) -> Result<Self> {
        if mask.len() != m * r || values.len() != m * r {
            return Err(MdpdError::ShapeMismatch(format!(
                "frozen mask/values must have {} entries",
                m * r
            )));
        }
        for i in 0..m {
            let mass: f64 = (0..r).filter(|&c| mask[i * r + c]).map(|c| values[i * r + c]).sum();
            let trainable = (0..r).filter(|&c| !mask[i * r + c]).count();
            if !(0.0..1.0).contains(&mass) || trainable == 0 {
                return Err(MdpdError::InvalidModel(format!(
                    "worker {i}: frozen mass {mass} leaves nothing to train"
                )));
            }
        }
        Ok(Self { m, r, mask, values })
    }

    /// Freezes category `r - 1` of every worker at the given rates.
    pub fn missing_category(rates: &[f64], r: usize) -> Result<Self> {
        let m = rates.len();
        let mut mask = vec![false; m * r];
        let mut values = vec![0.0; m * r];
        for (i, &rate) in rates.iter().enumerate() {
            mask[i * r + r - 1] = true;
            values[i * r + r - 1] = rate;
        }
        Self::new(m, r, mask, values)
    }

    pub fn is_frozen(&self, worker: usize, category: usize) -> bool {
        self.mask[worker * self.r + category]
    }

    pub fn value(&self, worker: usize, category: usize) -> f64 {
        self.values[worker * self.r + category]
    }

    pub fn frozen_mass(&self, worker: usize) -> f64 {
        (0..self.r)
            .filter(|&c| self.is_frozen(worker, c))
            .map(|c| self.value(worker, c))
            .sum()
    }

    pub fn trainable(&self, worker: usize) -> Vec<usize> {
        (0..self.r).filter(|&c| !self.is_frozen(worker, c)).collect()
    }

    pub fn n_workers(&self) -> usize {
        self.m
    }

    pub fn n_categories(&self) -> usize {
        self.r
    }
}

/// Mixing weights and per-component conditional tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    k: usize,
    m: usize,
    r: usize,
    weights: Vec<f64>,
    /// `(component * m + worker) * r + category`
    conditionals: Vec<f64>,
    frozen: Option<FrozenCoords>,
}

impl MixtureModel {
    pub fn new(
        weights: Vec<f64>,
        m: usize,
        r: usize,
        conditionals: Vec<f64>,
        frozen: Option<FrozenCoords>,
    ) -> Result<Self> {
        let model = Self {
            k: weights.len(),
            m,
            r,
            weights,
            conditionals,
            frozen,
        };
        model.validate()?;
        Ok(model)
    }

    /// Builds a model from nested `[k][m][r]` tables.
    pub fn from_nested(
        weights: Vec<f64>,
        conditionals: &[Vec<Vec<f64>>],
        frozen: Option<FrozenCoords>,
    ) -> Result<Self> {
        let m = conditionals.first().map_or(0, Vec::len);
        let r = conditionals.first().and_then(|c| c.first()).map_or(0, Vec::len);
        let flat = conditionals.iter().flatten().flatten().copied().collect();
        Self::new(weights, m, r, flat, frozen)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.r < 2 {
            return Err(MdpdError::InvalidModel(format!(
                "degenerate shape K={} M={} R={}",
                self.k, self.m, self.r
            )));
        }
        if self.conditionals.len() != self.k * self.m * self.r {
            return Err(MdpdError::ShapeMismatch(format!(
                "conditionals must have {} entries, got {}",
                self.k * self.m * self.r,
                self.conditionals.len()
            )));
        }
        check_simplex(&self.weights, "weights")?;
        for k in 0..self.k {
            for i in 0..self.m {
                check_simplex(self.mu(k, i), &format!("mu[{k}][{i}]"))?;
            }
        }
        if let Some(frozen) = &self.frozen {
            if frozen.m != self.m || frozen.r != self.r {
                return Err(MdpdError::ShapeMismatch("frozen coordinates shape".into()));
            }
            for k in 0..self.k {
                for i in 0..self.m {
                    for c in 0..self.r {
                        if frozen.is_frozen(i, c) && (self.mu(k, i)[c] - frozen.value(i, c)).abs() > SIMPLEX_TOL {
                            return Err(MdpdError::InvalidModel(format!(
                                "mu[{k}][{i}][{c}] differs from its frozen value"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.k
    }

    pub fn n_workers(&self) -> usize {
        self.m
    }

    /// Alphabet size, including the missing category when present.
    pub fn n_categories(&self) -> usize {
        self.r
    }

    /// Number of labels a data matrix for this model carries.
    pub fn n_data_labels(&self) -> usize {
        if self.has_missing_category() {
            self.r - 1
        } else {
            self.r
        }
    }

    pub fn has_missing_category(&self) -> bool {
        self.frozen
            .as_ref()
            .is_some_and(|f| (0..self.m).all(|i| f.is_frozen(i, self.r - 1)))
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn mu(&self, k: usize, worker: usize) -> &[f64] {
        let start = (k * self.m + worker) * self.r;
        &self.conditionals[start..start + self.r]
    }

    pub fn mu_mut(&mut self, k: usize, worker: usize) -> &mut [f64] {
        let start = (k * self.m + worker) * self.r;
        &mut self.conditionals[start..start + self.r]
    }

    pub fn conditionals(&self) -> &[f64] {
        &self.conditionals
    }

    pub fn frozen(&self) -> Option<&FrozenCoords> {
        self.frozen.as_ref()
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Vec<f64> {
        &mut self.weights
    }

    pub(crate) fn conditionals_mut(&mut self) -> &mut Vec<f64> {
        &mut self.conditionals
    }

    pub(crate) fn set_shape(&mut self, k: usize) {
        self.k = k;
    }

    /// Nested `[k][m][r]` copy of the conditional tables.
    pub fn conditionals_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.k)
            .map(|k| (0..self.m).map(|i| self.mu(k, i).to_vec()).collect())
            .collect()
    }

    /// Mixture marginal of one worker, `sum_k w_k mu_ki`.
    pub fn marginal(&self, worker: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.r];
        for k in 0..self.k {
            for (o, &p) in out.iter_mut().zip(self.mu(k, worker)) {
                *o += self.weights[k] * p;
            }
        }
        out
    }

    /// Natural-log conditionals laid out as `(worker * r + category) * k + component`.
    pub(crate) fn log_table(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.k * self.m * self.r];
        for k in 0..self.k {
            for i in 0..self.m {
                for (c, &p) in self.mu(k, i).iter().enumerate() {
                    out[(i * self.r + c) * self.k + k] = p.ln();
                }
            }
        }
        out
    }

    pub(crate) fn check_data(&self, data: &LabelMatrix) -> Result<()> {
        if data.n_workers() != self.m {
            return Err(MdpdError::ShapeMismatch(format!(
                "model has {} workers, data has {}",
                self.m,
                data.n_workers()
            )));
        }
        if data.n_labels() != self.n_data_labels() {
            return Err(MdpdError::ShapeMismatch(format!(
                "model expects {} labels, data has {}",
                self.n_data_labels(),
                data.n_labels()
            )));
        }
        Ok(())
    }

    /// Draws `n` items: a component from the weights, then every worker's
    /// label independently from that component's conditionals.
    ///
    /// Draws of the missing category become [`MISSING`] entries.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(LabelMatrix, Vec<usize>)> {
        let mut rng = StdRng::seed_from_u64(seed);
        let n_labels = self.n_data_labels();
        let missing_cat = self.has_missing_category().then_some(self.r - 1);
        let mut components = Vec::with_capacity(n);
        let mut rows = vec![0u16; n * self.m];
        for item in 0..n {
            let k = draw(&mut rng, &self.weights);
            components.push(k);
            for i in 0..self.m {
                let c = draw(&mut rng, self.mu(k, i));
                rows[item * self.m + i] = if Some(c) == missing_cat { MISSING } else { c as u16 };
            }
        }
        let mut entries = vec![0u16; n * self.m];
        for item in 0..n {
            for i in 0..self.m {
                entries[i * n + item] = rows[item * self.m + i];
            }
        }
        let data = LabelMatrix::from_columns(n, self.m, n_labels, entries)?;
        Ok((data, components))
    }
}

fn draw<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (idx, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return idx;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(MdpdError::InvalidModel(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(MdpdError::InvalidModel(format!("{what} sums to {s}")));
    }
    Ok(())
}

/// Per-worker missing rates, frozen as the last category of an extended alphabet.
pub fn missing_frozen_coords(data: &LabelMatrix) -> Result<Option<FrozenCoords>> {
    if !data.has_missing() {
        return Ok(None);
    }
    let n = data.n_items() as f64;
    let rates: Vec<f64> = (0..data.n_workers())
        .map(|i| data.missing_count(i) as f64 / n)
        .collect();
    if let Some(worker) = rates.iter().position(|&m| m >= 1.0) {
        return Err(MdpdError::EmptyWorker { worker });
    }
    FrozenCoords::missing_category(&rates, data.n_labels() + 1).map(Some)
}

/// One-component model whose conditionals are the smoothed empirical label
/// frequencies of every worker.
pub fn init_one_component(data: &LabelMatrix, smoothing: f64) -> Result<MixtureModel> {
    if let Some(worker) = (0..data.n_workers()).find(|&i| data.missing_count(i) == data.n_items()) {
        return Err(MdpdError::EmptyWorker { worker });
    }
    let frozen = missing_frozen_coords(data)?;
    let post = Posterior::uniform_single(data.n_items(), InformativeSet::new());
    let (model, _) = m_step(data, &post, frozen.as_ref(), smoothing)?;
    Ok(model)
}
