//! Pairwise conditional mutual information under the hybrid distribution
//! (model posterior on the informative workers, empirical distribution on
//! the observations), triplet selection and sparsity diagnostics.
//!
//! All information quantities are in nats.

use serde::{Deserialize, Serialize};

use crate::data::LabelMatrix;
use crate::em::{Posterior, DEGENERATE_MASS};
use crate::error::{MdpdError, Result};
use crate::model::MixtureModel;

/// Default threshold below which the largest CMI entry counts as converged.
pub const DEFAULT_CMI_THRESHOLD: f64 = 1e-3;

/// Default threshold on the per-worker KL score for the l0 count.
pub const DEFAULT_L0_THRESHOLD: f64 = 1e-6;

/// Worker indices in insertion order, without duplicates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InformativeSet(Vec<usize>);

impl InformativeSet {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut set = Self::new();
        for i in indices {
            if !set.insert(i) {
                return Err(MdpdError::InvalidData(format!("duplicate informative worker {i}")));
            }
        }
        Ok(set)
    }

    /// Appends `worker` unless present; returns whether it was added.
    pub fn insert(&mut self, worker: usize) -> bool {
        if self.contains(worker) {
            false
        } else {
            self.0.push(worker);
            true
        }
    }

    pub fn contains(&self, worker: usize) -> bool {
        self.0.contains(&worker)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, usize> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Every worker of an `m`-worker problem, in index order.
    pub fn full(m: usize) -> Self {
        Self((0..m).collect())
    }
}

/// Per-component pairwise CMI, the component weights of the hybrid
/// distribution and their weighted aggregate. Diagonals are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmiTensor {
    k: usize,
    m: usize,
    per_component: Vec<f64>,
    component_weights: Vec<f64>,
    aggregate: Vec<f64>,
}

impl CmiTensor {
    /// Builds a tensor from per-component `[k][i][j]` values, symmetrizing the
    /// upper triangle and zeroing the diagonal.
    pub fn from_parts(per_component: &[Vec<Vec<f64>>], component_weights: Vec<f64>) -> Result<Self> {
        let k = per_component.len();
        let m = per_component.first().map_or(0, Vec::len);
        if component_weights.len() != k {
            return Err(MdpdError::ShapeMismatch("component weights".into()));
        }
        let mut flat = vec![0.0; k * m * m];
        for (kk, slice) in per_component.iter().enumerate() {
            if slice.len() != m || slice.iter().any(|row| row.len() != m) {
                return Err(MdpdError::ShapeMismatch("per-component slices".into()));
            }
            for i in 0..m {
                for j in i + 1..m {
                    flat[(kk * m + i) * m + j] = slice[i][j];
                    flat[(kk * m + j) * m + i] = slice[i][j];
                }
            }
        }
        Ok(Self::assemble(k, m, flat, component_weights))
    }

    fn assemble(k: usize, m: usize, per_component: Vec<f64>, component_weights: Vec<f64>) -> Self {
        let mut aggregate = vec![0.0; m * m];
        for kk in 0..k {
            let w = component_weights[kk];
            for (a, &v) in aggregate.iter_mut().zip(&per_component[kk * m * m..(kk + 1) * m * m]) {
                *a += w * v;
            }
        }
        Self {
            k,
            m,
            per_component,
            component_weights,
            aggregate,
        }
    }

    pub fn n_components(&self) -> usize {
        self.k
    }

    pub fn n_workers(&self) -> usize {
        self.m
    }

    pub fn per_component(&self, k: usize, i: usize, j: usize) -> f64 {
        self.per_component[(k * self.m + i) * self.m + j]
    }

    pub fn component_weights(&self) -> &[f64] {
        &self.component_weights
    }

    pub fn aggregate(&self, i: usize, j: usize) -> f64 {
        self.aggregate[i * self.m + j]
    }

    /// Row-major M x M aggregate matrix.
    pub fn aggregate_matrix(&self) -> &[f64] {
        &self.aggregate
    }
}

/// Pairwise CMI tensor from the observations and a posterior.
///
/// Missing entries, when present, are their own category. Cost is
/// O(K N M^2) plus O(K M^2 R^2) for the entropy sums.
pub fn cmi_tensor(data: &LabelMatrix, post: &Posterior, smoothing: f64) -> Result<CmiTensor> {
    cmi_tensor_weighted(data, None, post, smoothing)
}

/// As [`cmi_tensor`], with per-item probabilities in place of uniform
/// empirical weights.
pub fn cmi_tensor_weighted(
    data: &LabelMatrix,
    weights: Option<&[f64]>,
    post: &Posterior,
    smoothing: f64,
) -> Result<CmiTensor> {
    let n = data.n_items();
    let m = data.n_workers();
    let k = post.n_components();
    if post.n_items() != n {
        return Err(MdpdError::ShapeMismatch(format!(
            "posterior has {} rows, data has {n} items",
            post.n_items()
        )));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(MdpdError::ShapeMismatch("item weights".into()));
        }
    }
    let r = data.n_labels() + usize::from(data.has_missing());
    let codes = data.codes(r)?;

    let mut item_w = Vec::with_capacity(n * k);
    let mut mass = vec![0.0; k];
    for item in 0..n {
        let s = weights.map_or(1.0, |w| w[item]);
        for (kk, &p) in post.row(item).iter().enumerate() {
            item_w.push(s * p);
            mass[kk] += s * p;
        }
    }
    let total: f64 = mass.iter().sum();
    let component_weights: Vec<f64> = mass.iter().map(|&z| z / total).collect();
    let live: Vec<bool> = mass.iter().map(|&z| z >= DEGENERATE_MASS).collect();
    if let Some(dead) = live.iter().position(|&l| !l) {
        log::warn!("component {dead} has vanishing responsibility; its CMI slice is zero");
    }

    let rr = r * r;
    let mut per_component = vec![0.0; k * m * m];
    let mut joint = vec![0.0; k * rr];
    for a in 0..m {
        let col_a = &codes[a * n..(a + 1) * n];
        for b in a + 1..m {
            let col_b = &codes[b * n..(b + 1) * n];
            joint.fill(0.0);
            for item in 0..n {
                let cell = col_a[item] as usize * r + col_b[item] as usize;
                let w = &item_w[item * k..(item + 1) * k];
                for (kk, &wk) in w.iter().enumerate() {
                    joint[kk * rr + cell] += wk;
                }
            }
            for kk in 0..k {
                if !live[kk] {
                    continue;
                }
                let v = mutual_information(&joint[kk * rr..(kk + 1) * rr], r, mass[kk], smoothing);
                per_component[(kk * m + a) * m + b] = v;
                per_component[(kk * m + b) * m + a] = v;
            }
        }
    }
    Ok(CmiTensor::assemble(k, m, per_component, component_weights))
}

/// MI of an r x r table of weighted counts with total `mass`, after adding
/// `smoothing` to every cell. `0 ln 0 = 0`.
fn mutual_information(counts: &[f64], r: usize, mass: f64, smoothing: f64) -> f64 {
    let denom = mass + smoothing * (r * r) as f64;
    let mut row = vec![0.0; r];
    let mut col = vec![0.0; r];
    for a in 0..r {
        for b in 0..r {
            let p = (counts[a * r + b] + smoothing) / denom;
            row[a] += p;
            col[b] += p;
        }
    }
    let mut mi = 0.0;
    for a in 0..r {
        for b in 0..r {
            let p = (counts[a * r + b] + smoothing) / denom;
            if p > 0.0 {
                mi += p * (p / (row[a] * col[b])).ln();
            }
        }
    }
    mi
}

/// Which score ranks candidate triplets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TripletScore {
    /// `I(X_i, X_j) | (Y = k)` as is.
    #[default]
    PerComponent,
    /// The same value times the component weight.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TripletChoice {
    Found(Triplet),
    /// Every score is below the threshold.
    Converged,
}

/// Largest off-diagonal entry over components and worker pairs `i < j`.
///
/// Ties go to the smallest component, then the smallest `i`, then `j`.
pub fn max_triplet(t: &CmiTensor, threshold: f64, score: TripletScore) -> Result<TripletChoice> {
    if t.m < 2 || t.k == 0 {
        return Err(MdpdError::InvalidData(
            "need at least one component and two workers".into(),
        ));
    }
    let mut best: Option<(Triplet, f64)> = None;
    for k in 0..t.k {
        let scale = match score {
            TripletScore::PerComponent => 1.0,
            TripletScore::Weighted => t.component_weights[k],
        };
        for i in 0..t.m {
            for j in i + 1..t.m {
                let value = t.per_component(k, i, j);
                let s = scale * value;
                if best.as_ref().is_none_or(|(_, bs)| s > *bs) {
                    best = Some((Triplet { i, j, k, value }, s));
                }
            }
        }
    }
    let (triplet, s) = best.expect("at least one pair");
    if s < threshold {
        Ok(TripletChoice::Converged)
    } else {
        Ok(TripletChoice::Found(triplet))
    }
}

/// `sum_{i != j}` of the aggregate CMI, optionally only over pairs inside `restrict`.
pub fn cmi_sum(t: &CmiTensor, restrict: Option<&InformativeSet>) -> f64 {
    let mut total = 0.0;
    for i in 0..t.m {
        for j in i + 1..t.m {
            if let Some(s) = restrict {
                if !(s.contains(i) && s.contains(j)) {
                    continue;
                }
            }
            total += t.aggregate(i, j);
        }
    }
    2.0 * total
}

/// Largest off-diagonal aggregate entry.
pub fn max_cmi_norm(t: &CmiTensor) -> f64 {
    let mut best = 0.0f64;
    for i in 0..t.m {
        for j in i + 1..t.m {
            best = best.max(t.aggregate(i, j));
        }
    }
    best
}

/// Per-worker separation `sum_k KL(mean_i || mu_ki)` and its thresholded count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityDiagnostic {
    pub per_feature_kl: Vec<f64>,
    pub l0_count: usize,
    pub threshold: f64,
    /// Penalty coefficient, reported only.
    pub lambda: f64,
}

impl SparsityDiagnostic {
    /// Value of the l0 penalty term, `lambda * l0_count`.
    pub fn penalty(&self) -> f64 {
        self.lambda * self.l0_count as f64
    }
}

pub fn sparsity_diagnostic(model: &MixtureModel, threshold: f64, lambda: f64) -> SparsityDiagnostic {
    let per_feature_kl: Vec<f64> = (0..model.n_workers())
        .map(|i| {
            let mean = model.marginal(i);
            (0..model.n_components())
                .map(|k| kl_divergence(&mean, model.mu(k, i)))
                .sum::<f64>()
                .max(0.0)
        })
        .collect();
    let l0_count = per_feature_kl.iter().filter(|&&v| v > threshold).count();
    SparsityDiagnostic {
        per_feature_kl,
        l0_count,
        threshold,
        lambda,
    }
}

/// `sum p ln(p / q)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| if b > 0.0 { a * (a / b).ln() } else { f64::INFINITY })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tensor_with(k: usize, m: usize, entries: &[(usize, usize, usize, f64)]) -> CmiTensor {
        let mut slices = vec![vec![vec![0.0; m]; m]; k];
        for &(kk, i, j, v) in entries {
            slices[kk][i][j] = v;
        }
        CmiTensor::from_parts(&slices, vec![1.0 / k as f64; k]).unwrap()
    }

    fn coin_data(n: usize, duplicate: bool, seed: u64) -> LabelMatrix {
        let mut rng = StdRng::seed_from_u64(seed);
        let rows: Vec<Vec<Option<usize>>> = (0..n)
            .map(|_| {
                let a = rng.random_range(0..2);
                let b = if duplicate { a } else { rng.random_range(0..2) };
                vec![Some(a), Some(b)]
            })
            .collect();
        LabelMatrix::from_rows(2, &rows).unwrap()
    }

    #[test]
    fn independent_coins_have_near_zero_mi() {
        let data = coin_data(1000, false, 1);
        let post = Posterior::from_assignments(&vec![0; 1000], 1).unwrap();
        let t = cmi_tensor(&data, &post, 1e-6).unwrap();
        assert!(t.per_component(0, 0, 1).abs() < 5e-3);
    }

    #[test]
    fn duplicated_coin_has_ln2_mi() {
        let data = coin_data(1000, true, 2);
        let post = Posterior::from_assignments(&vec![0; 1000], 1).unwrap();
        let t = cmi_tensor(&data, &post, 1e-6).unwrap();
        assert!((t.per_component(0, 0, 1) - 2f64.ln()).abs() < 0.02);
        assert_eq!(t.per_component(0, 0, 1), t.per_component(0, 1, 0));
        assert_eq!(t.per_component(0, 0, 0), 0.0);
    }

    #[test]
    fn unique_max_triplet() {
        let t = tensor_with(2, 6, &[(1, 2, 5, 0.4)]);
        match max_triplet(&t, 1e-3, TripletScore::PerComponent).unwrap() {
            TripletChoice::Found(tr) => assert_eq!((tr.i, tr.j, tr.k, tr.value), (2, 5, 1, 0.4)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ties_break_to_smallest_indices() {
        let t = tensor_with(1, 3, &[(0, 0, 1, 0.2), (0, 0, 2, 0.2)]);
        match max_triplet(&t, 1e-3, TripletScore::PerComponent).unwrap() {
            TripletChoice::Found(tr) => assert_eq!((tr.i, tr.j, tr.k), (0, 1, 0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn below_threshold_signals_convergence() {
        let t = tensor_with(1, 3, &[(0, 0, 1, 1e-4)]);
        assert_eq!(
            max_triplet(&t, 1e-3, TripletScore::PerComponent).unwrap(),
            TripletChoice::Converged
        );
    }

    #[test]
    fn weighted_mode_scales_by_component_weight() {
        let slices = vec![
            vec![vec![0.0, 0.5], vec![0.5, 0.0]],
            vec![vec![0.0, 0.4], vec![0.4, 0.0]],
        ];
        let t = CmiTensor::from_parts(&slices, vec![0.1, 0.9]).unwrap();
        let pick = |mode| match max_triplet(&t, 0.0, mode).unwrap() {
            TripletChoice::Found(tr) => tr.k,
            TripletChoice::Converged => usize::MAX,
        };
        assert_eq!(pick(TripletScore::PerComponent), 0);
        assert_eq!(pick(TripletScore::Weighted), 1);
    }

    #[test]
    fn sums_and_norms() {
        let zero = tensor_with(1, 4, &[]);
        assert_eq!(cmi_sum(&zero, None), 0.0);
        assert_eq!(max_cmi_norm(&zero), 0.0);
        let t = tensor_with(1, 4, &[(0, 0, 1, 0.31), (0, 2, 3, 0.1)]);
        assert_eq!(max_cmi_norm(&t), 0.31);
        assert!((cmi_sum(&t, None) - 0.82).abs() < 1e-15);
        let s = InformativeSet::from_indices([2, 3]).unwrap();
        assert!((cmi_sum(&t, Some(&s)) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn sparsity_single_component_is_zero() {
        let model = MixtureModel::from_nested(vec![1.0], &[vec![vec![0.3, 0.7], vec![0.5, 0.5]]], None).unwrap();
        let d = sparsity_diagnostic(&model, DEFAULT_L0_THRESHOLD, 0.0);
        assert_eq!(d.per_feature_kl, vec![0.0, 0.0]);
        assert_eq!(d.l0_count, 0);
    }

    #[test]
    fn sparsity_two_opposed_components() {
        let model = MixtureModel::from_nested(
            vec![0.5, 0.5],
            &[
                vec![vec![0.9, 0.1], vec![0.4, 0.6]],
                vec![vec![0.1, 0.9], vec![0.4, 0.6]],
            ],
            None,
        )
        .unwrap();
        let d = sparsity_diagnostic(&model, DEFAULT_L0_THRESHOLD, 2.0);
        let expected = 2.0 * (0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln());
        assert!((d.per_feature_kl[0] - expected).abs() < 1e-12);
        assert!((expected - 1.021651).abs() < 1e-6);
        assert_eq!(d.per_feature_kl[1], 0.0);
        assert_eq!(d.l0_count, 1);
        assert_eq!(d.penalty(), 2.0);
    }

    #[test]
    fn informative_set_keeps_order_and_rejects_duplicates() {
        let mut s = InformativeSet::from_indices([4, 1]).unwrap();
        assert!(!s.insert(4));
        assert!(s.insert(0));
        assert_eq!(s.as_slice(), &[4, 1, 0]);
        assert!(InformativeSet::from_indices([1, 1]).is_err());
    }
}
