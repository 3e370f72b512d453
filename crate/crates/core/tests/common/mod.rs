//! Test-side oracles: direct summations over definitions, written without
//! the library's kernels. Shared with the acceptance suite.
#![allow(dead_code)]

use mdpd_core::exact::exact_from_model;
use mdpd_core::{InformativeSet, LabelMatrix, MixtureModel, Posterior};
use rand::rngs::StdRng;
use rand::Rng;

/// Random probability vector with every entry at least `floor / len`.
pub fn simplex(rng: &mut StdRng, len: usize, floor: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + floor).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn random_nested(rng: &mut StdRng, k: usize, m: usize, r: usize) -> (Vec<f64>, Vec<Vec<Vec<f64>>>) {
    let w = simplex(rng, k, 0.1);
    let mu = (0..k)
        .map(|_| (0..m).map(|_| simplex(rng, r, 0.05)).collect())
        .collect();
    (w, mu)
}

pub fn random_model(rng: &mut StdRng, k: usize, m: usize, r: usize) -> MixtureModel {
    let (w, mu) = random_nested(rng, k, m, r);
    MixtureModel::from_nested(w, &mu, None).unwrap()
}

/// Random model whose workers outside `set` share one conditional across
/// components (given in `off`, or drawn when `None`).
pub fn model_uninformative_off(
    rng: &mut StdRng,
    k: usize,
    m: usize,
    r: usize,
    set: &[usize],
    off: Option<&[Vec<f64>]>,
) -> (MixtureModel, Vec<Vec<f64>>) {
    let (w, mut mu) = random_nested(rng, k, m, r);
    let shared: Vec<Vec<f64>> = match off {
        Some(o) => o.to_vec(),
        None => (0..m).map(|_| simplex(rng, r, 0.05)).collect(),
    };
    for comp in mu.iter_mut() {
        for i in (0..m).filter(|i| !set.contains(i)) {
            comp[i].clone_from(&shared[i]);
        }
    }
    (MixtureModel::from_nested(w, &mu, None).unwrap(), shared)
}

pub fn random_data(rng: &mut StdRng, n: usize, m: usize, r: usize) -> LabelMatrix {
    let rows: Vec<Vec<Option<usize>>> = (0..n)
        .map(|_| (0..m).map(|_| Some(rng.random_range(0..r))).collect())
        .collect();
    LabelMatrix::from_rows(r, &rows).unwrap()
}

pub fn random_posterior(rng: &mut StdRng, n: usize, k: usize) -> Posterior {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| simplex(rng, k, 0.01)).collect();
    Posterior::from_rows(&rows, InformativeSet::new()).unwrap()
}

/// Every configuration of `model`'s alphabet as a data set, with the
/// probability of each under `model`.
pub fn exact_data(model: &MixtureModel) -> (LabelMatrix, Vec<f64>) {
    let f = exact_from_model(model).unwrap();
    (f.configurations().unwrap(), f.marginal())
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// `I(X_i, X_j | Y = k)` under `w_n q_nk` weights, as `H(i) + H(j) - H(i, j)`
/// with marginals tallied straight from the items and `eps` added per joint cell.
pub fn naive_cmi(
    data: &LabelMatrix,
    weights: Option<&[f64]>,
    post: &Posterior,
    eps: f64,
    k: usize,
    i: usize,
    j: usize,
) -> f64 {
    let r = data.n_labels();
    let mut z = 0.0;
    let mut pij = vec![vec![0.0; r]; r];
    let mut pi = vec![0.0; r];
    let mut pj = vec![0.0; r];
    for n in 0..data.n_items() {
        let w = weights.map_or(1.0, |w| w[n]) * post.row(n)[k];
        let a = data.get(n, i).unwrap();
        let b = data.get(n, j).unwrap();
        z += w;
        pij[a][b] += w;
        pi[a] += w;
        pj[b] += w;
    }
    let d = z + eps * (r * r) as f64;
    let joint: Vec<f64> = pij.iter().flatten().map(|&c| (c + eps) / d).collect();
    let mi: Vec<f64> = pi.iter().map(|&c| (c + eps * r as f64) / d).collect();
    let mj: Vec<f64> = pj.iter().map(|&c| (c + eps * r as f64) / d).collect();
    entropy(&mi) + entropy(&mj) - entropy(&joint)
}

/// `sum_{i != j} sum_k f(Y = k) I(X_i, X_j | Y = k)` from [`naive_cmi`].
pub fn naive_cmi_sum(data: &LabelMatrix, weights: Option<&[f64]>, post: &Posterior, eps: f64, pairs: &[usize]) -> f64 {
    let k = post.n_components();
    let total: f64 = (0..data.n_items()).map(|n| weights.map_or(1.0, |w| w[n])).sum();
    let mut s = 0.0;
    for kk in 0..k {
        let mass: f64 = (0..data.n_items())
            .map(|n| weights.map_or(1.0, |w| w[n]) * post.row(n)[kk])
            .sum();
        for &a in pairs {
            for &b in pairs {
                if a != b {
                    s += mass / total * naive_cmi(data, weights, post, eps, kk, a, b);
                }
            }
        }
    }
    s
}

/// `sum_n w_n sum_k q_nk ln(w_k prod_i mu_{k,i,x_i}) / sum_n w_n` from nested parameters.
pub fn q_value(
    weights: &[f64],
    mu: &[Vec<Vec<f64>>],
    data: &LabelMatrix,
    item_w: Option<&[f64]>,
    post: &Posterior,
) -> f64 {
    let mut total = 0.0;
    let mut mass = 0.0;
    for n in 0..data.n_items() {
        let wn = item_w.map_or(1.0, |w| w[n]);
        mass += wn;
        for (k, &q) in post.row(n).iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            let mut s = weights[k].ln();
            for (i, mu_i) in mu[k].iter().enumerate() {
                s += mu_i[data.get(n, i).unwrap()].ln();
            }
            total += wn * q * s;
        }
    }
    total / mass
}

/// Minimum-cost assignment by trying every permutation.
pub fn brute_assignment(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..cost.len() {
            if !used[c] {
                used[c] = true;
                best = best.min(cost[row][c] + go(cost, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost.len()])
}

/// Central-difference gradient.
pub fn gradient(mut f: impl FnMut(&[f64]) -> f64, dim: usize, h: f64) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    (0..dim)
        .map(|a| {
            x[a] = h;
            let up = f(&x);
            x[a] = -h;
            let down = f(&x);
            x[a] = 0.0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub mod checks {
    //! One randomized instance per call; each returns the quantity its
    //! property bounds.

    use super::*;
    use mdpd_core::em::{log_likelihood_weighted, m_step_weighted};
    use mdpd_core::exact::{brute_upper_bound, exact_kl};
    use mdpd_core::info::cmi_tensor_weighted;
    use mdpd_core::split::duplicate_component;
    use mdpd_core::{cmi_sum, cmi_tensor, posterior};
    use rand::SeedableRng;

    fn random_subset(rng: &mut StdRng, m: usize) -> Vec<usize> {
        loop {
            let s: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.5)).collect();
            if !s.is_empty() {
                return s;
            }
        }
    }

    fn set_of(s: &[usize]) -> InformativeSet {
        InformativeSet::from_indices(s.iter().copied()).unwrap()
    }

    /// `|KL(f0 || f) - KL(f0_S || f_S)|` for `f0` and `f` uninformative off
    /// `S` with matching off-S marginals.
    pub fn kl_restriction_gap(seed: u64) -> f64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let m = rng.random_range(2..=4);
        let s = random_subset(&mut rng, m);
        let (f0, shared) = model_uninformative_off(&mut rng, 2, m, 2, &s, None);
        let (f, _) = model_uninformative_off(&mut rng, 2, m, 2, &s, Some(&shared));
        let p = exact_from_model(&f0).unwrap();
        let q = exact_from_model(&f).unwrap();
        let full = exact_kl(&p.marginal(), &q.marginal()).unwrap();
        let restricted = exact_kl(&p.marginal_on(&s), &q.marginal_on(&s)).unwrap();
        (full - restricted).abs()
    }

    /// `U - KL(f0 || f_next)` after one exact regularized EM step.
    pub fn upper_bound_slack(seed: u64) -> f64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let m = rng.random_range(2..=4);
        let k = rng.random_range(2..=3);
        let f0 = {
            let kk = rng.random_range(1..=3);
            random_model(&mut rng, kk, m, 2)
        };
        let model = random_model(&mut rng, k, m, 2);
        let s = set_of(&random_subset(&mut rng, m));
        let exact = exact_from_model(&f0).unwrap();
        let (data, w) = exact_data(&f0);
        let post = posterior(&model, &data, &s).unwrap();
        let (next, _) = m_step_weighted(&data, Some(&w), &post, None, 0.0).unwrap();
        let kl = exact_kl(&w, &exact_from_model(&next).unwrap().marginal()).unwrap();
        brute_upper_bound(&exact, &model, &s).unwrap() - kl
    }

    /// `Q(closed form) - max Q(alternative)` over `n_alt` feasible alternatives.
    pub fn m_step_optimality_gap(seed: u64, n_alt: usize) -> f64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let (n, m, r, k) = (6, 2, 2, 2);
        let data = random_data(&mut rng, n, m, r);
        let post = random_posterior(&mut rng, n, k);
        let (best, _) = m_step_weighted(&data, None, &post, None, 0.0).unwrap();
        let best_w = best.weights().to_vec();
        let best_mu = best.conditionals_nested();
        let q_best = q_value(&best_w, &best_mu, &data, None, &post);
        let mut worst_gap = f64::INFINITY;
        for a in 0..n_alt {
            let (mut w, mut mu) = random_nested(&mut rng, k, m, r);
            if a % 2 == 1 {
                // Local alternatives: a short step from the optimum.
                let t = rng.random::<f64>() * 0.1;
                let mix = |x: f64, y: f64| (1.0 - t) * x + t * y;
                w = best_w.iter().zip(&w).map(|(&x, &y)| mix(x, y)).collect();
                for (kk, comp) in mu.iter_mut().enumerate() {
                    for (i, row) in comp.iter_mut().enumerate() {
                        for (c, v) in row.iter_mut().enumerate() {
                            *v = mix(best_mu[kk][i][c], *v);
                        }
                    }
                }
            }
            worst_gap = worst_gap.min(q_best - q_value(&w, &mu, &data, None, &post));
        }
        worst_gap
    }

    /// Largest change of the CMI sum and the log-likelihood caused by
    /// duplicating a component, in exact mode.
    pub fn duplication_change(seed: u64) -> f64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let m = rng.random_range(2..=4);
        let r = rng.random_range(2..=3);
        let f0 = {
            let kk = rng.random_range(1..=3);
            random_model(&mut rng, kk, m, r)
        };
        let model = {
            let kk = rng.random_range(1..=3);
            random_model(&mut rng, kk, m, r)
        };
        let s = set_of(&random_subset(&mut rng, m));
        let c = rng.random_range(0..model.n_components());
        let dup = duplicate_component(&model, c).unwrap();
        let (data, w) = exact_data(&f0);
        let score = |mm: &MixtureModel| {
            let post = posterior(mm, &data, &s).unwrap();
            let t = cmi_tensor_weighted(&data, Some(&w), &post, 0.0).unwrap();
            (cmi_sum(&t, None), log_likelihood_weighted(mm, &data, Some(&w)).unwrap())
        };
        let (c0, l0) = score(&model);
        let (c1, l1) = score(&dup);
        (c0 - c1).abs().max((l0 - l1).abs())
    }

    /// `|cmi_sum - cmi_sum restricted to S|` when `f0` and the model are
    /// uninformative off `S`, in exact mode.
    pub fn restriction_identity_gap(seed: u64) -> f64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let m = rng.random_range(2..=4);
        let s = random_subset(&mut rng, m);
        let (f0, shared) = model_uninformative_off(&mut rng, 2, m, 2, &s, None);
        let (model, _) = model_uninformative_off(&mut rng, 2, m, 2, &s, Some(&shared));
        let set = set_of(&s);
        let (data, w) = exact_data(&f0);
        let post = posterior(&model, &data, &set).unwrap();
        let t = cmi_tensor_weighted(&data, Some(&w), &post, 0.0).unwrap();
        (cmi_sum(&t, None) - cmi_sum(&t, Some(&set))).abs()
    }

    /// `|cmi_sum|` with the model equal to the reference distribution.
    pub fn perfect_fit_cmi(seed: u64) -> f64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let m = rng.random_range(2..=4);
        let r = rng.random_range(2..=3);
        let f0 = {
            let kk = rng.random_range(1..=3);
            random_model(&mut rng, kk, m, r)
        };
        let (data, w) = exact_data(&f0);
        let post = posterior(&f0, &data, &InformativeSet::full(m)).unwrap();
        let t = cmi_tensor_weighted(&data, Some(&w), &post, 0.0).unwrap();
        cmi_sum(&t, None).abs()
    }

    /// Largest `|library - naive|` over the CMI tensor entries and the sum.
    pub fn cmi_oracle_gap(seed: u64) -> f64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let n = rng.random_range(10..=100);
        let m = rng.random_range(2..=5);
        let r = rng.random_range(2..=3);
        let k = rng.random_range(1..=3);
        let eps = if seed.is_multiple_of(2) {
            0.0
        } else {
            mdpd_core::DEFAULT_SMOOTHING
        };
        let data = random_data(&mut rng, n, m, r);
        let post = random_posterior(&mut rng, n, k);
        let t = cmi_tensor(&data, &post, eps).unwrap();
        let mut gap: f64 = 0.0;
        for kk in 0..k {
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        gap = gap.max((t.per_component(kk, i, j) - naive_cmi(&data, None, &post, eps, kk, i, j)).abs());
                    }
                }
            }
        }
        let all: Vec<usize> = (0..m).collect();
        gap.max((cmi_sum(&t, None) - naive_cmi_sum(&data, None, &post, eps, &all)).abs())
    }
}
