//! Full enumeration of small mixtures.
//!
//! Configurations are indexed in mixed radix with worker 0 as the most
//! significant digit.

use crate::data::LabelMatrix;
use crate::em::posterior;
use crate::error::{MdpdError, Result};
use crate::info::{kl_divergence, InformativeSet};
use crate::model::MixtureModel;

/// Largest number of (configuration, component) cells we enumerate.
pub const MAX_EXACT_CELLS: u128 = 1_000_000;

/// Joint table `f(X, Y)` over all `R^M` configurations and `K` components.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    m: usize,
    r: usize,
    k: usize,
    table: Vec<f64>,
}

fn n_configs(m: usize, r: usize, k: usize) -> Result<usize> {
    let cells = (r as u128)
        .checked_pow(m as u32)
        .and_then(|c| c.checked_mul(k as u128))
        .unwrap_or(u128::MAX);
    if cells > MAX_EXACT_CELLS {
        return Err(MdpdError::TooLargeToEnumerate {
            cells,
            limit: MAX_EXACT_CELLS,
        });
    }
    Ok(cells as usize / k)
}

fn decode(mut config: usize, m: usize, r: usize, out: &mut [usize]) {
    for i in (0..m).rev() {
        out[i] = config % r;
        config /= r;
    }
}

/// Enumerates `f(x, k) = w_k prod_i mu_{k,i,x_i}` over every configuration.
pub fn exact_from_model(model: &MixtureModel) -> Result<ExactDistribution> {
    if model.has_missing_category() {
        return Err(MdpdError::InvalidModel(
            "exact enumeration does not support a missing category".into(),
        ));
    }
    let (m, r, k) = (model.n_workers(), model.n_categories(), model.n_components());
    let configs = n_configs(m, r, k)?;
    let mut table = vec![0.0; configs * k];
    let mut x = vec![0usize; m];
    for config in 0..configs {
        decode(config, m, r, &mut x);
        for kk in 0..k {
            let mut p = model.weight(kk);
            for (i, &xi) in x.iter().enumerate() {
                p *= model.mu(kk, i)[xi];
            }
            table[config * k + kk] = p;
        }
    }
    Ok(ExactDistribution { m, r, k, table })
}

impl ExactDistribution {
    pub fn n_workers(&self) -> usize {
        self.m
    }

    pub fn n_categories(&self) -> usize {
        self.r
    }

    pub fn n_components(&self) -> usize {
        self.k
    }

    pub fn n_configs(&self) -> usize {
        self.table.len() / self.k
    }

    pub fn joint(&self, config: usize, component: usize) -> f64 {
        self.table[config * self.k + component]
    }

    /// `f(X)` over every configuration.
    pub fn marginal(&self) -> Vec<f64> {
        self.table.chunks(self.k).map(|c| c.iter().sum()).collect()
    }

    /// `f(X_S)` over `R^|S|` configurations of the listed workers, in list order.
    pub fn marginal_on(&self, workers: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.r.pow(workers.len() as u32)];
        let mut x = vec![0usize; self.m];
        for (config, p) in self.marginal().into_iter().enumerate() {
            decode(config, self.m, self.r, &mut x);
            let idx = workers.iter().fold(0, |acc, &i| acc * self.r + x[i]);
            out[idx] += p;
        }
        out
    }

    /// Every configuration as one item of a label matrix, in index order.
    pub fn configurations(&self) -> Result<LabelMatrix> {
        let n = self.n_configs();
        let mut entries = vec![0u16; n * self.m];
        let mut x = vec![0usize; self.m];
        for config in 0..n {
            decode(config, self.m, self.r, &mut x);
            for (i, &xi) in x.iter().enumerate() {
                entries[i * n + config] = xi as u16;
            }
        }
        LabelMatrix::from_columns(n, self.m, self.r, entries)
    }
}

/// `KL(p || q)` between two tables over the same configurations.
pub fn exact_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(MdpdError::ShapeMismatch(format!(
            "tables of {} and {} configurations",
            p.len(),
            q.len()
        )));
    }
    Ok(kl_divergence(p, q))
}

/// `sum_i H(X_i | Y) - H(X | Y)` under the hybrid distribution
/// `f(Y | X_S; model) f0(X)`, by enumeration.
///
/// This bounds the KL loss of the model after one regularized EM step from
/// above.
pub fn brute_upper_bound(f0: &ExactDistribution, model: &MixtureModel, set: &InformativeSet) -> Result<f64> {
    if f0.m != model.n_workers() || f0.r != model.n_categories() {
        return Err(MdpdError::ShapeMismatch("reference and model alphabets differ".into()));
    }
    let data = f0.configurations()?;
    let weights = f0.marginal();
    let post = posterior(model, &data, set)?;
    let (m, r, k) = (f0.m, f0.r, model.n_components());

    let mut comp_mass = vec![0.0; k];
    let mut singles = vec![0.0; k * m * r];
    let mut x = vec![0usize; m];
    for (config, &w) in weights.iter().enumerate() {
        decode(config, m, r, &mut x);
        for (kk, &q) in post.row(config).iter().enumerate() {
            let h = w * q;
            comp_mass[kk] += h;
            for (i, &xi) in x.iter().enumerate() {
                singles[(kk * m + i) * r + xi] += h;
            }
        }
    }
    let mut joint_entropy = 0.0;
    for (config, &w) in weights.iter().enumerate() {
        for (kk, &q) in post.row(config).iter().enumerate() {
            let h = w * q;
            if h > 0.0 {
                joint_entropy -= h * (h / comp_mass[kk]).ln();
            }
        }
    }
    let mut single_entropy = 0.0;
    for kk in 0..k {
        for i in 0..m {
            for c in 0..r {
                let h = singles[(kk * m + i) * r + c];
                if h > 0.0 {
                    single_entropy -= h * (h / comp_mass[kk]).ln();
                }
            }
        }
    }
    Ok(single_entropy - joint_entropy)
}
