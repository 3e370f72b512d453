//! Component duplication and saddle-point escape.
//!
//! Duplicating a component leaves both the marginal likelihood and the CMI
//! sum unchanged, and the duplicated point is a saddle of the CMI sum as a
//! function of the four conditional vectors of the chosen worker pair in the
//! two copies. The split moves along the eigenvector of the most negative
//! Hessian eigenvalue of that restricted function.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LabelMatrix;
use crate::em::posterior;
use crate::error::{MdpdError, Result};
use crate::info::{cmi_sum, cmi_tensor, InformativeSet};
use crate::model::{MixtureModel, DEFAULT_SMOOTHING};

/// Eigenvalues above this are not treated as negative curvature.
pub const NEGATIVE_CURVATURE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Worker pairs entering the restricted CMI sum.
    pub pairs: PairScope,
    /// Finite-difference step of the Hessian.
    pub h: f64,
    /// Initial perturbation length along the chosen direction.
    pub step: f64,
    /// Every perturbed coordinate must stay in `[margin, 1 - margin]`.
    pub margin: f64,
    pub max_halvings: usize,
    pub smoothing: f64,
    /// Seed of the random fallback direction.
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            pairs: PairScope::default(),
            h: 1e-4,
            step: 0.05,
            margin: 1e-6,
            max_halvings: 20,
            smoothing: DEFAULT_SMOOTHING,
            seed: 0,
        }
    }
}

/// Pairs summed by the restricted objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairScope {
    /// Pairs of informative workers. Off the informative set the hybrid
    /// distribution makes every pair independent, so this equals the full sum
    /// up to sampling noise.
    #[default]
    Informative,
    /// Every pair of workers.
    All,
}

/// Appends a copy of component `k`; the copy and the original each carry
/// half of the original weight.
pub fn duplicate_component(model: &MixtureModel, k: usize) -> Result<MixtureModel> {
    let kk = model.n_components();
    if k >= kk {
        return Err(MdpdError::InvalidConfig(format!("component {k} out of range 0..{kk}")));
    }
    let mut out = model.clone();
    let half = model.weight(k) / 2.0;
    {
        let w = out.weights_mut();
        w[k] = half;
        w.push(half);
    }
    let m = model.n_workers();
    let r = model.n_categories();
    let copy = model.conditionals()[k * m * r..(k + 1) * m * r].to_vec();
    out.conditionals_mut().extend_from_slice(&copy);
    out.set_shape(kk + 1);
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone)]
struct Block {
    component: usize,
    worker: usize,
    /// Trainable categories parameterized directly.
    free: Vec<usize>,
    /// Trainable category holding the remaining mass.
    last: usize,
}

/// The CMI sum as a function of the free coordinates of `mu[k][i]`,
/// `mu[k][j]`, `mu[k_new][i]` and `mu[k_new][j]`, with every other
/// parameter held fixed. Coordinates are offsets from the base model, so the
/// origin is the base model itself.
pub struct RestrictedObjective<'a> {
    base: MixtureModel,
    data: &'a LabelMatrix,
    set: InformativeSet,
    /// Columns whose pairs are summed; `None` for all workers.
    scoped: Option<LabelMatrix>,
    blocks: Vec<Block>,
    smoothing: f64,
}

impl<'a> RestrictedObjective<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &MixtureModel,
        data: &'a LabelMatrix,
        set: &InformativeSet,
        k: usize,
        k_new: usize,
        i: usize,
        j: usize,
        scope: PairScope,
        smoothing: f64,
    ) -> Result<Self> {
        let kk = model.n_components();
        let m = model.n_workers();
        if k >= kk || k_new >= kk || k == k_new {
            return Err(MdpdError::InvalidConfig(format!("components {k}, {k_new} of {kk}")));
        }
        if i >= m || j >= m || i == j {
            return Err(MdpdError::InvalidConfig(format!("workers {i}, {j} of {m}")));
        }
        let mut blocks = Vec::with_capacity(4);
        for component in [k, k_new] {
            for worker in [i, j] {
                let trainable = match model.frozen() {
                    Some(f) => f.trainable(worker),
                    None => (0..model.n_categories()).collect(),
                };
                let (&last, free) = trainable.split_last().expect("at least one trainable category");
                blocks.push(Block {
                    component,
                    worker,
                    free: free.to_vec(),
                    last,
                });
            }
        }
        let scoped = match scope {
            PairScope::All => None,
            PairScope::Informative => Some(data.select_workers(set.as_slice())?),
        };
        Ok(Self {
            base: model.clone(),
            data,
            set: set.clone(),
            scoped,
            blocks,
            smoothing,
        })
    }

    /// `4 (T - 1)` for `T` trainable categories per worker.
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.free.len()).sum()
    }

    /// The model at tangent offset `theta`, and whether any coordinate had to
    /// be projected back to at least `margin` (or its base value, if lower).
    pub fn model_at(&self, theta: &[f64], margin: f64) -> Result<(MixtureModel, bool)> {
        if theta.len() != self.dim() {
            return Err(MdpdError::ShapeMismatch(format!(
                "tangent vector of length {}, expected {}",
                theta.len(),
                self.dim()
            )));
        }
        let mut model = self.base.clone();
        let mut projected = false;
        let mut offset = 0;
        for block in &self.blocks {
            let base_mu = self.base.mu(block.component, block.worker).to_vec();
            let trainable_mass: f64 = block.free.iter().chain([&block.last]).map(|&c| base_mu[c]).sum();
            let mu = model.mu_mut(block.component, block.worker);
            let mut used = 0.0;
            for (t, &c) in block.free.iter().enumerate() {
                mu[c] = base_mu[c] + theta[offset + t];
                used += mu[c];
            }
            mu[block.last] = trainable_mass - used;
            offset += block.free.len();

            let mut clipped = false;
            for &c in block.free.iter().chain([&block.last]) {
                let lower = margin.min(base_mu[c]);
                if mu[c] < lower {
                    mu[c] = lower;
                    clipped = true;
                }
            }
            if clipped {
                projected = true;
                let total: f64 = block.free.iter().chain([&block.last]).map(|&c| mu[c]).sum();
                for &c in block.free.iter().chain([&block.last]) {
                    mu[c] *= trainable_mass / total;
                }
            }
        }
        Ok((model, projected))
    }

    pub fn evaluate_model(&self, model: &MixtureModel) -> Result<f64> {
        let post = posterior(model, self.data, &self.set)?;
        let columns = self.scoped.as_ref().unwrap_or(self.data);
        let t = cmi_tensor(columns, &post, self.smoothing)?;
        Ok(cmi_sum(&t, None))
    }

    /// Objective at `theta`, with out-of-simplex coordinates projected.
    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        let (model, _) = self.model_at(theta, 0.0)?;
        self.evaluate_model(&model)
    }
}

/// Restricted CMI objective at a single tangent point.
#[allow(clippy::too_many_arguments)]
pub fn restricted_cmi_objective(
    model: &MixtureModel,
    data: &LabelMatrix,
    set: &InformativeSet,
    k: usize,
    k_new: usize,
    i: usize,
    j: usize,
    theta: &[f64],
    scope: PairScope,
    smoothing: f64,
) -> Result<f64> {
    RestrictedObjective::new(model, data, set, k, k_new, i, j, scope, smoothing)?.eval(theta)
}

/// Central-difference Hessian at the origin.
///
/// Entry `(a, b)` is `(f(+a+b) - f(+a-b) - f(-a+b) + f(-a-b)) / 4h^2` with
/// steps of length `h`; the result is symmetric by construction.
pub fn numerical_hessian<F>(mut objective: F, dim: usize, h: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(MdpdError::InvalidConfig(format!("step h must be positive, got {h}")));
    }
    let mut point = vec![0.0; dim];
    let mut eval = |da: (usize, f64), db: (usize, f64)| {
        point.iter_mut().for_each(|p| *p = 0.0);
        point[da.0] += da.1;
        point[db.0] += db.1;
        objective(&point)
    };
    let mut hess = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in a..dim {
            let pp = eval((a, h), (b, h));
            let pm = eval((a, h), (b, -h));
            let mp = eval((a, -h), (b, h));
            let mm = eval((a, -h), (b, -h));
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            if !v.is_finite() {
                return Err(MdpdError::InvalidData(format!(
                    "non-finite objective while differentiating entry ({a}, {b})"
                )));
            }
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    Ok(hess)
}

/// How a split resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    /// Moved along the most negative curvature direction.
    Eigen,
    /// No usable negative curvature or backtracking failed; random tangent step.
    RandomFallback,
    /// The Hessian could not be evaluated; the duplicate is returned as is.
    Unperturbed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub source_component: usize,
    pub new_component: usize,
    pub pair: (usize, usize),
    pub tangent_dim: usize,
    pub hessian: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub chosen_direction: Vec<f64>,
    pub step_size: f64,
}

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub model: MixtureModel,
    pub plan: SplitPlan,
    pub kind: SplitKind,
    pub objective_before: f64,
    pub objective_after: f64,
}

/// Duplicates component `k` and breaks the symmetry in workers `i` and `j`.
///
/// The step along the chosen eigenvector starts at `config.step` and is
/// halved until the four vectors stay inside the margin and the restricted
/// objective strictly decreases; both signs are tried at each length.
#[allow(clippy::too_many_arguments)]
pub fn perturb_split(
    model: &MixtureModel,
    data: &LabelMatrix,
    set: &InformativeSet,
    i: usize,
    j: usize,
    k: usize,
    config: &SplitConfig,
) -> Result<SplitOutcome> {
    let dup = duplicate_component(model, k)?;
    let k_new = dup.n_components() - 1;
    let objective = RestrictedObjective::new(&dup, data, set, k, k_new, i, j, config.pairs, config.smoothing)?;
    let dim = objective.dim();
    let origin = vec![0.0; dim];
    let before = objective.eval(&origin)?;
    let mut plan = SplitPlan {
        source_component: k,
        new_component: k_new,
        pair: (i, j),
        tangent_dim: dim,
        hessian: Vec::new(),
        eigenvalues: Vec::new(),
        chosen_direction: vec![0.0; dim],
        step_size: 0.0,
    };

    let hessian = match numerical_hessian(|t| objective.eval(t).unwrap_or(f64::NAN), dim, config.h) {
        Ok(h) => h,
        Err(err) => {
            log::warn!("split of component {k} on ({i}, {j}) left unperturbed: {err}");
            return Ok(SplitOutcome {
                model: dup,
                plan,
                kind: SplitKind::Unperturbed,
                objective_before: before,
                objective_after: before,
            });
        }
    };
    plan.hessian = (0..dim).map(|a| (0..dim).map(|b| hessian[(a, b)]).collect()).collect();

    let eig = SymmetricEigen::try_new(hessian.clone(), 1e-10, 0).unwrap_or_else(|| SymmetricEigen::new(hessian));
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    plan.eigenvalues = order.iter().map(|&a| eig.eigenvalues[a]).collect();

    if let Some(&lowest) = order.first().filter(|&&a| eig.eigenvalues[a] < -NEGATIVE_CURVATURE_TOL) {
        let column = eig.eigenvectors.column(lowest);
        let norm = column.norm();
        let direction: Vec<f64> = column.iter().map(|v| v / norm).collect();
        plan.chosen_direction.clone_from(&direction);
        let mut step = config.step;
        for _ in 0..=config.max_halvings {
            for sign in [1.0, -1.0] {
                let theta: Vec<f64> = direction.iter().map(|v| sign * step * v).collect();
                let (candidate, projected) = objective.model_at(&theta, config.margin)?;
                if projected {
                    continue;
                }
                let after = objective.evaluate_model(&candidate)?;
                if after < before {
                    plan.chosen_direction = direction.iter().map(|v| sign * v).collect();
                    plan.step_size = step;
                    return Ok(SplitOutcome {
                        model: candidate,
                        plan,
                        kind: SplitKind::Eigen,
                        objective_before: before,
                        objective_after: after,
                    });
                }
            }
            step /= 2.0;
        }
        log::warn!("backtracking exhausted for split on ({i}, {j}); using a random direction");
    } else {
        log::warn!("no negative curvature for split on ({i}, {j}); using a random direction");
    }

    let mut rng = StdRng::seed_from_u64(config.seed);
    let mut direction: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);
    let theta: Vec<f64> = direction.iter().map(|v| config.step * v).collect();
    let (candidate, _) = objective.model_at(&theta, config.margin)?;
    let after = objective.evaluate_model(&candidate)?;
    plan.chosen_direction = direction;
    plan.step_size = config.step;
    Ok(SplitOutcome {
        model: candidate,
        plan,
        kind: SplitKind::RandomFallback,
        objective_before: before,
        objective_after: after,
    })
}
