//! Sparse clustering of categorical data with mixtures of discrete product
//! distributions.
//!
//! The central routine is [`stagewise::fit_stagewise`]: starting from a single
//! component it grows an informative set of workers from the largest pairwise
//! conditional mutual information, splits components at the resulting saddle
//! points and runs EM whose E-step only looks at the informative workers.

// `!(x >= 0.0)` rejects NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod crowd;
pub mod data;
pub mod em;
pub mod error;
pub mod exact;
pub mod info;
pub mod io;
pub mod model;
pub mod split;
pub mod stagewise;
pub mod synth;

pub use data::{LabelMatrix, MISSING};
pub use em::{em_iterate, log_likelihood, m_step, posterior, Posterior};
pub use error::{MdpdError, Result};
pub use info::{cmi_sum, cmi_tensor, max_cmi_norm, max_triplet, CmiTensor, InformativeSet};
pub use model::{init_one_component, FrozenCoords, MixtureModel, DEFAULT_SMOOTHING};
pub use stagewise::{fit_stagewise, FitConfig, FitTrace, StagewiseFit};
