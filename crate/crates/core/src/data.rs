//! Categorical observation matrices.
//!
//! Labels are stored 0-based. The 1-based convention used in files and on the
//! command line is applied only by the I/O layer.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{MdpdError, Result};

/// Sentinel for an absent observation.
pub const MISSING: u16 = u16::MAX;

/// N items by M workers, each entry a label in `0..n_labels` or [`MISSING`].
///
/// Entries are stored column-major (one contiguous column per worker), which
/// is the access pattern of every kernel in this crate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    n_items: usize,
    n_workers: usize,
    n_labels: usize,
    entries: Vec<u16>,
}

impl LabelMatrix {
    /// Builds a matrix from column-major entries.
    pub fn from_columns(n_items: usize, n_workers: usize, n_labels: usize, entries: Vec<u16>) -> Result<Self> {
        if n_items == 0 || n_workers == 0 {
            return Err(MdpdError::InvalidData(format!(
                "need at least one item and one worker, got {n_items}x{n_workers}"
            )));
        }
        if n_labels < 2 {
            return Err(MdpdError::InvalidData(format!(
                "need at least two labels, got {n_labels}"
            )));
        }
        if n_labels >= MISSING as usize {
            return Err(MdpdError::InvalidData(format!("too many labels: {n_labels}")));
        }
        if entries.len() != n_items * n_workers {
            return Err(MdpdError::ShapeMismatch(format!(
                "expected {} entries, got {}",
                n_items * n_workers,
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|&e| e != MISSING && e as usize >= n_labels) {
            return Err(MdpdError::InvalidData(format!(
                "label {} at item {}, worker {} is outside 0..{}",
                entries[pos],
                pos % n_items,
                pos / n_items,
                n_labels
            )));
        }
        Ok(Self {
            n_items,
            n_workers,
            n_labels,
            entries,
        })
    }

    /// Builds a matrix from per-item rows of optional 0-based labels.
    pub fn from_rows(n_labels: usize, rows: &[Vec<Option<usize>>]) -> Result<Self> {
        let n_items = rows.len();
        let n_workers = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_workers) {
            return Err(MdpdError::ShapeMismatch("ragged rows".into()));
        }
        let mut entries = vec![MISSING; n_items * n_workers];
        for (n, row) in rows.iter().enumerate() {
            for (i, &label) in row.iter().enumerate() {
                if let Some(l) = label {
                    entries[i * n_items + n] = u16::try_from(l).unwrap_or(MISSING - 1);
                }
            }
        }
        Self::from_columns(n_items, n_workers, n_labels, entries)
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_workers(&self) -> usize {
        self.n_workers
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn get(&self, item: usize, worker: usize) -> Option<usize> {
        match self.entries[worker * self.n_items + item] {
            MISSING => None,
            l => Some(l as usize),
        }
    }

    /// Raw column for one worker, with [`MISSING`] sentinels.
    pub fn column(&self, worker: usize) -> &[u16] {
        &self.entries[worker * self.n_items..(worker + 1) * self.n_items]
    }

    pub fn row(&self, item: usize) -> Vec<Option<usize>> {
        (0..self.n_workers).map(|i| self.get(item, i)).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.entries.contains(&MISSING)
    }

    pub fn observed_count(&self) -> usize {
        self.entries.iter().filter(|&&e| e != MISSING).count()
    }

    pub fn missing_count(&self, worker: usize) -> usize {
        self.column(worker).iter().filter(|&&e| e == MISSING).count()
    }

    /// Category codes for a model alphabet of size `model_labels`.
    ///
    /// A model alphabet one larger than the data's carries the missing
    /// category as its last symbol; missing entries are mapped onto it.
    pub fn codes(&self, model_labels: usize) -> Result<Cow<'_, [u16]>> {
        if model_labels == self.n_labels {
            if self.has_missing() {
                return Err(MdpdError::ShapeMismatch(
                    "data has missing entries but the model has no missing category".into(),
                ));
            }
            Ok(Cow::Borrowed(&self.entries))
        } else if model_labels == self.n_labels + 1 {
            let extra = self.n_labels as u16;
            Ok(Cow::Owned(
                self.entries
                    .iter()
                    .map(|&e| if e == MISSING { extra } else { e })
                    .collect(),
            ))
        } else {
            Err(MdpdError::ShapeMismatch(format!(
                "model has {model_labels} categories, data has {} labels",
                self.n_labels
            )))
        }
    }

    /// Copy without the given workers.
    pub fn drop_workers(&self, workers: &[usize]) -> Result<Self> {
        let mut entries = Vec::with_capacity(self.entries.len());
        let mut kept = 0;
        for i in 0..self.n_workers {
            if !workers.contains(&i) {
                entries.extend_from_slice(self.column(i));
                kept += 1;
            }
        }
        Self::from_columns(self.n_items, kept, self.n_labels, entries)
    }

    /// Copy restricted to the given workers, in the given order.
    pub fn select_workers(&self, workers: &[usize]) -> Result<Self> {
        let mut entries = Vec::with_capacity(workers.len() * self.n_items);
        for &i in workers {
            if i >= self.n_workers {
                return Err(MdpdError::ShapeMismatch(format!("worker {i} out of range")));
            }
            entries.extend_from_slice(self.column(i));
        }
        Self::from_columns(self.n_items, workers.len(), self.n_labels, entries)
    }
}
