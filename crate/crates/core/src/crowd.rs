//! Crowdsourcing evaluation: missing-label policy, component alignment,
//! prediction, error rates and label triplet files.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use itertools::Itertools;

use crate::data::{LabelMatrix, MISSING};
use crate::em::posterior;
use crate::error::{MdpdError, Result};
use crate::info::InformativeSet;
use crate::model::{FrozenCoords, MixtureModel};

/// Largest class count for exhaustive permutation matching.
pub const MAX_PERMUTATION_K: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct MissingRates {
    /// Fraction of items each kept worker left unlabelled.
    pub rates: Vec<f64>,
    /// Workers removed because they labelled nothing, as original indices.
    pub dropped: Vec<usize>,
    /// The input without dropped workers.
    pub data: LabelMatrix,
    /// Missing category frozen at `rates`; `None` when nothing is missing.
    pub frozen: Option<FrozenCoords>,
}

pub fn estimate_missing_rates(data: &LabelMatrix) -> Result<MissingRates> {
    let n = data.n_items();
    let dropped: Vec<usize> = (0..data.n_workers()).filter(|&i| data.missing_count(i) == n).collect();
    if !dropped.is_empty() {
        log::warn!("dropping workers with no labels: {dropped:?}");
    }
    let data = if dropped.is_empty() {
        data.clone()
    } else {
        data.drop_workers(&dropped)?
    };
    if data.n_workers() == 0 {
        return Err(MdpdError::InvalidData("no worker has any label".into()));
    }
    let rates: Vec<f64> = (0..data.n_workers())
        .map(|i| data.missing_count(i) as f64 / n as f64)
        .collect();
    let frozen = if data.has_missing() {
        Some(FrozenCoords::missing_category(&rates, data.n_labels() + 1)?)
    } else {
        None
    };
    Ok(MissingRates {
        rates,
        dropped,
        data,
        frozen,
    })
}

/// Minimum-cost assignment of rows to columns of a square matrix.
///
/// Returns `assign[row] = column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // Potentials and matching are 1-based; index 0 is a sentinel column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        matched_row[0] = row;
        let mut col0 = 0;
        let mut min_v = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = matched_row[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[r0 - 1][col - 1] - u[r0] - v[col];
                if reduced < min_v[col] {
                    min_v[col] = reduced;
                    way[col] = col0;
                }
                if min_v[col] < delta {
                    delta = min_v[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[matched_row[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_v[col] -= delta;
                }
            }
            col0 = col1;
            if matched_row[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            matched_row[col0] = matched_row[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for col in 1..=n {
        if matched_row[col] > 0 {
            assign[matched_row[col] - 1] = col - 1;
        }
    }
    assign
}

fn check_label_count(model: &MixtureModel) -> Result<()> {
    let r = model.n_data_labels();
    let k = model.n_components();
    if r != k {
        return Err(MdpdError::InvalidModel(format!(
            "predicting labels needs as many components as labels, got K={k} and R={r}"
        )));
    }
    Ok(())
}

/// `alignment[k]` is the label assigned to component `k`.
///
/// Scores are the average of `mu[k][i][label]` over the informative workers
/// (all workers if the set is empty); the assignment maximizes total score.
pub fn align_components(model: &MixtureModel, set: &InformativeSet) -> Result<Vec<usize>> {
    check_label_count(model)?;
    let k = model.n_components();
    let workers: Vec<usize> = if set.is_empty() {
        (0..model.n_workers()).collect()
    } else {
        set.as_slice().to_vec()
    };
    if let Some(&bad) = workers.iter().find(|&&i| i >= model.n_workers()) {
        return Err(MdpdError::ShapeMismatch(format!(
            "informative worker {bad} out of range"
        )));
    }
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|kk| {
            (0..k)
                .map(|label| -workers.iter().map(|&i| model.mu(kk, i)[label]).sum::<f64>() / workers.len() as f64)
                .collect()
        })
        .collect();
    Ok(hungarian(&cost))
}

/// Aligned label of every item from the posterior argmax.
///
/// `set = None` uses every worker in the posterior (refined models); a set
/// restricts the posterior to those workers (stagewise models). A single
/// component predicts label 0 for every item.
pub fn predict(model: &MixtureModel, data: &LabelMatrix, set: Option<&InformativeSet>) -> Result<Vec<usize>> {
    if model.n_components() == 1 {
        model.check_data(data)?;
        return Ok(vec![0; data.n_items()]);
    }
    check_label_count(model)?;
    let full = InformativeSet::full(model.n_workers());
    let used = set.unwrap_or(&full);
    let alignment = align_components(model, used)?;
    let post = posterior(model, data, used)?;
    Ok(post.argmax().into_iter().map(|k| alignment[k]).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Matching {
    /// Labels are compared as given.
    #[default]
    Aligned,
    /// The smallest error over every relabeling of the predictions.
    BestPermutation,
}

pub fn prediction_error(pred: &[usize], truth: &[usize], matching: Matching) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(MdpdError::ShapeMismatch(format!(
            "{} predictions for {} truth labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(MdpdError::InvalidData("no items to score".into()));
    }
    let n = pred.len() as f64;
    let wrong = match matching {
        Matching::Aligned => pred.iter().zip(truth).filter(|(a, b)| a != b).count(),
        Matching::BestPermutation => {
            let k = pred.iter().chain(truth).max().map_or(1, |&m| m + 1);
            if k > MAX_PERMUTATION_K {
                return Err(MdpdError::InvalidConfig(format!(
                    "best-permutation matching is limited to {MAX_PERMUTATION_K} classes, got {k}"
                )));
            }
            let mut confusion = vec![0usize; k * k];
            for (&p, &t) in pred.iter().zip(truth) {
                confusion[p * k + t] += 1;
            }
            (0..k)
                .permutations(k)
                .map(|perm| pred.len() - (0..k).map(|p| confusion[p * k + perm[p]]).sum::<usize>())
                .min()
                .expect("at least one permutation")
        }
    };
    Ok(wrong as f64 / n)
}

/// A label matrix together with the identifiers it was read from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    pub data: LabelMatrix,
    pub item_ids: Vec<String>,
    pub worker_ids: Vec<String>,
    /// `label_map[c]` is the text of label `c`.
    pub label_map: Vec<String>,
}

impl LabelTable {
    /// Index of every label text.
    pub fn label_index(&self) -> HashMap<&str, usize> {
        self.label_map
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect()
    }
}

/// Numeric order if every id parses as a number, lexicographic otherwise.
fn sort_ids(ids: &mut [String]) {
    if ids.iter().all(|s| s.parse::<f64>().is_ok()) {
        ids.sort_by(|a, b| {
            let (x, y) = (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap());
            x.total_cmp(&y).then_with(|| a.cmp(b))
        });
    } else {
        ids.sort();
    }
}

fn parse_error(path: &Path, message: impl Into<String>) -> MdpdError {
    MdpdError::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads an `item,worker,label` triplet file.
///
/// With a `vocabulary`, labels must come from it and are numbered in its
/// order; otherwise the observed labels are sorted like the ids.
pub fn ingest_labels(path: &Path, vocabulary: Option<&[String]>) -> Result<LabelTable> {
    let file = std::fs::File::open(path).map_err(|e| parse_error(path, format!("cannot open: {e}")))?;
    read_labels(file, path, vocabulary)
}

/// [`ingest_labels`] from any reader; `path` is used in messages only.
pub fn read_labels(reader: impl Read, path: &Path, vocabulary: Option<&[String]>) -> Result<LabelTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_error(path, e.to_string()))?.clone();
    let expected = ["item", "worker", "label"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(parse_error(
            path,
            format!(
                "expected header `item,worker,label`, found `{}`",
                headers.iter().join(",")
            ),
        ));
    }
    let mut cells: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut duplicates = 0usize;
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| parse_error(path, e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let (item, worker, label) = (field(0), field(1), field(2));
        if item.is_empty() || worker.is_empty() || label.is_empty() {
            return Err(parse_error(path, format!("row {}: empty field", line + 2)));
        }
        if cells.insert((item, worker), label).is_some() {
            duplicates += 1;
        }
    }
    if cells.is_empty() {
        return Err(parse_error(path, "no labels"));
    }
    if duplicates > 0 {
        log::warn!(
            "{}: {duplicates} repeated (item, worker) pairs, keeping the last",
            path.display()
        );
    }

    let label_map: Vec<String> = match vocabulary {
        Some(vocab) => {
            let offenders: Vec<String> = cells
                .values()
                .filter(|l| !vocab.contains(l))
                .cloned()
                .sorted()
                .dedup()
                .collect();
            if !offenders.is_empty() {
                return Err(MdpdError::UnknownLabels {
                    path: path.to_path_buf(),
                    offenders,
                });
            }
            vocab.to_vec()
        }
        None => {
            let mut seen: Vec<String> = cells.values().cloned().sorted().dedup().collect();
            sort_ids(&mut seen);
            seen
        }
    };
    let mut item_ids: Vec<String> = cells.keys().map(|(i, _)| i.clone()).sorted().dedup().collect();
    let mut worker_ids: Vec<String> = cells.keys().map(|(_, w)| w.clone()).sorted().dedup().collect();
    sort_ids(&mut item_ids);
    sort_ids(&mut worker_ids);

    let item_pos: HashMap<&str, usize> = item_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let worker_pos: HashMap<&str, usize> = worker_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let label_pos: HashMap<&str, usize> = label_map.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n = item_ids.len();
    let mut entries = vec![MISSING; n * worker_ids.len()];
    for ((item, worker), label) in &cells {
        entries[worker_pos[worker.as_str()] * n + item_pos[item.as_str()]] = label_pos[label.as_str()] as u16;
    }
    let data = LabelMatrix::from_columns(n, worker_ids.len(), label_map.len(), entries)?;
    Ok(LabelTable {
        data,
        item_ids,
        worker_ids,
        label_map,
    })
}

/// Writes observed entries as `item,worker,label` rows, item-major.
pub fn write_labels(table: &LabelTable, writer: impl Write) -> Result<()> {
    let data = &table.data;
    if table.item_ids.len() != data.n_items()
        || table.worker_ids.len() != data.n_workers()
        || table.label_map.len() != data.n_labels()
    {
        return Err(MdpdError::ShapeMismatch("ids do not match the label matrix".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["item", "worker", "label"])?;
    for item in 0..data.n_items() {
        for worker in 0..data.n_workers() {
            if let Some(c) = data.get(item, worker) {
                w.write_record([&table.item_ids[item], &table.worker_ids[worker], &table.label_map[c]])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_labels(table: &LabelTable, path: &Path) -> Result<()> {
    write_labels(table, std::fs::File::create(path)?)
}

/// Ids `1..=n` as text, the convention for generated data.
pub fn numbered_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| i.to_string()).collect()
}
