//! Model documents and trace tables.
//!
//! Every document carries `format_version`. Worker, component and category
//! indices are 0-based positions; original identifiers travel alongside in
//! `worker_ids` and `label_map`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MdpdError, Result};
use crate::info::InformativeSet;
use crate::model::{FrozenCoords, MixtureModel};
use crate::split::SplitKind;
use crate::stagewise::{FitTrace, StopReason};
use crate::synth::{Benchmark, SynthSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenDocument {
    /// `[m][r]`
    pub mask: Vec<Vec<bool>>,
    /// `[m][r]`, meaningful where `mask` is set.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    /// Fitter that produced the model.
    pub algorithm: String,
    pub k: usize,
    pub m: usize,
    pub r: usize,
    pub weights: Vec<f64>,
    /// `[k][m][r]`
    pub conditionals: Vec<Vec<Vec<f64>>>,
    pub frozen: Option<FrozenDocument>,
    /// Insertion order; empty for models fitted without one.
    pub informative_set: Vec<usize>,
    #[serde(default)]
    pub worker_ids: Vec<String>,
    /// Text of each data label, in category order.
    #[serde(default)]
    pub label_map: Vec<String>,
    /// Effective configuration of the run.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl ModelDocument {
    pub fn new(algorithm: &str, model: &MixtureModel, set: &InformativeSet) -> Self {
        let frozen = model.frozen().map(|f| {
            let (m, r) = (f.n_workers(), f.n_categories());
            FrozenDocument {
                mask: (0..m).map(|i| (0..r).map(|c| f.is_frozen(i, c)).collect()).collect(),
                values: (0..m)
                    .map(|i| {
                        (0..r)
                            .map(|c| if f.is_frozen(i, c) { f.value(i, c) } else { 0.0 })
                            .collect()
                    })
                    .collect(),
            }
        });
        Self {
            format_version: FORMAT_VERSION,
            algorithm: algorithm.to_string(),
            k: model.n_components(),
            m: model.n_workers(),
            r: model.n_categories(),
            weights: model.weights().to_vec(),
            conditionals: model.conditionals_nested(),
            frozen,
            informative_set: set.as_slice().to_vec(),
            worker_ids: Vec::new(),
            label_map: Vec::new(),
            config: serde_json::Value::Null,
        }
    }

    pub fn model(&self) -> Result<MixtureModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(MdpdError::InvalidModel(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.conditionals.len() != self.k
            || self
                .conditionals
                .iter()
                .any(|c| c.len() != self.m || c.iter().any(|row| row.len() != self.r))
        {
            return Err(MdpdError::ShapeMismatch(format!(
                "conditionals must be [{}][{}][{}]",
                self.k, self.m, self.r
            )));
        }
        let frozen = match &self.frozen {
            None => None,
            Some(f) => Some(FrozenCoords::new(
                self.m,
                self.r,
                f.mask.iter().flatten().copied().collect(),
                f.values.iter().flatten().copied().collect(),
            )?),
        };
        MixtureModel::from_nested(self.weights.clone(), &self.conditionals, frozen)
    }

    pub fn informative_set(&self) -> Result<InformativeSet> {
        if let Some(&bad) = self.informative_set.iter().find(|&&i| i >= self.m) {
            return Err(MdpdError::InvalidModel(format!(
                "informative worker {bad} out of range"
            )));
        }
        InformativeSet::from_indices(self.informative_set.iter().copied())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MdpdError::Parse {
            path: path.to_path_buf(),
            message: format!("cannot read: {e}"),
        })?;
        serde_json::from_str(&text).map_err(|e| MdpdError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Generating model and metadata of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub format_version: u32,
    pub spec: SynthSpec,
    pub informative_workers: Vec<usize>,
    pub abilities: Vec<f64>,
    pub benchmark: Benchmark,
    pub model: ModelDocument,
}

impl TruthDocument {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MdpdError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub const TRACE_COLUMNS: [&str; 11] = [
    "iteration",
    "ll",
    "max_cmi",
    "set_size",
    "n_components",
    "i",
    "j",
    "k",
    "cmi",
    "added",
    "split",
];

fn stop_name(stop: Option<StopReason>) -> &'static str {
    match stop {
        Some(StopReason::CmiBelowThreshold) => "cmi-below-threshold",
        Some(StopReason::LikelihoodStalled) => "likelihood-stalled",
        Some(StopReason::MaxIters) => "max-iters",
        None => "none",
    }
}

fn split_name(kind: SplitKind) -> &'static str {
    match kind {
        SplitKind::Eigen => "eigen",
        SplitKind::RandomFallback => "random",
        SplitKind::Unperturbed => "unperturbed",
    }
}

/// Writes the trace as comma-separated rows after `#` header lines holding
/// the format version, the stop reason, the starting log-likelihood and the
/// effective configuration. Wall times are left out so that repeated runs
/// produce identical files.
pub fn write_trace(trace: &FitTrace, config: &serde_json::Value, out: impl Write) -> Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "# format_version={FORMAT_VERSION}")?;
    writeln!(out, "# stop={}", stop_name(trace.stop))?;
    writeln!(out, "# initial_ll={}", trace.initial_log_likelihood)?;
    writeln!(out, "# config={}", serde_json::to_string(config)?)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for r in &trace.records {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let t = r.triplet;
        w.write_record([
            r.iteration.to_string(),
            r.log_likelihood.to_string(),
            r.max_cmi.to_string(),
            r.set_size.to_string(),
            r.n_components.to_string(),
            opt(t.map(|t| t.i.to_string())),
            opt(t.map(|t| t.j.to_string())),
            opt(t.map(|t| t.k.to_string())),
            opt(t.map(|t| t.value.to_string())),
            r.added.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" "),
            opt(r.split.map(|s| split_name(s).to_string())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(trace: &FitTrace, config: &serde_json::Value, path: &Path) -> Result<()> {
    write_trace(trace, config, std::fs::File::create(path)?)
}

/// One parsed trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub max_cmi: f64,
    pub set_size: usize,
    pub n_components: usize,
    pub triplet: Option<(usize, usize, usize, f64)>,
}

/// Reads the rows of a trace written by [`write_trace`].
pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let parse = |message: String| MdpdError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| parse(e.to_string()))?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse(e.to_string()))?;
        let get = |i: usize| record.get(i).unwrap_or("");
        let num = |i: usize| {
            get(i)
                .parse::<f64>()
                .map_err(|_| parse(format!("bad number `{}`", get(i))))
        };
        let int = |i: usize| {
            get(i)
                .parse::<usize>()
                .map_err(|_| parse(format!("bad integer `{}`", get(i))))
        };
        let triplet = if get(5).is_empty() {
            None
        } else {
            Some((int(5)?, int(6)?, int(7)?, num(8)?))
        };
        rows.push(TraceRow {
            iteration: int(0)?,
            log_likelihood: num(1)?,
            max_cmi: num(2)?,
            set_size: int(3)?,
            n_components: int(4)?,
            triplet,
        });
    }
    Ok(rows)
}

/// Writes `item,label` rows.
pub fn write_item_labels(item_ids: &[String], labels: &[String], path: &Path) -> Result<()> {
    if item_ids.len() != labels.len() {
        return Err(MdpdError::ShapeMismatch("one label per item expected".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["item", "label"])?;
    for (item, label) in item_ids.iter().zip(labels) {
        w.write_record([item, label])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `item,label` rows in file order.
pub fn read_item_labels(path: &Path) -> Result<Vec<(String, String)>> {
    let parse = |message: String| MdpdError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| parse(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["item", "label"] {
        return Err(parse("expected header `item,label`".into()));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse(e.to_string()))?;
        out.push((record[0].to_string(), record[1].to_string()));
    }
    if out.is_empty() {
        return Err(parse("no labels".into()));
    }
    Ok(out)
}
