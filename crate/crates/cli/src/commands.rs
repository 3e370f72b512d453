use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use mdpd_core::baselines::{fit_em, fit_mv_em, refine, EmInit};
use mdpd_core::crowd::{
    estimate_missing_rates, export_labels, ingest_labels, numbered_ids, predict as predict_labels, prediction_error,
    LabelTable, Matching,
};
use mdpd_core::info::{cmi_tensor, max_cmi_norm, sparsity_diagnostic, SparsityDiagnostic};
use mdpd_core::io::{read_item_labels, save_trace, write_item_labels, ModelDocument, TruthDocument, FORMAT_VERSION};
use mdpd_core::synth::{compute_benchmark, gen_synthetic, SynthMode, SynthSpec};
use mdpd_core::{fit_stagewise, log_likelihood, posterior, FitConfig, FitTrace, InformativeSet, MixtureModel};

use crate::{usage, Algorithm, EvalArgs, FitArgs, MatchingArg, Mode, PosteriorArg, PredictArgs, SimulateArgs};

pub fn synth_spec(args: &SimulateArgs) -> Result<SynthSpec> {
    let mode = match args.mode {
        Mode::AlphaSparse => SynthMode::AlphaSparse {
            alpha: args
                .alpha
                .ok_or_else(|| usage("--alpha is required with --mode alpha-sparse"))?,
            p: args.p,
        },
        Mode::Decaying => SynthMode::Decaying {
            n_informative: args.n_informative,
            p_start: args.p_start,
            p_end: args.p_end,
        },
    };
    let spec = SynthSpec {
        m: args.m,
        n: args.n,
        k: args.k,
        mode,
        seed: args.seed,
    };
    spec.validate()?;
    Ok(spec)
}

/// Label text used for generated data: `1..=k`.
pub fn synthetic_labels(k: usize) -> Vec<String> {
    numbered_ids(k)
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let spec = synth_spec(args)?;
    let synth = gen_synthetic(&spec)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let labels = synthetic_labels(spec.k);
    let table = LabelTable {
        data: synth.data.clone(),
        item_ids: numbered_ids(spec.n),
        worker_ids: numbered_ids(spec.m),
        label_map: labels.clone(),
    };
    export_labels(&table, &args.out.join("labels.csv"))?;
    let truth_text: Vec<String> = synth.truth.iter().map(|&c| labels[c].clone()).collect();
    write_item_labels(&table.item_ids, &truth_text, &args.out.join("truth.csv"))?;

    let benchmark = compute_benchmark(
        &synth.truth_model,
        &synth.data,
        &synth.truth,
        FitConfig::default().smoothing,
    )?;
    let mut model = ModelDocument::new(
        "truth",
        &synth.truth_model,
        &InformativeSet::from_indices(synth.informative_workers.iter().copied())?,
    );
    model.worker_ids = table.worker_ids.clone();
    model.label_map = labels;
    model.config = serde_json::to_value(spec)?;
    let doc = TruthDocument {
        format_version: FORMAT_VERSION,
        spec,
        informative_workers: synth.informative_workers.clone(),
        abilities: synth.abilities.clone(),
        benchmark: benchmark.clone(),
        model,
    };
    doc.save(&args.out.join("truth.json"))?;
    println!(
        "{} items, {} workers, {} classes, {} informative workers; benchmark ll {:.4}, max_cmi {:.4}, error {:.4}",
        spec.n,
        spec.m,
        spec.k,
        synth.informative_workers.len(),
        benchmark.log_likelihood,
        benchmark.max_cmi,
        benchmark.error
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Reads a triplet file and drops workers that labelled nothing.
pub fn load_table(path: &Path, vocabulary: Option<&[String]>) -> Result<LabelTable> {
    let mut table = ingest_labels(path, vocabulary)?;
    let rates = estimate_missing_rates(&table.data)?;
    if !rates.dropped.is_empty() {
        table.worker_ids = table
            .worker_ids
            .iter()
            .enumerate()
            .filter(|(i, _)| !rates.dropped.contains(i))
            .map(|(_, w)| w.clone())
            .collect();
        table.data = rates.data;
    }
    Ok(table)
}

/// Reads data for an existing model: labels numbered by the model's
/// `label_map` and columns ordered by its `worker_ids`.
pub fn load_table_for(doc: &ModelDocument, path: &Path) -> Result<LabelTable> {
    let vocab = (!doc.label_map.is_empty()).then_some(doc.label_map.as_slice());
    let table = ingest_labels(path, vocab)?;
    if doc.worker_ids.is_empty() {
        if table.data.n_workers() != doc.m {
            bail!("model has {} workers, data has {}", doc.m, table.data.n_workers());
        }
        return Ok(table);
    }
    let pos: HashMap<&str, usize> = table
        .worker_ids
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i))
        .collect();
    let missing: Vec<&str> = doc
        .worker_ids
        .iter()
        .map(String::as_str)
        .filter(|w| !pos.contains_key(w))
        .collect();
    if !missing.is_empty() {
        bail!(
            "{}: workers of the model are absent from the data: {missing:?}",
            path.display()
        );
    }
    let extra = table.worker_ids.len() - doc.worker_ids.len();
    if extra > 0 {
        bail!("{}: {extra} workers are not in the model", path.display());
    }
    let order: Vec<usize> = doc.worker_ids.iter().map(|w| pos[w.as_str()]).collect();
    Ok(LabelTable {
        data: table.data.select_workers(&order)?,
        item_ids: table.item_ids,
        worker_ids: doc.worker_ids.clone(),
        label_map: table.label_map,
    })
}

pub fn fit_config(args: &FitArgs) -> Result<FitConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<FitConfig>(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => FitConfig::default(),
    };
    if let Some(v) = args.k_target {
        config.k_target = v;
    }
    if let Some(v) = args.max_iters {
        config.max_iters = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.cmi_threshold {
        config.cmi_threshold = v;
    }
    if let Some(v) = args.ll_tolerance {
        config.ll_tolerance = v;
    }
    if args.split_when_in_set {
        config.split_when_in_set = true;
    }
    config.validate()?;
    Ok(config)
}

pub struct FitResult {
    pub model: MixtureModel,
    /// Empty for fitters whose posterior uses every worker.
    pub set: InformativeSet,
    pub trace: FitTrace,
}

pub fn run_fit(
    algorithm: Algorithm,
    table: &LabelTable,
    config: &FitConfig,
    start: Option<&MixtureModel>,
) -> Result<FitResult> {
    let data = &table.data;
    let (model, set, trace) = match algorithm {
        Algorithm::Stagewise => {
            let fit = fit_stagewise(data, config)?;
            (fit.model, fit.informative_set, fit.trace)
        }
        Algorithm::EmRandom => {
            let (m, t) = fit_em(data, config.k_target, EmInit::Random { seed: config.seed }, config)?;
            (m, InformativeSet::new(), t)
        }
        Algorithm::EmMv => {
            let (m, t) = fit_mv_em(data, config.k_target, config)?;
            (m, InformativeSet::new(), t)
        }
        Algorithm::Refine => {
            let start = start.ok_or_else(|| usage("refine needs --from <model.json>"))?;
            let (m, t) = refine(start, data, config)?;
            (m, InformativeSet::new(), t)
        }
    };
    Ok(FitResult { model, set, trace })
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let config = fit_config(args)?;
    let start_doc = match (&args.from, args.algorithm) {
        (Some(path), _) => Some(ModelDocument::load(path)?),
        (None, Algorithm::Refine) => return Err(usage("refine needs --from <model.json>")),
        (None, _) => None,
    };
    let table = match &start_doc {
        Some(doc) => load_table_for(doc, &args.data)?,
        None => load_table(&args.data, args.labels.as_deref())?,
    };
    let start = start_doc.as_ref().map(ModelDocument::model).transpose()?;
    let result = run_fit(args.algorithm, &table, &config, start.as_ref())?;

    let effective = json!({
        "algorithm": args.algorithm.name(),
        "data": args.data.display().to_string(),
        "labels": args.labels,
        "from": args.from.as_ref().map(|p| p.display().to_string()),
        "fit": config,
    });
    let mut doc = ModelDocument::new(args.algorithm.name(), &result.model, &result.set);
    doc.worker_ids = table.worker_ids.clone();
    doc.label_map = table.label_map.clone();
    doc.config = effective.clone();
    doc.save(&args.out_model)?;
    save_trace(&result.trace, &effective, &args.out_trace)?;

    let last_ll = result
        .trace
        .last()
        .map_or(result.trace.initial_log_likelihood, |r| r.log_likelihood);
    println!(
        "{}: {} iterations, stop {:?}, ll {:.6}, |S| {}, K {}",
        args.algorithm.name(),
        result.trace.iterations(),
        result.trace.stop,
        last_ll,
        result.set.len(),
        result.model.n_components()
    );
    Ok(())
}

/// Workers entering the posterior for the chosen mode.
pub fn posterior_set(doc: &ModelDocument, mode: PosteriorArg) -> Result<InformativeSet> {
    let stored = doc.informative_set()?;
    Ok(match mode {
        PosteriorArg::Informative if !stored.is_empty() => stored,
        _ => InformativeSet::full(doc.m),
    })
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let doc = ModelDocument::load(&args.model)?;
    let model = doc.model()?;
    let table = load_table_for(&doc, &args.data)?;
    let set = posterior_set(&doc, args.posterior)?;
    let pred = predict_labels(&model, &table.data, Some(&set))?;
    let text: Vec<String> = pred.iter().map(|&c| table.label_map[c].clone()).collect();
    match &args.out {
        Some(path) => write_item_labels(&table.item_ids, &text, path)?,
        None => {
            let mut body = String::from("item,label\n");
            for (item, label) in table.item_ids.iter().zip(&text) {
                body.push_str(&format!("{item},{label}\n"));
            }
            crate::emit(&body)?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub algorithm: String,
    pub n_items: usize,
    pub n_workers: usize,
    pub posterior: PosteriorArg,
    pub log_likelihood: f64,
    pub max_cmi: f64,
    pub set_size: usize,
    pub informative_set: Vec<usize>,
    pub sparsity: SparsityDiagnostic,
    /// Present only when truth labels were given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matching: Option<&'static str>,
}

pub fn matching(arg: MatchingArg) -> Matching {
    match arg {
        MatchingArg::Aligned => Matching::Aligned,
        MatchingArg::BestPermutation => Matching::BestPermutation,
    }
}

/// Truth label indices in the table's item order.
pub fn truth_indices(table: &LabelTable, path: &Path) -> Result<Vec<usize>> {
    let rows = read_item_labels(path)?;
    let labels = table.label_index();
    let by_item: HashMap<&str, &str> = rows.iter().map(|(i, l)| (i.as_str(), l.as_str())).collect();
    table
        .item_ids
        .iter()
        .map(|item| {
            let label = by_item
                .get(item.as_str())
                .with_context(|| format!("{}: no truth label for item {item}", path.display()))?;
            labels
                .get(label)
                .copied()
                .with_context(|| format!("{}: truth label `{label}` is not a model label", path.display()))
        })
        .collect()
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let doc = ModelDocument::load(&args.model)?;
    let model = doc.model()?;
    let table = load_table_for(&doc, &args.data)?;
    let data = &table.data;
    let set = posterior_set(&doc, args.posterior)?;
    let post = posterior(&model, data, &set)?;
    let tensor = cmi_tensor(data, &post, FitConfig::default().smoothing)?;
    let (error, matching_name) = match &args.truth {
        Some(path) => {
            let truth = truth_indices(&table, path)?;
            let pred = predict_labels(&model, data, Some(&set))?;
            let name = match args.matching {
                MatchingArg::Aligned => "aligned",
                MatchingArg::BestPermutation => "best-permutation",
            };
            (
                Some(prediction_error(&pred, &truth, matching(args.matching))?),
                Some(name),
            )
        }
        None => (None, None),
    };
    let report = EvalReport {
        format_version: FORMAT_VERSION,
        algorithm: doc.algorithm.clone(),
        n_items: data.n_items(),
        n_workers: data.n_workers(),
        posterior: args.posterior,
        log_likelihood: log_likelihood(&model, data)?,
        max_cmi: max_cmi_norm(&tensor),
        set_size: doc.informative_set.len(),
        informative_set: doc.informative_set.clone(),
        sparsity: sparsity_diagnostic(&model, args.l0_threshold, args.lambda),
        error,
        matching: matching_name,
    };
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.out {
        std::fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    crate::emit(&format!("{text}\n"))
}
