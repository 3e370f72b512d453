//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Runs without the libtest harness. Failing criteria are printed as FAIL and
//! the process exits 0 so the rest of `cargo test` still runs; set
//! `MDPD_ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.
//!
//! Criterion 7 needs a real dataset: `MDPD_BLUEBIRD_LABELS` (item,worker,label
//! triplets) and `MDPD_BLUEBIRD_TRUTH` (item,label).

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::checks;
use mdpd_core::baselines::{fit_mv_em, refine};
use mdpd_core::crowd::{ingest_labels, predict, prediction_error, Matching};
use mdpd_core::info::{max_triplet, TripletChoice, TripletScore};
use mdpd_core::io::read_item_labels;
use mdpd_core::split::{duplicate_component, numerical_hessian, PairScope, RestrictedObjective};
use mdpd_core::synth::{compute_benchmark, gen_alpha_sparse, gen_decaying, SynthSpec};
use mdpd_core::{
    cmi_tensor, fit_stagewise, init_one_component, posterior, FitConfig, InformativeSet, DEFAULT_SMOOTHING,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Report {
    lines: Vec<(String, Status)>,
}

impl Report {
    fn record(&mut self, id: &str, status: Status, detail: String) {
        let tag = match status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        println!("{tag} {id}: {detail}");
        self.lines.push((id.to_string(), status));
    }

    fn check(&mut self, id: &str, ok: bool, detail: String) {
        self.record(id, if ok { Status::Pass } else { Status::Fail }, detail);
    }

    fn note(&self, id: &str, detail: String) {
        println!("     {id}: {detail}");
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn max_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(f64::INFINITY, f64::min)
}

fn exact_suite(report: &mut Report) {
    let start = Instant::now();
    let worst = max_of((0..100).map(checks::kl_restriction_gap));
    report.check(
        "1a",
        worst <= 1e-10,
        format!("max |KL - KL_S| over 100 instances = {worst:.2e} (tol 1e-10)"),
    );

    let slack = min_of((0..100).map(checks::upper_bound_slack));
    report.check(
        "1b",
        slack >= -1e-10,
        format!("min U - KL_next over 100 instances = {slack:.2e} (tol -1e-10)"),
    );

    let gap = min_of((0..20).map(|s| checks::m_step_optimality_gap(s, 1000)));
    report.check(
        "1c",
        gap >= -1e-9,
        format!("min Q(closed form) - Q(alternative), 20 instances x 1000 = {gap:.2e} (tol -1e-9)"),
    );

    let change = max_of((0..50).map(checks::duplication_change));
    report.check(
        "1d",
        change <= 1e-10,
        format!("max change of cmi_sum / LL over 50 duplications = {change:.2e} (tol 1e-10)"),
    );

    let restriction = max_of((0..100).map(checks::restriction_identity_gap));
    let perfect = max_of((0..100).map(checks::perfect_fit_cmi));
    let secs = start.elapsed().as_secs_f64();
    report.check(
        "1e",
        restriction <= 1e-10 && perfect <= 1e-10 && secs < 60.0,
        format!("restriction identity {restriction:.2e}, perfect-fit cmi_sum {perfect:.2e} (tol 1e-10); suite {secs:.1}s (limit 60s)"),
    );
}

fn cmi_oracle(report: &mut Report) {
    let start = Instant::now();
    let gap = max_of((0..50).map(checks::cmi_oracle_gap));
    let secs = start.elapsed().as_secs_f64();
    report.check(
        "2",
        gap <= 1e-10,
        format!("max |cmi_tensor - naive| over 50 instances = {gap:.2e} (tol 1e-10), {secs:.2}s"),
    );
}

fn hessian(report: &mut Report) {
    let mut rng = StdRng::seed_from_u64(11);
    let mut quad_err: f64 = 0.0;
    for _ in 0..10 {
        let dim = rng.random_range(1..=8);
        let b: Vec<Vec<f64>> = (0..dim)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let a: Vec<Vec<f64>> = (0..dim)
            .map(|i| (0..dim).map(|j| b[i][j] + b[j][i]).collect())
            .collect();
        let g: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |x: &[f64]| {
            let mut v = 0.3;
            for i in 0..dim {
                v += g[i] * x[i];
                for j in 0..dim {
                    v += 0.5 * a[i][j] * x[i] * x[j];
                }
            }
            v
        };
        let h = numerical_hessian(f, dim, 1e-3).unwrap();
        for i in 0..dim {
            for j in 0..dim {
                quad_err = quad_err.max((h[(i, j)] - a[i][j]).abs());
            }
        }
    }

    let mut grad_sup: f64 = 0.0;
    for seed in 0..10 {
        let synth = gen_decaying(&SynthSpec::decaying(seed)).unwrap();
        let model = init_one_component(&synth.data, DEFAULT_SMOOTHING).unwrap();
        let post = posterior(&model, &synth.data, &InformativeSet::new()).unwrap();
        let t = cmi_tensor(&synth.data, &post, DEFAULT_SMOOTHING).unwrap();
        let TripletChoice::Found(tr) = max_triplet(&t, 1e-3, TripletScore::PerComponent).unwrap() else {
            panic!("decaying seed {seed} has no informative pair");
        };
        let set = InformativeSet::from_indices([tr.i, tr.j]).unwrap();
        let dup = duplicate_component(&model, 0).unwrap();
        let obj = RestrictedObjective::new(
            &dup,
            &synth.data,
            &set,
            0,
            1,
            tr.i,
            tr.j,
            PairScope::default(),
            DEFAULT_SMOOTHING,
        )
        .unwrap();
        let grad = common::gradient(|x| obj.eval(x).unwrap(), obj.dim(), 1e-5);
        grad_sup = grad_sup.max(max_of(grad.iter().map(|g| g.abs())));
    }
    report.check(
        "3",
        quad_err <= 1e-6 && grad_sup < 1e-5,
        format!("quadratic recovery max error {quad_err:.2e} (tol 1e-6); saddle gradient sup-norm over 10 splits {grad_sup:.2e} (tol 1e-5)"),
    );
}

fn decaying(report: &mut Report) {
    let (mut iters, mut sizes, mut gaps, mut secs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut top_hits = 0;
    let mut first8 = Vec::new();
    let mut cmi_near = 0;
    let mut first_pair_top5 = 0;
    for seed in 0..10 {
        let synth = gen_decaying(&SynthSpec::decaying(seed)).unwrap();
        let bench = compute_benchmark(&synth.truth_model, &synth.data, &synth.truth, DEFAULT_SMOOTHING).unwrap();
        let config = FitConfig {
            k_target: 3,
            seed,
            ..FitConfig::default()
        };
        let start = Instant::now();
        let fit = fit_stagewise(&synth.data, &config).unwrap();
        secs.push(start.elapsed().as_secs_f64());
        let last = fit.trace.last().unwrap();
        iters.push(fit.trace.iterations() as f64);
        sizes.push(last.set_size as f64);
        gaps.push(last.log_likelihood - bench.log_likelihood);
        if last.max_cmi < bench.max_cmi + 0.02 {
            cmi_near += 1;
        }
        // Workers are numbered by decreasing ability.
        let hits = fit
            .informative_set
            .as_slice()
            .iter()
            .take(8)
            .filter(|&&w| w < 15)
            .count();
        first8.push(hits);
        if hits >= 6 {
            top_hits += 1;
        }
        if let Some(t) = fit.trace.records[0].triplet {
            if t.i < 5 && t.j < 5 {
                first_pair_top5 += 1;
            }
        }
    }
    let (mi, ms) = (median(&iters), median(&sizes));
    let abs_gaps: Vec<f64> = gaps.iter().map(|g| g.abs()).collect();
    let mg = median(&abs_gaps);
    let worst_secs = max_of(secs.iter().copied());
    report.check(
        "4",
        mi <= 20.0 && ms <= 12.0 && mg <= 0.05 && worst_secs < 60.0,
        format!(
            "median iterations {mi} (<= 20), median |S| {ms} (<= 12), median |LL - benchmark| {mg:.3} (<= 0.05), slowest seed {worst_secs:.1}s (< 60s)"
        ),
    );
    report.note("4", format!("iterations per seed {iters:?}; |S| per seed {sizes:?}"));
    report.note(
        "4",
        format!(
            "LL - benchmark per seed {:?}; one-sided (>= -0.05) holds in {}/10",
            gaps.iter().map(|g| (g * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            gaps.iter().filter(|&&g| g >= -0.05).count()
        ),
    );
    report.note(
        "4",
        format!("final max_cmi below benchmark + 0.02 in {cmi_near}/10 seeds"),
    );
    report.note(
        "4",
        format!("first chosen pair within the 5 most able workers in {first_pair_top5}/10 seeds (expected >= 9)"),
    );
    report.check(
        "5",
        top_hits >= 7,
        format!("first 8 of S hold >= 6 of the 15 most able workers in {top_hits}/10 seeds (>= 7); hits per seed {first8:?}"),
    );
}

fn alpha_sparse(report: &mut Report) {
    let start = Instant::now();
    let mut ok = true;
    let mut rows = Vec::new();
    let mut stage_at_005 = f64::NAN;
    let mut mv_at_005 = f64::NAN;
    for alpha in [0.05, 0.10, 0.15, 0.20] {
        let (mut bench, mut full, mut on_set, mut mv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for seed in 0..10 {
            let synth = gen_alpha_sparse(&SynthSpec::alpha_sparse(alpha, seed)).unwrap();
            let b = compute_benchmark(&synth.truth_model, &synth.data, &synth.truth, DEFAULT_SMOOTHING).unwrap();
            let config = FitConfig {
                k_target: 3,
                seed,
                ..FitConfig::default()
            };
            let fit = fit_stagewise(&synth.data, &config).unwrap();
            let (mv_model, _) = fit_mv_em(&synth.data, 3, &config).unwrap();
            let err = |pred: Vec<usize>| prediction_error(&pred, &synth.truth, Matching::BestPermutation).unwrap();
            bench.push(b.error);
            full.push(err(predict(&fit.model, &synth.data, None).unwrap()));
            on_set.push(err(
                predict(&fit.model, &synth.data, Some(&fit.informative_set)).unwrap()
            ));
            mv.push(err(predict(&mv_model, &synth.data, None).unwrap()));
        }
        let (b, s, s_set, m) = (median(&bench), median(&full), median(&on_set), median(&mv));
        ok &= (s - b).abs() <= 0.03;
        if alpha == 0.05 {
            stage_at_005 = s;
            mv_at_005 = m;
        }
        rows.push(format!(
            "alpha {alpha:.2}: benchmark {b:.3} stage-EM {s:.3} (S-posterior {s_set:.3}) MV-EM {m:.3}"
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= stage_at_005 <= mv_at_005 && secs < 600.0;
    report.check(
        "6",
        ok,
        format!(
            "median stage-EM within 0.03 of benchmark at every alpha; at 0.05 stage-EM {stage_at_005:.3} <= MV-EM {mv_at_005:.3}; {secs:.0}s (< 600s)"
        ),
    );
    for row in rows {
        report.note("6", row);
    }
}

fn bluebird(report: &mut Report) {
    let (Some(labels), Some(truth)) = (
        std::env::var_os("MDPD_BLUEBIRD_LABELS"),
        std::env::var_os("MDPD_BLUEBIRD_TRUTH"),
    ) else {
        report.record(
            "7",
            Status::Skip,
            "MDPD_BLUEBIRD_LABELS / MDPD_BLUEBIRD_TRUTH not set".into(),
        );
        return;
    };
    let table = ingest_labels(Path::new(&labels), None).unwrap();
    let index = table.label_index();
    let item_pos: std::collections::HashMap<&str, usize> = table
        .item_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut truth_labels = vec![usize::MAX; table.item_ids.len()];
    for (item, label) in read_item_labels(Path::new(&truth)).unwrap() {
        if let (Some(&pos), Some(&l)) = (item_pos.get(item.as_str()), index.get(label.as_str())) {
            truth_labels[pos] = l;
        }
    }
    let scored: Vec<usize> = (0..truth_labels.len())
        .filter(|&i| truth_labels[i] != usize::MAX)
        .collect();
    let k = table.label_map.len();
    let config = FitConfig {
        k_target: k,
        ..FitConfig::default()
    };
    let fit = fit_stagewise(&table.data, &config).unwrap();
    let (refined, _) = refine(&fit.model, &table.data, &config).unwrap();
    let err = |pred: Vec<usize>| {
        let p: Vec<usize> = scored.iter().map(|&i| pred[i]).collect();
        let t: Vec<usize> = scored.iter().map(|&i| truth_labels[i]).collect();
        prediction_error(&p, &t, Matching::BestPermutation).unwrap()
    };
    let stage = err(predict(&fit.model, &table.data, None).unwrap());
    let stage_set = err(predict(&fit.model, &table.data, Some(&fit.informative_set)).unwrap());
    let refined_err = err(predict(&refined, &table.data, None).unwrap());
    let size = fit.informative_set.len();
    report.check(
        "7",
        stage <= 0.135 && refined_err <= 0.115 && (7..=18).contains(&size),
        format!("stagewise {stage:.4} (<= 0.135; S-posterior {stage_set:.4}), refine {refined_err:.4} (<= 0.115), |S| {size} (7..=18)"),
    );
}

fn mdpd(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_mdpd")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "mdpd {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn determinism(report: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| -> PathBuf { dir.path().join(name) };
    let s = |path: &PathBuf| path.to_str().unwrap().to_string();
    mdpd(&["simulate", "--mode", "decaying", "--seed", "3", "--out", &s(&p("sim"))]);
    let data = s(&p("sim").join("labels.csv"));
    let mut same = true;
    let mut runs = Vec::new();
    for algorithm in ["stagewise", "em-random", "em-mv"] {
        for run in ["a", "b"] {
            let model = s(&p(&format!("{algorithm}-{run}.json")));
            let trace = s(&p(&format!("{algorithm}-{run}.csv")));
            mdpd(&[
                "fit",
                algorithm,
                "--data",
                &data,
                "--k-target",
                "3",
                "--seed",
                "5",
                "--max-iters",
                "30",
                "--out-model",
                &model,
                "--out-trace",
                &trace,
            ]);
        }
        for ext in ["json", "csv"] {
            let a = std::fs::read(p(&format!("{algorithm}-a.{ext}"))).unwrap();
            let b = std::fs::read(p(&format!("{algorithm}-b.{ext}"))).unwrap();
            same &= a == b;
        }
        runs.push(algorithm);
    }
    let from = s(&p("stagewise-a.json"));
    for run in ["a", "b"] {
        mdpd(&[
            "fit",
            "refine",
            "--data",
            &data,
            "--from",
            &from,
            "--max-iters",
            "30",
            "--out-model",
            &s(&p(&format!("refine-{run}.json"))),
            "--out-trace",
            &s(&p(&format!("refine-{run}.csv"))),
        ]);
    }
    for ext in ["json", "csv"] {
        same &= std::fs::read(p(&format!("refine-a.{ext}"))).unwrap()
            == std::fs::read(p(&format!("refine-b.{ext}"))).unwrap();
    }
    runs.push("refine");
    report.check(
        "8",
        same,
        format!("repeated fits byte-identical (model and trace) for {}", runs.join(", ")),
    );
}

fn main() {
    let mut report = Report { lines: Vec::new() };
    let start = Instant::now();
    exact_suite(&mut report);
    cmi_oracle(&mut report);
    hessian(&mut report);
    decaying(&mut report);
    alpha_sparse(&mut report);
    bluebird(&mut report);
    determinism(&mut report);

    let count = |s: Status| report.lines.iter().filter(|(_, st)| *st == s).count();
    let failed: Vec<&str> = report
        .lines
        .iter()
        .filter(|(_, s)| *s == Status::Fail)
        .map(|(id, _)| id.as_str())
        .collect();
    println!(
        "acceptance: {} pass, {} fail {:?}, {} skip ({:.0}s)",
        count(Status::Pass),
        failed.len(),
        failed,
        count(Status::Skip),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() && std::env::var_os("MDPD_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
