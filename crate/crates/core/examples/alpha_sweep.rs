//! Prediction error on the alpha-sparse benchmark.
//!
//! Run: cargo run --release -p mdpd-core --example alpha_sweep -- [seeds] [alpha]

use mdpd_core::baselines::fit_mv_em;
use mdpd_core::crowd::{predict, prediction_error, Matching};
use mdpd_core::synth::{compute_benchmark, gen_alpha_sparse, SynthSpec};
use mdpd_core::{fit_stagewise, FitConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn main() -> mdpd_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let alphas = match args.next().and_then(|a| a.parse().ok()) {
        Some(a) => vec![a],
        None => vec![0.05, 0.10, 0.15, 0.20],
    };
    for alpha in alphas {
        let (mut bench, mut on_set, mut full, mut mv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for seed in 0..seeds {
            let synth = gen_alpha_sparse(&SynthSpec::alpha_sparse(alpha, seed))?;
            let b = compute_benchmark(&synth.truth_model, &synth.data, &synth.truth, 1e-6)?;
            let config = FitConfig {
                k_target: 3,
                seed,
                ..FitConfig::default()
            };
            let fit = fit_stagewise(&synth.data, &config)?;
            let (mv_model, _) = fit_mv_em(&synth.data, 3, &config)?;
            let err = |pred: Vec<usize>| prediction_error(&pred, &synth.truth, Matching::BestPermutation);
            bench.push(b.error);
            on_set.push(err(predict(&fit.model, &synth.data, Some(&fit.informative_set))?)?);
            full.push(err(predict(&fit.model, &synth.data, None)?)?);
            mv.push(err(predict(&mv_model, &synth.data, None)?)?);
            println!(
                "alpha {alpha:.2} seed {seed}: bench {:.3} stage {:.3} (S-posterior {:.3}, |S| {}) mv-em {:.3}",
                b.error,
                full.last().unwrap(),
                on_set.last().unwrap(),
                fit.informative_set.len(),
                mv.last().unwrap()
            );
        }
        println!(
            "alpha {alpha:.2} medians: bench {:.3} stage {:.3} stage-S {:.3} mv-em {:.3}",
            median(bench),
            median(full),
            median(on_set),
            median(mv)
        );
    }
    Ok(())
}
