//! Stagewise EM on the decaying-ability synthetic benchmark.
//!
//! Run: cargo run --release -p mdpd-core --example decaying -- [seed]

use mdpd_core::synth::{compute_benchmark, gen_decaying, SynthSpec};
use mdpd_core::{fit_stagewise, FitConfig};

fn main() -> mdpd_core::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let synth = gen_decaying(&SynthSpec::decaying(seed))?;
    let bench = compute_benchmark(&synth.truth_model, &synth.data, &synth.truth, 1e-6)?;
    println!(
        "benchmark: ll {:.4} max_cmi {:.4} error {:.3}",
        bench.log_likelihood, bench.max_cmi, bench.error
    );
    let config = FitConfig {
        k_target: 3,
        seed,
        ..FitConfig::default()
    };
    let start = std::time::Instant::now();
    let fit = fit_stagewise(&synth.data, &config)?;
    for r in &fit.trace.records {
        println!(
            "{:>3} ll {:.4} max_cmi {:.4} |S| {:>2} K {} triplet {:?} split {:?} ({:.0} ms)",
            r.iteration,
            r.log_likelihood,
            r.max_cmi,
            r.set_size,
            r.n_components,
            r.triplet.map(|t| (t.i, t.j, t.k, (t.value * 1e4).round() / 1e4)),
            r.split,
            r.wall_time_ms
        );
    }
    println!(
        "stop {:?}, S = {:?}, {:.1}s",
        fit.trace.stop,
        fit.informative_set.as_slice(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
