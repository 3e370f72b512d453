//! Decaying-benchmark summary over seeds.
//!
//! Run: cargo run --release -p mdpd-core --example sweep -- [seeds] [retry]

use mdpd_core::synth::{compute_benchmark, gen_decaying, SynthSpec};
use mdpd_core::{fit_stagewise, FitConfig};

fn main() -> mdpd_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let retry = args.next().is_some_and(|s| s == "retry");
    for seed in 0..seeds {
        let synth = gen_decaying(&SynthSpec::decaying(seed))?;
        let bench = compute_benchmark(&synth.truth_model, &synth.data, &synth.truth, 1e-6)?;
        let config = FitConfig {
            k_target: 3,
            seed,
            split_when_in_set: retry,
            ..FitConfig::default()
        };
        let fit = fit_stagewise(&synth.data, &config)?;
        let last = fit.trace.last().expect("at least one iteration");
        let first8 = fit
            .informative_set
            .as_slice()
            .iter()
            .take(8)
            .filter(|&&w| w < 15)
            .count();
        println!(
            "seed {seed}: iters {:>3} |S| {:>2} top15-of-first8 {} ll gap {:+.4} stop {:?}",
            fit.trace.iterations(),
            last.set_size,
            first8,
            last.log_likelihood - bench.log_likelihood,
            fit.trace.stop
        );
    }
    Ok(())
}
