//! Sensitivity of <cos(4 x2)> for the baker map along s = s1 = s2, printed
//! for every truncation K in the default grid.
//!
//! `cargo run --release -p s3-core --example baker_sensitivity -- 0.1 1000000`

use s3_core::{run, Baker64, Cos4X2, S3Config};

fn main() {
    let mut args = std::env::args().skip(1);
    let s: f64 = args.next().map_or(0.1, |a| a.parse().expect("s"));
    let n: usize = args.next().map_or(1_000_000, |a| a.parse().expect("N"));

    let cfg = S3Config {
        n_steps: n,
        seed: 0,
        ..S3Config::default()
    };
    let r = run(&Baker64::symmetric(s), &Cos4X2, &cfg).expect("run failed");
    println!(
        "s = {s}, N = {n}, stable part {:.6} ± {:.6}",
        r.stable, r.stable_stderr
    );
    println!(
        "{:>3}  {:>10}  {:>10}  {:>9}",
        "K", "unstable", "total", "stderr"
    );
    for (i, k) in r.k_grid.iter().enumerate() {
        println!(
            "{k:>3}  {:>10.6}  {:>10.6}  {:>9.6}",
            r.unstable_by_k[i], r.total_by_k[i], r.stderr_by_k[i]
        );
    }
    println!(
        "heuristic pick K = {}: {:.6} ± {:.6}",
        r.selected_k, r.total, r.stderr
    );
}
