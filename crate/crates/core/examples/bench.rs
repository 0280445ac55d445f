//! A reduced screening sweep: two regimes, three gamma multipliers, three
//! trials each, written as CSV/JSON artifacts.
//!
//! cargo run --release --example bench -- [out_dir]

use std::path::PathBuf;

use sparsepois::cli::{bench_sweep, write_bench_outputs, BenchConfig, Regime, CSV_HEADER};

fn main() -> sparsepois::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sparsepois_bench"));
    let cfg = BenchConfig {
        m: 1000,
        n: 200,
        k: 10,
        k_true: 10,
        regimes: vec![
            Regime { rho: 0.35, sigma2: 0.01 },
            Regime { rho: 0.7, sigma2: 1.0 },
        ],
        trials: 3,
        ..BenchConfig::default()
    };
    let outcome = bench_sweep(&cfg)?;
    println!("{CSV_HEADER}");
    for row in &outcome.rows {
        println!("{}", row.csv_line());
    }
    write_bench_outputs(&[outcome], &dir)?;
    println!("artifacts in {}", dir.display());
    Ok(())
}
