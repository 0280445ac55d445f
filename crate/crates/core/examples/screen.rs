//! Safe screening on a full-size instance: m = 10000 candidate features.
//!
//! cargo run --release --example screen -- [n] [gamma multiplier] [seed]

use sparsepois::dataset::{generate_synthetic, GenerationConfig};
use sparsepois::screen::safe_screen;

fn main() -> sparsepois::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, default: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let n = arg(1, 2000.0) as usize;
    let mult = arg(2, 1.0);
    let seed = arg(3, 1.0) as u64;

    let d = generate_synthetic(&GenerationConfig::new(10_000, n, 30, 0.35, 0.01, 10, seed)?)?;
    let gamma = mult / (n as f64).sqrt();
    let res = safe_screen(&d, gamma, 30)?;

    let truth = &d.meta().expect("synthetic").true_support;
    let recovered = res.fixed1.iter().filter(|j| truth.contains(j)).count();
    println!("fixed to one: {}  fixed to zero: {}", res.fixed1.len(), res.fixed0.len());
    println!("ub {:.9}  certified lower bound {:.9}", res.ub, res.certificate.v_lower);
    println!("{recovered} of the {} true features are fixed to one", truth.len());
    println!("{}", serde_json::to_string(&res.timings).expect("serializable"));
    Ok(())
}
