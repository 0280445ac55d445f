//! Draws a synthetic count dataset and writes it as CSV.
//!
//! cargo run --release --example generate -- [out.csv]

use std::path::PathBuf;

use sparsepois::dataset::{generate_synthetic, load_csv, save_csv, GenerationConfig};

fn main() -> sparsepois::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sparsepois_demo.csv"));

    let cfg = GenerationConfig::new(200, 100, 5, 0.35, 0.01, 10, 42)?;
    let d = generate_synthetic(&cfg)?;
    let meta = d.meta().expect("generated data carries metadata");
    println!("n = {}, m = {}, mean count = {:.3}", d.n(), d.m(), d.mean_count());
    println!("true support: {:?}", meta.true_support);

    save_csv(&d, &out)?;
    let back = load_csv(&out)?;
    assert_eq!(back, d);
    println!("wrote {} (and its .meta.json sidecar)", out.display());
    Ok(())
}
