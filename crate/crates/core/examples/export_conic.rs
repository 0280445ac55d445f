//! Builds the mixed-integer conic model, screens first to add fixing rows,
//! writes it in the text format and parses it back.
//!
//! cargo run --release --example export_conic -- [out.txt]

use std::path::PathBuf;

use sparsepois::conic::{build_conic_model, export_model, import_model};
use sparsepois::dataset::{generate_synthetic, GenerationConfig};
use sparsepois::screen::safe_screen;

fn main() -> sparsepois::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sparsepois_model.txt"));
    let d = generate_synthetic(&GenerationConfig::new(50, 30, 3, 0.35, 0.01, 10, 9)?)?;
    let gamma = 1.0 / (d.n() as f64).sqrt();

    let res = safe_screen(&d, gamma, 3)?;
    let model = build_conic_model(&d, gamma, 3, &res.fixed0, &res.fixed1)?;
    println!(
        "{} exponential cones, {} rotated quadratic cones, {} linear rows",
        model.exp_cones.len(),
        model.rq_cones.len(),
        model.linear_rows.len()
    );
    export_model(&model, &out)?;
    assert_eq!(import_model(&out)?, model);
    println!("wrote {}", out.display());
    for line in std::fs::read_to_string(&out)?.lines().take(7) {
        println!("  {}", &line[..line.len().min(100)]);
    }
    Ok(())
}
