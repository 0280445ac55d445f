//! Exact best-subset Poisson regression by branch-and-bound, checked
//! against brute-force enumeration on a small instance.

use sparsepois::bnb::{branch_and_bound, exhaustive_solve, BnbOptions};
use sparsepois::dataset::{generate_synthetic, GenerationConfig};

fn main() -> sparsepois::Result<()> {
    let small = generate_synthetic(&GenerationConfig::new(12, 40, 3, 0.7, 0.1, 10, 5)?)?;
    let exact = exhaustive_solve(&small, 1.0, 3)?;
    let bnb = branch_and_bound(&small, 1.0, 3, &BnbOptions::default())?;
    println!("enumeration: {:?} -> {:.10}", exact.support, exact.obj.unwrap());
    println!("branch-and-bound: {:?} -> {:.10} ({} nodes)", bnb.support, bnb.obj.unwrap(), bnb.nodes);

    let d = generate_synthetic(&GenerationConfig::new(1000, 200, 10, 0.35, 0.01, 10, 1)?)?;
    let gamma = 1.0 / (d.n() as f64).sqrt();
    let opts = BnbOptions {
        time_limit_s: Some(60.0),
        ..BnbOptions::default()
    };
    let rep = branch_and_bound(&d, gamma, 10, &opts)?;
    println!(
        "m = 1000: status {:?}, gap {:.3e}%, {} nodes, {:.2}s",
        rep.status, rep.gap_percent, rep.nodes, rep.wall_time_s
    );
    println!("selected features: {:?}", rep.support);
    println!("true features:     {:?}", d.meta().expect("synthetic").true_support);
    Ok(())
}
