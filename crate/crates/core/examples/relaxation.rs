//! Solves the perspective relaxation, recovers the dual vector and compares
//! the certified bound with the big-M relaxation.

use sparsepois::dataset::{generate_synthetic, GenerationConfig};
use sparsepois::relax::{bigm_relaxation_bound, recover_dual, rp_lambda_value, solve_relaxation};

fn main() -> sparsepois::Result<()> {
    let d = generate_synthetic(&GenerationConfig::new(300, 120, 6, 0.7, 0.1, 10, 3)?)?;
    let (k, gamma) = (6, 1.0 / (d.n() as f64).sqrt());

    let sol = solve_relaxation(&d, gamma, k, &[], &[])?;
    println!(
        "relaxation value {:.9} after {} iterations (duality gap {:.1e})",
        sol.value, sol.solver_stats.iterations, sol.solver_stats.duality_gap
    );
    let mut top: Vec<(usize, f64)> = sol.z_star.iter().copied().enumerate().collect();
    top.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("largest z: {:?}", &top[..k.min(top.len())]);

    let cert = recover_dual(&sol, &d, gamma)?;
    println!("certified lower bound {:.9} (theta_k {:.3e}, theta_k+1 {:.3e})", cert.v_lower, cert.theta_k, cert.theta_k1);
    let direct = rp_lambda_value(&cert.lambda_bar, &d, gamma, k)?;
    println!("Lagrangian value at the dual vector {direct:.9}");

    let bigm = bigm_relaxation_bound(&d, gamma, k, 2.0)?;
    println!("big-M (M = 2) relaxation {bigm:.9}");
    Ok(())
}
