//! Continuous perspective relaxation of the cardinality-constrained problem.
//!
//! The relaxation is
//!
//! ```text
//! min_{w,b,z}  L(w, b) + (1/γ) Σ_j w_j² / z_j   s.t.  Σ z_j ≤ k,  0 ≤ z ≤ 1,
//! ```
//!
//! optionally with some `z_j` pinned to 0 or 1. Minimizing out `z` leaves
//! `L(w, b) + (1/γ) Ω_k(w)` where `Ω_k(w)` is the capped-simplex water-filling
//! value of `|w|`. Dualizing the budget with a multiplier `ν ≥ 0` turns each
//! coordinate into the reverse-Huber penalty `min_{z∈[0,1]} w²/z + νz`, whose
//! prox is closed form; the prox of `Ω_k` is that prox at the `ν` that makes
//! the budget tight. The outer solver is accelerated proximal gradient with
//! backtracking and function-value restarts.
//!
//! Every iterate `w` yields a certified lower bound: re-optimizing the
//! intercept in closed form gives `b°`, and `λ̄ = −γ ∇_w L(w, b°)` makes
//! `(w, b°)` an exact stationary point of `L + λ̄ᵀw/γ`, so
//!
//! ```text
//! v(RP(λ̄)) = L(w, b°) + λ̄ᵀw/γ − (1/4γ) · (sum of the k largest λ̄_j²)
//! ```
//!
//! is the exact value of the Lagrangian relaxation at `λ̄`. The solver stops
//! when the primal value minus this bound is below the requested tolerance.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::norm2_sq;
use crate::loss::{Coefficients, PoissonTerms, SmoothFit, SmoothOptions};

/// Result of minimizing `Σ mag_j² / z_j` over the capped simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Waterfill {
    pub z: Vec<f64>,
    /// Level with `z_j = min(1, mag_j / theta)`; zero when the budget is slack.
    pub theta: f64,
    pub value: f64,
}

/// Minimizes `Σ_j mag_j² / z_j` subject to `Σ z_j ≤ k`, `0 ≤ z ≤ 1`, with
/// `0/0 = 0`.
pub fn capped_simplex_waterfill(mag: &[f64], k: usize) -> Waterfill {
    assert!(mag.iter().all(|&v| v >= 0.0), "magnitudes must be non-negative");
    let mut order: Vec<usize> = (0..mag.len()).filter(|&j| mag[j] > 0.0).collect();
    let nnz = order.len();
    if nnz <= k {
        let z = mag.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        return Waterfill {
            z,
            theta: 0.0,
            value: norm2_sq(mag),
        };
    }
    order.sort_unstable_by(|&a, &b| mag[b].total_cmp(&mag[a]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&j| mag[j]).collect();

    // With p saturated entries the level is tail_sum / (k - p); pick the p
    // for which exactly the first p magnitudes sit at or above it.
    let mut tail: f64 = sorted.iter().sum();
    let mut head_sq = 0.0;
    let mut theta = 0.0;
    let mut saturated = 0;
    for p in 0..k {
        let level = tail / (k - p) as f64;
        if sorted[p] <= level {
            theta = level;
            saturated = p;
            break;
        }
        head_sq += sorted[p] * sorted[p];
        tail -= sorted[p];
        // p = k - 1 always terminates: sorted[k-1] > level would force the
        // remaining tail to exceed itself.
        if p + 1 == k {
            theta = tail.max(f64::MIN_POSITIVE);
            saturated = k;
        }
    }
    let z = mag
        .iter()
        .map(|&v| if v > 0.0 { (v / theta).min(1.0) } else { 0.0 })
        .collect();
    let value = head_sq + theta * theta * (k - saturated) as f64;
    Waterfill { z, theta, value }
}

/// `min_{z∈[0,1]} (w²/z + νz)`: `2√ν|w|` for `|w| ≤ √ν`, else `w² + ν`.
pub fn reverse_huber(w: f64, nu: f64) -> f64 {
    let s = nu.sqrt();
    let a = w.abs();
    if a <= s {
        2.0 * s * a
    } else {
        w * w + nu
    }
}

/// `argmin_x ½(x − u)² + t·reverse_huber(x, ν)`.
///
/// The soft-threshold branch holds for `|u| ≤ √ν(1 + 2t)` and the shrinkage
/// branch beyond it; the penalty is C¹ at `|x| = √ν`, so the two branches
/// meet continuously and no objective comparison is needed.
pub fn reverse_huber_prox(u: f64, t: f64, nu: f64) -> f64 {
    let s = nu.sqrt();
    if u.abs() >= s * (1.0 + 2.0 * t) {
        u / (1.0 + 2.0 * t)
    } else {
        u.signum() * (u.abs() - 2.0 * t * s).max(0.0)
    }
}

/// Prox of `tau · Ω_budget` applied to `u` in place. Returns the multiplier
/// `ν` of the budget constraint.
fn perspective_prox(u: &mut [f64], tau: f64, budget: usize) -> f64 {
    if budget == 0 {
        u.iter_mut().for_each(|v| *v = 0.0);
        return f64::INFINITY;
    }
    let nnz = u.iter().filter(|&&v| v != 0.0).count();
    if nnz <= budget {
        u.iter_mut().for_each(|v| *v /= 1.0 + 2.0 * tau);
        return 0.0;
    }
    // z_j(r) = clip(|u_j| r − 2τ, 0, 1) with r = 1/√ν; Σ z_j(r) is piecewise
    // linear and increasing, so sweep its breakpoints.
    let mut events: Vec<(f64, f64, bool)> = Vec::with_capacity(2 * nnz);
    for &v in u.iter() {
        let a = v.abs();
        if a > 0.0 {
            events.push((2.0 * tau / a, a, true));
            events.push(((1.0 + 2.0 * tau) / a, a, false));
        }
    }
    events.sort_unstable_by(|x, y| x.0.total_cmp(&y.0));
    let target = budget as f64;
    let (mut n_sat, mut n_lin, mut slope) = (0.0, 0.0, 0.0);
    let mut r = f64::NAN;
    for &(at, a, enters) in &events {
        let level = n_sat + slope * at - 2.0 * tau * n_lin;
        if level >= target && slope > 0.0 {
            r = (target - n_sat + 2.0 * tau * n_lin) / slope;
            break;
        }
        if enters {
            n_lin += 1.0;
            slope += a;
        } else {
            n_lin -= 1.0;
            slope -= a;
            n_sat += 1.0;
        }
    }
    if !r.is_finite() {
        // Budget met only at the last breakpoint.
        r = events.last().map_or(f64::INFINITY, |e| e.0);
    }
    let nu = 1.0 / (r * r);
    u.iter_mut().for_each(|v| *v = reverse_huber_prox(*v, tau, nu));
    nu
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxOptions {
    /// Stop when primal value minus certified bound ≤ `tol_rel · max(1, |value|)`.
    pub tol_rel: f64,
    pub max_iter: usize,
    /// Iterations between duality-gap checks.
    pub check_every: usize,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self {
            tol_rel: 1e-8,
            max_iter: 20_000,
            check_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    /// Norm of the last proximal-gradient step divided by its step size.
    pub grad_norm: f64,
    /// Primal value minus the certified bound at the returned point.
    pub duality_gap: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationSolution {
    pub w_star: Vec<f64>,
    pub b_star: f64,
    pub z_star: Vec<f64>,
    pub value: f64,
    /// Budget multiplier of the free block (`θ²` of its water-filling).
    pub nu: f64,
    pub k: usize,
    pub fixed0: Vec<usize>,
    pub fixed1: Vec<usize>,
    pub solver_stats: SolverStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationCertificate {
    /// Dual vector, zero on coordinates fixed to zero.
    pub lambda_bar: Vec<f64>,
    /// Intercept re-optimized at `w_star`.
    pub b_circ: f64,
    /// `λ̄_j²` over the free coordinates, sorted descending.
    pub theta: Vec<f64>,
    /// `θ_k` and `θ_{k+1}` for the free budget (`θ_{k+1} = 0` past the end).
    pub theta_k: f64,
    pub theta_k1: f64,
    /// Free-coordinate budget `k − |fixed1|`.
    pub budget: usize,
    /// `v(RP(λ̄))` before the safety margin.
    pub value: f64,
    pub v_lower: f64,
    pub slack_applied: f64,
}

/// Safety margin subtracted from certified bounds.
pub fn safety_slack(value: f64) -> f64 {
    1e-9 * (1.0 + value.abs())
}

/// Validated split of coordinates into fixed-zero, fixed-one and free.
#[derive(Debug, Clone)]
pub(crate) struct Partition {
    pub(crate) fixed0: Vec<usize>,
    pub(crate) fixed1: Vec<usize>,
    /// Columns kept in the working problem (complement of `fixed0`), ascending.
    pub(crate) active: Vec<usize>,
    /// For each active column: true if fixed to one.
    pub(crate) active_is_one: Vec<bool>,
    pub(crate) budget: usize,
}

impl Partition {
    pub(crate) fn new(m: usize, k: usize, fixed0: &[usize], fixed1: &[usize]) -> Result<Self> {
        let mut state = vec![0u8; m];
        for (set, tag) in [(fixed0, 1u8), (fixed1, 2u8)] {
            for &j in set {
                if j >= m {
                    return Err(Error::DimensionMismatch(format!(
                        "fixed index {j} out of range for {m} features"
                    )));
                }
                if state[j] != 0 && state[j] != tag {
                    return Err(Error::InvalidConfig(format!(
                        "index {j} is fixed to both zero and one"
                    )));
                }
                state[j] = tag;
            }
        }
        let mut f0: Vec<usize> = (0..m).filter(|&j| state[j] == 1).collect();
        let f1: Vec<usize> = (0..m).filter(|&j| state[j] == 2).collect();
        if f1.len() > k {
            return Err(Error::InfeasibleFixing {
                fixed_one: f1.len(),
                k,
            });
        }
        f0.sort_unstable();
        let active: Vec<usize> = (0..m).filter(|&j| state[j] != 1).collect();
        let active_is_one = active.iter().map(|&j| state[j] == 2).collect();
        Ok(Self {
            budget: k - f1.len(),
            fixed0: f0,
            fixed1: f1,
            active,
            active_is_one,
        })
    }
}

/// Nonsmooth part `(1/γ)[Σ_{fixed1} w_j² + Ω_budget(w_free)]` on the active
/// columns.
fn penalty(w: &[f64], part: &Partition, gamma: f64) -> (f64, Waterfill) {
    let mut ones = 0.0;
    let mut free = Vec::with_capacity(w.len());
    for (&v, &is_one) in w.iter().zip(&part.active_is_one) {
        if is_one {
            ones += v * v;
        } else {
            free.push(v.abs());
        }
    }
    let wf = capped_simplex_waterfill(&free, part.budget);
    ((ones + wf.value) / gamma, wf)
}

fn prox_step(u: &mut [f64], step: f64, part: &Partition, gamma: f64) -> f64 {
    let tau = step / gamma;
    let mut free: Vec<f64> = Vec::with_capacity(u.len());
    for (v, &is_one) in u.iter_mut().zip(&part.active_is_one) {
        if is_one {
            *v /= 1.0 + 2.0 * tau;
        } else {
            free.push(*v);
        }
    }
    let nu = perspective_prox(&mut free, tau, part.budget);
    let mut it = free.into_iter();
    for (v, &is_one) in u.iter_mut().zip(&part.active_is_one) {
        if !is_one {
            *v = it.next().expect("free count");
        }
    }
    nu
}

/// Sum of the `count` largest entries.
fn top_sum(values: &[f64], count: usize) -> f64 {
    if count >= values.len() {
        return values.iter().sum();
    }
    if count == 0 {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.select_nth_unstable_by(count - 1, |a, b| b.total_cmp(a));
    v[..count].iter().sum()
}

/// Dual certificate at the working point `w` of the reduced problem.
struct WorkingCert {
    b_circ: f64,
    lambda: Vec<f64>,
    loss: f64,
    value: f64,
}

fn certify(
    data: &Dataset,
    terms: &PoissonTerms,
    w: &[f64],
    part: &Partition,
    gamma: f64,
) -> Result<WorkingCert> {
    let eta0 = data.linear_predictors(w, 0.0);
    let b_circ = terms.intercept_shift(&eta0)?;
    let eta: Vec<f64> = eta0.iter().map(|e| e + b_circ).collect();
    let mut resid = vec![0.0; data.n()];
    let loss = terms.residuals(&eta, &mut resid).ok_or(Error::OverflowExponent {
        value: eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        cap: crate::loss::OVERFLOW_CAP,
    })?;
    let mut grad = vec![0.0; data.m()];
    data.transpose_mul_into(&resid, &mut grad);
    let lambda: Vec<f64> = grad.iter().map(|g| -gamma * g).collect();
    let linear: f64 = lambda.iter().zip(w).map(|(l, x)| l * x).sum::<f64>() / gamma;
    let mut ones_sq = 0.0;
    let mut free_sq = Vec::with_capacity(w.len());
    for (l, &is_one) in lambda.iter().zip(&part.active_is_one) {
        if is_one {
            ones_sq += l * l;
        } else {
            free_sq.push(l * l);
        }
    }
    let value = loss + linear - (ones_sq + top_sum(&free_sq, part.budget)) / (4.0 * gamma);
    Ok(WorkingCert {
        b_circ,
        lambda,
        loss,
        value,
    })
}

/// Solves the relaxation with default options from a cold start.
pub fn solve_relaxation(
    d: &Dataset,
    gamma: f64,
    k: usize,
    fixed0: &[usize],
    fixed1: &[usize],
) -> Result<RelaxationSolution> {
    solve_relaxation_with(d, gamma, k, fixed0, fixed1, &RelaxOptions::default(), None)
}

pub fn solve_relaxation_with(
    d: &Dataset,
    gamma: f64,
    k: usize,
    fixed0: &[usize],
    fixed1: &[usize],
    opts: &RelaxOptions,
    warm_start: Option<&Coefficients>,
) -> Result<RelaxationSolution> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig(format!("gamma = {gamma} must be positive")));
    }
    let part = Partition::new(d.m(), k, fixed0, fixed1)?;
    let reduced;
    let data = if part.fixed0.is_empty() {
        d
    } else {
        reduced = d.select_columns(&part.active);
        &reduced
    };
    let terms = PoissonTerms::new(data);
    if terms.total_y <= 0.0 {
        return Err(Error::DegenerateCounts);
    }
    let (n, p) = (data.n(), data.m());

    let mut x: Vec<f64> = match warm_start {
        Some(c) if c.w.len() == d.m() => part.active.iter().map(|&j| c.w[j]).collect(),
        _ => vec![0.0; p],
    };
    // Start feasible for the prox (zero budget kills the free block).
    prox_step(&mut x, 0.0, &part, gamma);
    let mut bx = terms.intercept_shift(&data.linear_predictors(&x, 0.0))?;
    let mut eta_x = data.linear_predictors(&x, bx);
    let mut fx = match terms.value(&eta_x) {
        Some(v) => v,
        None => {
            x.iter_mut().for_each(|v| *v = 0.0);
            bx = terms.intercept_shift(&vec![0.0; n])?;
            eta_x = vec![bx; n];
            terms.value(&eta_x).expect("intercept-only point is finite")
        }
    };
    let mut obj_x = fx + penalty(&x, &part, gamma).0;

    let mut y = x.clone();
    let mut by = bx;
    let mut eta_y = eta_x.clone();
    let mut momentum = 1.0f64;
    let mut step = 1.0f64;

    let mut resid = vec![0.0; n];
    let mut grad = vec![0.0; p];
    let mut cand = vec![0.0; p];
    let mut eta_c = vec![0.0; n];
    let mut grad_map_norm = f64::INFINITY;
    let mut best_gap = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let fy = match terms.residuals(&eta_y, &mut resid) {
            Some(v) => v,
            None => {
                // Momentum overshot into the overflow region.
                y.copy_from_slice(&x);
                by = bx;
                eta_y.copy_from_slice(&eta_x);
                momentum = 1.0;
                terms.residuals(&eta_y, &mut resid).expect("iterate is finite")
            }
        };
        data.transpose_mul_into(&resid, &mut grad);
        let grad_b: f64 = resid.iter().sum();

        let mut accepted = false;
        let mut fc = f64::INFINITY;
        let mut bc = by;
        for _ in 0..80 {
            for j in 0..p {
                cand[j] = y[j] - step * grad[j];
            }
            prox_step(&mut cand, step, &part, gamma);
            bc = by - step * grad_b;
            data.linear_predictors_into(&cand, bc, &mut eta_c);
            if let Some(v) = terms.value(&eta_c) {
                let mut lin = (bc - by) * grad_b;
                let mut sq = (bc - by) * (bc - by);
                for j in 0..p {
                    let dlt = cand[j] - y[j];
                    lin += grad[j] * dlt;
                    sq += dlt * dlt;
                }
                if v <= fy + lin + sq / (2.0 * step) + 1e-15 * fy.abs() {
                    fc = v;
                    grad_map_norm = sq.sqrt() / step;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            log::warn!("relaxation line search failed at iteration {iter}");
            break;
        }

        let obj_c = fc + penalty(&cand, &part, gamma).0;
        if obj_c > obj_x + 4.0 * f64::EPSILON * obj_x.abs().max(1.0) {
            // Function-value restart: drop momentum and retry from x.
            let stalled = momentum == 1.0;
            momentum = 1.0;
            y.copy_from_slice(&x);
            by = bx;
            eta_y.copy_from_slice(&eta_x);
            if grad_map_norm == 0.0 || stalled {
                // A plain step from x no longer decreases: x is as good as
                // rounding allows.
                break;
            }
            continue;
        }

        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_momentum;
        momentum = next_momentum;
        for j in 0..p {
            y[j] = cand[j] + beta * (cand[j] - x[j]);
        }
        by = bc + beta * (bc - bx);
        for i in 0..n {
            eta_y[i] = eta_c[i] + beta * (eta_c[i] - eta_x[i]);
        }
        std::mem::swap(&mut x, &mut cand);
        std::mem::swap(&mut eta_x, &mut eta_c);
        bx = bc;
        fx = fc;
        obj_x = obj_c;
        step *= 1.2;

        if (iter + 1) % opts.check_every == 0 || grad_map_norm == 0.0 {
            let cert = certify(data, &terms, &x, &part, gamma)?;
            let primal = cert.loss + penalty(&x, &part, gamma).0;
            let gap = primal - cert.value;
            best_gap = best_gap.min(gap);
            log::debug!("iteration {} gap {gap:e} step {step:e} objective {obj_x}", iter + 1);
            if gap <= opts.tol_rel * primal.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }
    let _ = fx;

    let cert = certify(data, &terms, &x, &part, gamma)?;
    let (pen, wf) = penalty(&x, &part, gamma);
    let value = cert.loss + pen;
    let gap = value - cert.value;
    if !converged {
        converged = gap <= opts.tol_rel * value.abs().max(1.0);
    }
    if !converged {
        log::warn!(
            "relaxation stopped after {iterations} iterations with duality gap {gap:e}"
        );
    }

    let m = d.m();
    let mut w_star = vec![0.0; m];
    let mut z_star = vec![0.0; m];
    let mut free_iter = wf.z.iter();
    for (idx, &j) in part.active.iter().enumerate() {
        w_star[j] = x[idx];
        z_star[j] = if part.active_is_one[idx] {
            1.0
        } else {
            *free_iter.next().expect("free count")
        };
    }
    Ok(RelaxationSolution {
        w_star,
        b_star: cert.b_circ,
        z_star,
        value,
        nu: wf.theta * wf.theta,
        k,
        fixed0: part.fixed0,
        fixed1: part.fixed1,
        solver_stats: SolverStats {
            iterations,
            grad_norm: grad_map_norm,
            duality_gap: gap,
            converged,
        },
    })
}

/// Recovers `λ̄` at the relaxation point and the certified lower bound on the
/// cardinality-constrained optimum under the solution's fixing.
pub fn recover_dual(
    sol: &RelaxationSolution,
    d: &Dataset,
    gamma: f64,
) -> Result<RelaxationCertificate> {
    certificate_at(&sol.w_star, d, gamma, sol.k, &sol.fixed0, &sol.fixed1)
}

/// Certificate at an arbitrary point `w` (entries on `fixed0` are ignored).
/// The bound is valid for any `w`; only its tightness depends on `w`.
pub fn certificate_at(
    w: &[f64],
    d: &Dataset,
    gamma: f64,
    k: usize,
    fixed0: &[usize],
    fixed1: &[usize],
) -> Result<RelaxationCertificate> {
    if w.len() != d.m() {
        return Err(Error::DimensionMismatch(format!(
            "w has length {}, dataset has {} features",
            w.len(),
            d.m()
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("relaxation point is not finite".into()));
    }
    let part = Partition::new(d.m(), k, fixed0, fixed1)?;
    let reduced;
    let data = if part.fixed0.is_empty() {
        d
    } else {
        reduced = d.select_columns(&part.active);
        &reduced
    };
    let terms = PoissonTerms::new(data);
    let w_active: Vec<f64> = part.active.iter().map(|&j| w[j]).collect();
    let cert = certify(data, &terms, &w_active, &part, gamma)?;

    let mut lambda_bar = vec![0.0; d.m()];
    let mut theta = Vec::with_capacity(part.active.len());
    for (idx, &j) in part.active.iter().enumerate() {
        lambda_bar[j] = cert.lambda[idx];
        if !part.active_is_one[idx] {
            theta.push(cert.lambda[idx] * cert.lambda[idx]);
        }
    }
    theta.sort_unstable_by(|a, b| b.total_cmp(a));
    let at = |l: usize| -> f64 {
        if l == 0 {
            f64::INFINITY
        } else {
            theta.get(l - 1).copied().unwrap_or(0.0)
        }
    };
    let slack = safety_slack(cert.value);
    Ok(RelaxationCertificate {
        lambda_bar,
        b_circ: cert.b_circ,
        theta_k: at(part.budget),
        theta_k1: at(part.budget + 1),
        theta,
        budget: part.budget,
        value: cert.value,
        v_lower: cert.value - slack,
        slack_applied: slack,
    })
}

/// Value of the Lagrangian relaxation at an arbitrary `λ`: minimizes
/// `L(w, b) + λᵀw/γ` by Newton's method and subtracts the top-`k` sum of
/// `λ_j² / 4γ`. A lower bound on the constrained optimum for every `λ`.
pub fn rp_lambda_value(lambda: &[f64], d: &Dataset, gamma: f64, k: usize) -> Result<f64> {
    if lambda.len() != d.m() {
        return Err(Error::DimensionMismatch(format!(
            "lambda has length {}, dataset has {} features",
            lambda.len(),
            d.m()
        )));
    }
    let linear: Vec<f64> = lambda.iter().map(|l| l / gamma).collect();
    let fit = SmoothFit {
        data: d,
        ridge: 0.0,
        linear: Some(&linear),
    }
    .solve(&SmoothOptions {
        tol_grad_rel: 1e-11,
        max_iter: 500,
    })?;
    if !fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.iterations,
            grad_norm: fit.grad_norm,
        });
    }
    let sq: Vec<f64> = lambda.iter().map(|l| l * l).collect();
    Ok(fit.objective - top_sum(&sq, k) / (4.0 * gamma))
}

/// Euclidean projection of `u` onto `{|w_j| ≤ cap, ‖w‖₁ ≤ radius}`.
fn project_box_l1(u: &mut [f64], cap: f64, radius: f64) {
    let clipped: f64 = u.iter().map(|v| v.abs().min(cap)).sum();
    if clipped <= radius {
        u.iter_mut().for_each(|v| *v = v.clamp(-cap, cap));
        return;
    }
    let mass = |tau: f64| -> f64 { u.iter().map(|v| (v.abs() - tau).clamp(0.0, cap)).sum() };
    let (mut lo, mut hi) = (0.0, u.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi.max(1.0) {
            break;
        }
    }
    // Exact solve on the linear piece containing the root.
    let tau = hi;
    let (mut fixed, mut count) = (0.0, 0.0);
    for v in u.iter() {
        let a = v.abs();
        if a - tau >= cap {
            fixed += cap;
        } else if a > tau {
            fixed += a;
            count += 1.0;
        }
    }
    let tau = if count > 0.0 { ((fixed - radius) / count).max(0.0) } else { tau };
    u.iter_mut()
        .for_each(|v| *v = v.signum() * (v.abs() - tau).clamp(0.0, cap));
}

/// Continuous relaxation of the big-M formulation with `−M z_j ≤ w_j ≤ M z_j`:
/// with `z_j = |w_j|/M` eliminated it is
/// `min L(w, b) + (1/γ)‖w‖²` over `‖w‖₁ ≤ kM`, `|w_j| ≤ M`.
/// Solved by accelerated projected gradient until the primal value and a
/// strong-convexity lower bound agree to `1e-9` relative; returns the lower
/// bound.
pub fn bigm_relaxation_bound(d: &Dataset, gamma: f64, k: usize, big_m: f64) -> Result<f64> {
    if !(big_m > 0.0) || !(gamma > 0.0) {
        return Err(Error::InvalidConfig("gamma and M must be positive".into()));
    }
    let terms = PoissonTerms::new(d);
    if terms.total_y <= 0.0 {
        return Err(Error::DegenerateCounts);
    }
    let (n, m) = (d.n(), d.m());
    let radius = k as f64 * big_m;
    let tol = 1e-9;
    let ridge = 1.0 / gamma;

    let objective = |eta: &[f64], w: &[f64]| terms.value(eta).map(|v| v + ridge * norm2_sq(w));

    let mut x = vec![0.0; m];
    let mut bx = terms.intercept_shift(&vec![0.0; n])?;
    let mut eta_x = vec![bx; n];
    let mut fx = objective(&eta_x, &x).expect("finite start");
    let mut y = x.clone();
    let mut by = bx;
    let mut eta_y = eta_x.clone();
    let mut momentum = 1.0f64;
    let mut step = 1.0f64;
    let mut resid = vec![0.0; n];
    let mut grad = vec![0.0; m];
    let mut cand = vec![0.0; m];
    let mut eta_c = vec![0.0; n];

    for iter in 0..50_000 {
        let fy = match terms.residuals(&eta_y, &mut resid) {
            Some(v) => v + ridge * norm2_sq(&y),
            None => {
                y.copy_from_slice(&x);
                by = bx;
                eta_y.copy_from_slice(&eta_x);
                momentum = 1.0;
                continue;
            }
        };
        d.transpose_mul_into(&resid, &mut grad);
        for j in 0..m {
            grad[j] += 2.0 * ridge * y[j];
        }
        let grad_b: f64 = resid.iter().sum();

        let mut fc = f64::INFINITY;
        let mut bc = by;
        let mut accepted = false;
        for _ in 0..80 {
            for j in 0..m {
                cand[j] = y[j] - step * grad[j];
            }
            project_box_l1(&mut cand, big_m, radius);
            bc = by - step * grad_b;
            d.linear_predictors_into(&cand, bc, &mut eta_c);
            if let Some(v) = objective(&eta_c, &cand) {
                let mut lin = (bc - by) * grad_b;
                let mut sq = (bc - by) * (bc - by);
                for j in 0..m {
                    let dlt = cand[j] - y[j];
                    lin += grad[j] * dlt;
                    sq += dlt * dlt;
                }
                if v <= fy + lin + sq / (2.0 * step) + 1e-15 * fy.abs() {
                    fc = v;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        if fc > fx + 4.0 * f64::EPSILON * fx.abs().max(1.0) {
            let stalled = momentum == 1.0;
            momentum = 1.0;
            y.copy_from_slice(&x);
            by = bx;
            eta_y.copy_from_slice(&eta_x);
            if stalled {
                break;
            }
            continue;
        }
        let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next;
        momentum = next;
        for j in 0..m {
            y[j] = cand[j] + beta * (cand[j] - x[j]);
        }
        by = bc + beta * (bc - bx);
        for i in 0..n {
            eta_y[i] = eta_c[i] + beta * (eta_c[i] - eta_x[i]);
        }
        std::mem::swap(&mut x, &mut cand);
        std::mem::swap(&mut eta_x, &mut eta_c);
        bx = bc;
        fx = fc;
        step *= 1.2;

        if (iter + 1) % 10 == 0 {
            let (value, lower) = bigm_certificate(d, &terms, &x, ridge, big_m, k)?;
            if value - lower <= tol * value.abs().max(1.0) {
                return Ok(lower);
            }
        }
    }
    let (value, lower) = bigm_certificate(d, &terms, &x, ridge, big_m, k)?;
    if value - lower > tol * value.abs().max(1.0) {
        log::warn!("big-M relaxation stopped with gap {:e}", value - lower);
    }
    Ok(lower)
}

/// Objective at `(w, b°)` and a lower bound on the big-M optimum.
///
/// The objective is `(2/γ)`-strongly convex in `w` and `b°` zeroes the
/// intercept derivative, so for every feasible `s`
/// `f(s, ·) ≥ f(w, b°) + gᵀ(s − w) + ‖s − w‖²/γ`; the right side is minimized
/// over the feasible set by projecting `w − (γ/2) g`.
fn bigm_certificate(
    d: &Dataset,
    terms: &PoissonTerms,
    w: &[f64],
    ridge: f64,
    big_m: f64,
    k: usize,
) -> Result<(f64, f64)> {
    let eta0 = d.linear_predictors(w, 0.0);
    let shift = terms.intercept_shift(&eta0)?;
    let eta: Vec<f64> = eta0.iter().map(|e| e + shift).collect();
    let mut resid = vec![0.0; d.n()];
    let loss = terms
        .residuals(&eta, &mut resid)
        .ok_or(Error::OverflowExponent {
            value: f64::INFINITY,
            cap: crate::loss::OVERFLOW_CAP,
        })?;
    let mut grad = vec![0.0; d.m()];
    d.transpose_mul_into(&resid, &mut grad);
    for j in 0..grad.len() {
        grad[j] += 2.0 * ridge * w[j];
    }
    let value = loss + ridge * norm2_sq(w);
    let mut s: Vec<f64> = w.iter().zip(&grad).map(|(x, g)| x - g / (2.0 * ridge)).collect();
    project_box_l1(&mut s, big_m, k as f64 * big_m);
    let mut lin = 0.0;
    let mut sq = 0.0;
    for j in 0..s.len() {
        let dlt = s[j] - w[j];
        lin += grad[j] * dlt;
        sq += dlt * dlt;
    }
    Ok((value, value + lin + ridge * sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, GenerationConfig};
    use crate::loss::{optimal_intercept, poisson_loss, solve_restricted};

    fn instance(m: usize, n: usize, seed: u64) -> Dataset {
        let cfg = GenerationConfig::new(m, n, 2.min(m), 0.35, 0.1, 10, seed).unwrap();
        generate_synthetic(&cfg).unwrap()
    }

    #[test]
    fn waterfill_examples() {
        let wf = capped_simplex_waterfill(&[2.0, 1.0, 0.0], 1);
        assert!((wf.theta - 3.0).abs() < 1e-15);
        assert!((wf.value - 9.0).abs() < 1e-12);
        assert!((wf.z[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((wf.z[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(wf.z[2], 0.0);

        let wf = capped_simplex_waterfill(&[2.0, 1.0, 0.0], 2);
        assert_eq!(wf.z, vec![1.0, 1.0, 0.0]);
        assert_eq!(wf.value, 5.0);

        let wf = capped_simplex_waterfill(&[0.0, 0.0], 1);
        assert_eq!(wf.z, vec![0.0, 0.0]);
        assert_eq!(wf.value, 0.0);
    }

    #[test]
    fn waterfill_with_saturated_entries() {
        // mag = (10, 1, 1), k = 2: z = (1, 1/2, 1/2), θ = 2, value = 100 + 2 + 2.
        let wf = capped_simplex_waterfill(&[10.0, 1.0, 1.0], 2);
        assert!((wf.theta - 2.0).abs() < 1e-15);
        assert!((wf.value - 104.0).abs() < 1e-12);
        assert_eq!(wf.z[0], 1.0);
    }

    #[test]
    fn reverse_huber_branches() {
        assert_eq!(reverse_huber(1.0, 4.0), 4.0);
        assert_eq!(reverse_huber(3.0, 4.0), 13.0);
        assert_eq!(reverse_huber(-1.5, 0.0), 2.25);
        assert!((reverse_huber_prox(3.0, 0.5, 0.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn perspective_prox_meets_budget() {
        let mut u = vec![3.0, -2.0, 1.0, 0.5, 0.0, -0.1];
        let tau = 0.3;
        let nu = perspective_prox(&mut u, tau, 2);
        let s = nu.sqrt();
        let zsum: f64 = u.iter().map(|v| (v.abs() / s).min(1.0)).sum();
        assert!((zsum - 2.0).abs() < 1e-12, "{zsum}");
    }

    #[test]
    fn relaxation_with_vacuous_budget_is_ridge() {
        let d = instance(5, 30, 1);
        let sol = solve_relaxation(&d, 1.0, 5, &[], &[]).unwrap();
        let ridge = solve_restricted(&[0, 1, 2, 3, 4], &d, 1.0).unwrap();
        assert!(sol.solver_stats.converged);
        assert!(
            (sol.value - ridge.objective).abs() <= 1e-8 * ridge.objective,
            "{} vs {}",
            sol.value,
            ridge.objective
        );
    }

    #[test]
    fn relaxation_with_everything_fixed_to_zero() {
        let d = instance(4, 20, 2);
        let sol = solve_relaxation(&d, 1.0, 2, &[0, 1, 2, 3], &[]).unwrap();
        assert!(sol.w_star.iter().all(|&v| v == 0.0));
        let b = d.mean_count().ln();
        let expected = poisson_loss(&Coefficients { w: vec![0.0; 4], b }, &d).unwrap().value;
        assert!((sol.value - expected).abs() < 1e-12);
    }

    #[test]
    fn relaxation_respects_fixing_and_budget() {
        let d = instance(10, 30, 3);
        let sol = solve_relaxation(&d, 2.0, 3, &[1, 4], &[7]).unwrap();
        assert_eq!(sol.z_star[1], 0.0);
        assert_eq!(sol.z_star[4], 0.0);
        assert_eq!(sol.z_star[7], 1.0);
        assert!(sol.z_star.iter().sum::<f64>() <= 3.0 + 1e-9);
        assert!(matches!(
            solve_relaxation(&d, 2.0, 1, &[], &[0, 1]),
            Err(Error::InfeasibleFixing { .. })
        ));
    }

    #[test]
    fn certificate_examples() {
        // n = 1, x = (1, 0), y = 1, w = 0 → b° = 0, λ̄ = 0.
        let d = Dataset::from_rows(&[vec![1.0, 0.0]], vec![1]).unwrap();
        let c = certificate_at(&[0.0, 0.0], &d, 1.0, 1, &[], &[]).unwrap();
        assert_eq!(c.b_circ, 0.0);
        assert!(c.lambda_bar.iter().all(|&l| l.abs() < 1e-15));

        let d = Dataset::from_rows(&[vec![1.0, 0.0]], vec![2]).unwrap();
        let c = certificate_at(&[0.0, 0.0], &d, 2.0, 1, &[], &[]).unwrap();
        assert!((c.b_circ - 2f64.ln()).abs() < 1e-15);
        assert!(c.lambda_bar.iter().all(|&l| l.abs() < 1e-14));
    }

    #[test]
    fn certificate_is_exactly_stationary() {
        let d = instance(8, 25, 4);
        let w = [0.1, -0.2, 0.0, 0.05, 0.3, 0.0, -0.1, 0.02];
        let gamma = 0.7;
        let c = certificate_at(&w, &d, gamma, 3, &[], &[]).unwrap();
        let e = poisson_loss(&Coefficients { w: w.to_vec(), b: c.b_circ }, &d).unwrap();
        for j in 0..8 {
            assert!((e.grad_w[j] + c.lambda_bar[j] / gamma).abs() < 1e-15);
        }
        assert!(e.grad_b.abs() < 1e-13);
        assert!((c.b_circ - optimal_intercept(&w, &d).unwrap()).abs() < 1e-15);
        assert!(c.theta.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn strong_duality_at_relaxation_optimum() {
        let d = instance(10, 30, 5);
        let sol = solve_relaxation(&d, 1.0, 3, &[], &[]).unwrap();
        let cert = recover_dual(&sol, &d, 1.0).unwrap();
        let via_newton = rp_lambda_value(&cert.lambda_bar, &d, 1.0, 3).unwrap();
        assert!((via_newton - cert.value).abs() <= 1e-8 * cert.value.abs());
        assert!((sol.value - cert.value).abs() <= 1e-8 * sol.value.abs());
    }

    #[test]
    fn projection_lands_on_feasible_set() {
        let mut u = vec![3.0, -2.5, 0.4, 0.1, -1.9];
        project_box_l1(&mut u, 1.0, 2.5);
        assert!(u.iter().all(|v| v.abs() <= 1.0 + 1e-15));
        assert!((u.iter().map(|v| v.abs()).sum::<f64>() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn bigm_with_huge_m_is_ridge() {
        let d = instance(5, 30, 6);
        let v = bigm_relaxation_bound(&d, 1.0, 2, 1e9).unwrap();
        let ridge = solve_restricted(&[0, 1, 2, 3, 4], &d, 1.0).unwrap();
        assert!((v - ridge.objective).abs() <= 1e-6 * ridge.objective);
    }
}
