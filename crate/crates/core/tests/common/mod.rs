#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sparsepois::bnb::enumerate_supports;
use sparsepois::conic::{in_exp_cone, in_rq_cone, DEFAULT_CONE_TOL};
use sparsepois::dataset::{generate_synthetic, Dataset, GenerationConfig};
use sparsepois::loss::{optimal_intercept, poisson_loss, Coefficients};
use sparsepois::relax::{capped_simplex_waterfill, reverse_huber, reverse_huber_prox};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn synthetic(m: usize, n: usize, k_true: usize, rho: f64, sigma2: f64, seed: u64) -> Dataset {
    let cfg = GenerationConfig::new(m, n, k_true, rho, sigma2, 10, seed).unwrap();
    generate_synthetic(&cfg).unwrap()
}

/// A small instance: m ∈ [4,12], n ∈ [10,40], k ∈ [1,3], γ ∈ {0.1, 1, 10}.
pub struct SmallCase {
    pub d: Dataset,
    pub gamma: f64,
    pub k: usize,
    pub label: String,
}

pub fn small_case(seed: u64) -> SmallCase {
    let mut r = rng(seed ^ 0x5eed_0000);
    let m = r.gen_range(4..=12);
    let n = r.gen_range(10..=40);
    let k = r.gen_range(1..=3);
    let gamma = [0.1, 1.0, 10.0][r.gen_range(0..3)];
    let rho = [0.0, 0.35, 0.7][r.gen_range(0..3)];
    let sigma2 = [0.01, 0.1, 1.0][r.gen_range(0..3)];
    let k_true = r.gen_range(1..=3.min(m));
    let d = synthetic(m, n, k_true, rho, sigma2, seed);
    SmallCase {
        d,
        gamma,
        k,
        label: format!("seed={seed} m={m} n={n} k={k} gamma={gamma} rho={rho} sigma2={sigma2}"),
    }
}

/// Exact optimum over supports of size ≤ k and every support within `tie`
/// (relative) of it.
pub fn optimal_supports(d: &Dataset, gamma: f64, k: usize, tie: f64) -> (f64, Vec<Vec<usize>>) {
    let all = enumerate_supports(d, gamma, k).unwrap();
    let best = all.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let cut = best + tie * best.abs().max(1.0);
    let opt = all.into_iter().filter(|s| s.1 <= cut).map(|s| s.0).collect();
    (best, opt)
}

/// Indices fixed to one that no optimal support contains, and indices fixed
/// to zero that every optimal support contains.
pub fn screening_violations(
    fixed0: &[usize],
    fixed1: &[usize],
    optimal: &[Vec<usize>],
) -> Vec<String> {
    let mut out = Vec::new();
    for &j in fixed1 {
        if optimal.iter().all(|s| !s.contains(&j)) {
            out.push(format!("index {j} fixed to one but absent from every optimum"));
        }
    }
    for &j in fixed0 {
        if optimal.iter().all(|s| s.contains(&j)) {
            out.push(format!("index {j} fixed to zero but present in every optimum"));
        }
    }
    out
}

/// Minimizes a unimodal function on `[lo, hi]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..iters {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

/// `min_{z∈[0,1]} w²/z + νz`, written out independently of the library.
pub fn psi(w: f64, nu: f64) -> f64 {
    if w == 0.0 {
        return 0.0;
    }
    let z = (w.abs() / nu.sqrt()).min(1.0);
    w * w / z + nu * z
}

/// Water-filling value through its Lagrangian dual, maximized over ν.
pub fn waterfill_dual_value(mag: &[f64], k: usize) -> f64 {
    let dual = |nu: f64| mag.iter().map(|&w| psi(w, nu)).sum::<f64>() - nu * k as f64;
    // The optimal level never exceeds Σ|w|.
    let top = mag.iter().sum::<f64>().powi(2);
    if top == 0.0 {
        return 0.0;
    }
    let nu = golden_min(|nu| -dual(nu), 0.0, top, 200);
    dual(nu).max(dual(0.0))
}

pub fn check_waterfill(mag: &[f64], k: usize, trial_z: &[f64]) -> Result<(), String> {
    let wf = capped_simplex_waterfill(mag, k);
    let sum_z: f64 = wf.z.iter().sum();
    if sum_z > k as f64 + 1e-9 || wf.z.iter().any(|&z| !(-1e-15..=1.0 + 1e-15).contains(&z)) {
        return Err(format!("infeasible z {:?} for k={k}", wf.z));
    }
    let attained: f64 = mag
        .iter()
        .zip(&wf.z)
        .map(|(&w, &z)| if w == 0.0 { 0.0 } else { w * w / z })
        .sum();
    let scale = 1.0 + wf.value.abs();
    if (attained - wf.value).abs() > 1e-9 * scale {
        return Err(format!("z attains {attained}, reported {}", wf.value));
    }
    let dual = waterfill_dual_value(mag, k);
    if (dual - wf.value).abs() > 1e-7 * scale {
        return Err(format!("dual oracle {dual} vs water-filling {}", wf.value));
    }
    // Any other feasible z is no better.
    let s: f64 = trial_z.iter().sum();
    if s > 0.0 {
        let shrink = (k as f64 / s).min(1.0);
        let other: f64 = mag
            .iter()
            .zip(trial_z)
            .map(|(&w, &z)| {
                let z = z * shrink;
                if w == 0.0 {
                    0.0
                } else if z == 0.0 {
                    f64::INFINITY
                } else {
                    w * w / z
                }
            })
            .sum();
        if other < wf.value - 1e-9 * scale {
            return Err(format!("feasible z beats water-filling: {other} < {}", wf.value));
        }
    }
    Ok(())
}

pub fn check_reverse_huber(w: f64, nu: f64) -> Result<(), String> {
    let got = reverse_huber(w, nu);
    // Grid plus golden refinement over z ∈ (0, 1].
    let f = |z: f64| w * w / z + nu * z;
    let z = golden_min(f, 1e-12, 1.0, 200);
    let oracle = if w == 0.0 { 0.0 } else { f(z).min(f(1.0)) };
    if (got - oracle).abs() > 1e-8 * (1.0 + oracle.abs()) {
        return Err(format!("reverse_huber({w}, {nu}) = {got}, oracle {oracle}"));
    }
    Ok(())
}

pub fn check_reverse_huber_prox(u: f64, t: f64, nu: f64) -> Result<(), String> {
    let x = reverse_huber_prox(u, t, nu);
    let obj = |x: f64| 0.5 * (x - u) * (x - u) + t * psi(x, nu);
    let r = u.abs() + 1.0;
    let oracle = golden_min(obj, -r, r, 300);
    if obj(x) > obj(oracle) + 1e-10 * (1.0 + obj(oracle).abs()) {
        return Err(format!(
            "prox({u}, {t}, {nu}) = {x} with value {}, oracle {oracle} with {}",
            obj(x),
            obj(oracle)
        ));
    }
    if (x - oracle).abs() > 1e-6 * (1.0 + u.abs()) {
        return Err(format!("prox({u}, {t}, {nu}) = {x}, oracle {oracle}"));
    }
    Ok(())
}

/// Central differences of the loss against its analytic gradient.
pub fn check_gradient(d: &Dataset, c: &Coefficients) -> Result<(), String> {
    let ev = poisson_loss(c, d).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let f = |c: &Coefficients| poisson_loss(c, d).unwrap().value;
    for j in 0..c.w.len() {
        let mut plus = c.clone();
        let mut minus = c.clone();
        plus.w[j] += h;
        minus.w[j] -= h;
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        if (fd - ev.grad_w[j]).abs() > 1e-6 * ev.grad_w[j].abs().max(1.0) {
            return Err(format!("d/dw{j}: analytic {} vs fd {fd}", ev.grad_w[j]));
        }
    }
    let mut plus = c.clone();
    let mut minus = c.clone();
    plus.b += h;
    minus.b -= h;
    let fd = (f(&plus) - f(&minus)) / (2.0 * h);
    if (fd - ev.grad_b).abs() > 1e-6 * ev.grad_b.abs().max(1.0) {
        return Err(format!("d/db: analytic {} vs fd {fd}", ev.grad_b));
    }
    Ok(())
}

pub fn check_convexity(d: &Dataset, a: &Coefficients, b: &Coefficients, t: f64) -> Result<(), String> {
    let f = |c: &Coefficients| poisson_loss(c, d).unwrap().value;
    let mid = Coefficients {
        w: a.w.iter().zip(&b.w).map(|(x, y)| t * x + (1.0 - t) * y).collect(),
        b: t * a.b + (1.0 - t) * b.b,
    };
    let lhs = f(&mid);
    let rhs = t * f(a) + (1.0 - t) * f(b);
    if lhs > rhs + 1e-12 * (1.0 + rhs.abs()) {
        return Err(format!("convexity violated: {lhs} > {rhs}"));
    }
    Ok(())
}

/// The closed-form intercept zeroes the intercept derivative.
pub fn check_intercept(d: &Dataset, w: &[f64]) -> Result<(), String> {
    let b = optimal_intercept(w, d).map_err(|e| e.to_string())?;
    let ev = poisson_loss(&Coefficients { w: w.to_vec(), b }, d).map_err(|e| e.to_string())?;
    if ev.grad_b.abs() > 1e-10 * (1.0 + d.mean_count()) {
        return Err(format!("intercept derivative {} at b = {b}", ev.grad_b));
    }
    Ok(())
}

/// Random coefficients of moderate size for an instance.
pub fn random_coefficients(r: &mut ChaCha8Rng, m: usize) -> Coefficients {
    Coefficients {
        w: (0..m).map(|_| r.gen_range(-0.5..0.5)).collect(),
        b: r.gen_range(-1.0..1.0),
    }
}

/// A random member of the exponential cone.
pub fn exp_member(r: &mut ChaCha8Rng) -> [f64; 3] {
    let x2: f64 = r.gen_range(0.01..5.0);
    let x3 = x2 * r.gen_range(-5.0..5.0);
    let x1 = x2 * (x3 / x2).exp() * r.gen_range(1.0..3.0);
    [x1, x2, x3]
}

/// A random member of the rotated quadratic cone.
pub fn rq_member(r: &mut ChaCha8Rng) -> [f64; 3] {
    let x1: f64 = r.gen_range(0.0..5.0);
    let x2: f64 = r.gen_range(0.0..5.0);
    let x3 = r.gen_range(-1.0..=1.0) * (2.0 * x1 * x2).sqrt();
    [x1, x2, x3]
}

pub fn in_exp(p: [f64; 3]) -> bool {
    in_exp_cone(p[0], p[1], p[2], DEFAULT_CONE_TOL)
}

pub fn in_rq(p: [f64; 3]) -> bool {
    in_rq_cone(p[0], p[1], p[2], DEFAULT_CONE_TOL)
}

/// Both points are members, and so are `α·a` and the midpoint.
pub fn check_cone_pair(
    name: &str,
    member: fn([f64; 3]) -> bool,
    a: [f64; 3],
    b: [f64; 3],
    alpha: f64,
) -> Result<(), String> {
    if !member(a) || !member(b) {
        return Err(format!("{name}: generated point {a:?} or {b:?} is not a member"));
    }
    let scaled = [alpha * a[0], alpha * a[1], alpha * a[2]];
    if !member(scaled) {
        return Err(format!("{name}: {alpha}·{a:?} left the cone"));
    }
    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])];
    if !member(mid) {
        return Err(format!("{name}: midpoint of {a:?} and {b:?} left the cone"));
    }
    Ok(())
}

pub fn check_exp_epigraph(t: f64, u: f64) -> Result<(), String> {
    let expected = t >= u.exp();
    if in_exp_cone(t, 1.0, u, 0.0) != expected {
        return Err(format!("t={t}, u={u}: epigraph says {expected}"));
    }
    Ok(())
}

pub fn check_rq_equivalence(s: f64, z: f64, w: f64) -> Result<(), String> {
    let expected = w * w <= s * z;
    if in_rq_cone(s / 2.0, z, w, 0.0) != expected {
        return Err(format!("s={s}, z={z}, w={w}: w² ≤ sz says {expected}"));
    }
    Ok(())
}
