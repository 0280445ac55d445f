//! Poisson loss `L(w, b) = (1/n) Σ [exp(wᵀx_i + b) − y_i (wᵀx_i + b) + log y_i!]`,
//! its gradient, the closed-form intercept, and a damped Newton solver for
//! ridge-regularized fits on a fixed support.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{norm2_sq, norm_inf, Cholesky};

/// Linear predictors above this value are treated as overflow.
pub const OVERFLOW_CAP: f64 = 500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Coefficients {
    pub fn zeros(m: usize) -> Self {
        Self {
            w: vec![0.0; m],
            b: 0.0,
        }
    }

    /// Zero-based indices with a nonzero weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.w.len()).filter(|&j| self.w[j] != 0.0).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LossEvaluation {
    pub value: f64,
    pub grad_w: Vec<f64>,
    pub grad_b: f64,
    pub linear_predictors: Vec<f64>,
}

const LOG_FACTORIAL_TABLE_LEN: usize = 21;

fn log_factorial_table() -> &'static [f64; LOG_FACTORIAL_TABLE_LEN] {
    static TABLE: std::sync::OnceLock<[f64; LOG_FACTORIAL_TABLE_LEN]> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; LOG_FACTORIAL_TABLE_LEN];
        let mut fact: u64 = 1;
        for (y, slot) in t.iter_mut().enumerate().skip(1) {
            fact *= y as u64;
            *slot = (fact as f64).ln();
        }
        t
    })
}

/// `log(y!)`: exact table up to 20, Stirling series beyond.
pub fn log_factorial(y: u64) -> f64 {
    if (y as usize) < LOG_FACTORIAL_TABLE_LEN {
        return log_factorial_table()[y as usize];
    }
    ln_gamma_large(y as f64 + 1.0)
}

/// Stirling series for `ln Γ(z)`, accurate to double precision for `z > 20`.
fn ln_gamma_large(z: f64) -> f64 {
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0))));
    (z - 0.5) * z.ln() - z + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

/// Per-dataset constants shared by every loss evaluation.
#[derive(Debug, Clone)]
pub(crate) struct PoissonTerms {
    pub(crate) y: Vec<f64>,
    pub(crate) total_y: f64,
    /// `(1/n) Σ log y_i!`
    pub(crate) log_fact_mean: f64,
}

impl PoissonTerms {
    pub(crate) fn new(d: &Dataset) -> Self {
        let y: Vec<f64> = d.y().iter().map(|&v| v as f64).collect();
        let log_fact_mean =
            d.y().iter().map(|&v| log_factorial(v)).sum::<f64>() / d.n() as f64;
        Self {
            total_y: y.iter().sum(),
            y,
            log_fact_mean,
        }
    }

    pub(crate) fn n(&self) -> usize {
        self.y.len()
    }

    /// Loss value from linear predictors; `None` when a predictor exceeds the
    /// overflow cap (or is not finite).
    pub(crate) fn value(&self, eta: &[f64]) -> Option<f64> {
        let mut acc = 0.0;
        for (&e, &y) in eta.iter().zip(&self.y) {
            if !(e <= OVERFLOW_CAP) {
                return None;
            }
            acc += e.exp() - y * e;
        }
        Some(acc / self.n() as f64 + self.log_fact_mean)
    }

    /// Writes `(exp(eta_i) − y_i) / n` into `out` and returns the loss value.
    pub(crate) fn residuals(&self, eta: &[f64], out: &mut [f64]) -> Option<f64> {
        let inv_n = 1.0 / self.n() as f64;
        let mut acc = 0.0;
        for ((o, &e), &y) in out.iter_mut().zip(eta).zip(&self.y) {
            if !(e <= OVERFLOW_CAP) {
                return None;
            }
            let mu = e.exp();
            acc += mu - y * e;
            *o = (mu - y) * inv_n;
        }
        Some(acc * inv_n + self.log_fact_mean)
    }

    /// Intercept shift `delta` such that `b + delta` zeroes the b-partial,
    /// given predictors `eta` computed with intercept `b`.
    pub(crate) fn intercept_shift(&self, eta: &[f64]) -> Result<f64> {
        if self.total_y <= 0.0 {
            return Err(Error::DegenerateCounts);
        }
        let top = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = eta.iter().map(|&e| (e - top).exp()).sum();
        Ok(self.total_y.ln() - top - sum.ln())
    }
}

fn check_dims(w_len: usize, d: &Dataset) -> Result<()> {
    if w_len != d.m() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient vector has length {w_len}, dataset has {} features",
            d.m()
        )));
    }
    Ok(())
}

/// Loss value and gradient at `c`.
pub fn poisson_loss(c: &Coefficients, d: &Dataset) -> Result<LossEvaluation> {
    check_dims(c.w.len(), d)?;
    let terms = PoissonTerms::new(d);
    let eta = d.linear_predictors(&c.w, c.b);
    let mut resid = vec![0.0; d.n()];
    let value = terms.residuals(&eta, &mut resid).ok_or_else(|| Error::OverflowExponent {
        value: eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        cap: OVERFLOW_CAP,
    })?;
    let mut grad_w = vec![0.0; d.m()];
    d.transpose_mul_into(&resid, &mut grad_w);
    Ok(LossEvaluation {
        value,
        grad_w,
        grad_b: resid.iter().sum(),
        linear_predictors: eta,
    })
}

/// `b° = log(Σ y_i / Σ exp(wᵀx_i))`, the exact minimizer of `b ↦ L(w, b)`.
pub fn optimal_intercept(w: &[f64], d: &Dataset) -> Result<f64> {
    check_dims(w.len(), d)?;
    let terms = PoissonTerms::new(d);
    let eta = d.linear_predictors(w, 0.0);
    terms.intercept_shift(&eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothOptions {
    /// Stop once `‖∇‖_∞ ≤ tol_grad_rel · max(1, |objective|)`.
    pub tol_grad_rel: f64,
    pub max_iter: usize,
}

impl Default for SmoothOptions {
    fn default() -> Self {
        Self {
            tol_grad_rel: 1e-9,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictedSolution {
    /// Zero-based feature indices, in the order of `w`.
    pub support: Vec<usize>,
    pub w: Vec<f64>,
    pub b: f64,
    pub objective: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

impl RestrictedSolution {
    /// Scatters the restricted weights into a length-`m` coefficient vector.
    pub fn embed(&self, m: usize) -> Coefficients {
        let mut w = vec![0.0; m];
        for (&j, &v) in self.support.iter().zip(&self.w) {
            w[j] = v;
        }
        Coefficients { w, b: self.b }
    }
}

/// Smooth objective `L(w, b) + ridge·‖w‖² + linearᵀw` on a column subset,
/// minimized by damped Newton with Armijo backtracking.
pub(crate) struct SmoothFit<'a> {
    pub(crate) data: &'a Dataset,
    pub(crate) ridge: f64,
    pub(crate) linear: Option<&'a [f64]>,
}

pub(crate) struct SmoothResult {
    pub(crate) w: Vec<f64>,
    pub(crate) b: f64,
    pub(crate) objective: f64,
    pub(crate) iterations: usize,
    pub(crate) grad_norm: f64,
    pub(crate) converged: bool,
    /// Objective after each accepted step, starting point included.
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) trace: Vec<f64>,
}

impl SmoothFit<'_> {
    fn objective(&self, terms: &PoissonTerms, eta: &[f64], w: &[f64]) -> Option<f64> {
        let mut v = terms.value(eta)? + self.ridge * norm2_sq(w);
        if let Some(lin) = self.linear {
            v += lin.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        }
        v.is_finite().then_some(v)
    }

    pub(crate) fn solve(&self, opts: &SmoothOptions) -> Result<SmoothResult> {
        let d = self.data;
        let (n, p) = (d.n(), d.m());
        let terms = PoissonTerms::new(d);
        if terms.total_y <= 0.0 {
            return Err(Error::DegenerateCounts);
        }
        let dim = p + 1;

        let mut w = vec![0.0; p];
        let mut b = terms.intercept_shift(&vec![0.0; n])?;
        let mut eta = d.linear_predictors(&w, b);
        let mut f = self
            .objective(&terms, &eta, &w)
            .expect("intercept-only start is finite");
        let mut trace = vec![f];
        let mut resid = vec![0.0; n];
        let mut grad = vec![0.0; dim];
        let mut hess = vec![0.0; dim * dim];
        let mut grad_norm = f64::INFINITY;

        for iter in 0..opts.max_iter {
            terms.residuals(&eta, &mut resid);
            d.transpose_mul_into(&resid, &mut grad[..p]);
            grad[p] = resid.iter().sum();
            for j in 0..p {
                grad[j] += 2.0 * self.ridge * w[j];
                if let Some(lin) = self.linear {
                    grad[j] += lin[j];
                }
            }
            grad_norm = norm_inf(&grad);
            if grad_norm <= opts.tol_grad_rel * f.abs().max(1.0) {
                return Ok(SmoothResult {
                    w,
                    b,
                    objective: f,
                    iterations: iter,
                    grad_norm,
                    converged: true,
                    trace,
                });
            }

            // H = (1/n) Σ μ_i [x_i; 1][x_i; 1]ᵀ + 2·ridge on the w block.
            hess.iter_mut().for_each(|h| *h = 0.0);
            let inv_n = 1.0 / n as f64;
            for i in 0..n {
                let mu = eta[i].exp() * inv_n;
                let row = d.row(i);
                for a in 0..p {
                    let ra = mu * row[a];
                    let line = &mut hess[a * dim..a * dim + dim];
                    for c in 0..=a {
                        line[c] += ra * row[c];
                    }
                    line[p] += ra;
                }
                hess[p * dim + p] += mu;
            }
            for a in 0..p {
                for c in 0..a {
                    hess[c * dim + a] = hess[a * dim + c];
                }
                hess[p * dim + a] = hess[a * dim + p];
                hess[a * dim + a] += 2.0 * self.ridge;
            }

            let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
            let mut shift = 0.0;
            let step = loop {
                let mut shifted = hess.clone();
                if shift > 0.0 {
                    for a in 0..dim {
                        shifted[a * dim + a] += shift;
                    }
                }
                if let Some(ch) = Cholesky::factor(&shifted, dim) {
                    break ch.solve(&neg_grad);
                }
                shift = if shift == 0.0 { 1e-10 * (1.0 + norm_inf(&hess)) } else { shift * 10.0 };
            };

            let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
            let mut alpha = 1.0;
            let mut accepted = false;
            let mut w_try = vec![0.0; p];
            let mut eta_try = vec![0.0; n];
            for _ in 0..60 {
                for j in 0..p {
                    w_try[j] = w[j] + alpha * step[j];
                }
                let b_try = b + alpha * step[p];
                d.linear_predictors_into(&w_try, b_try, &mut eta_try);
                if let Some(f_try) = self.objective(&terms, &eta_try, &w_try) {
                    // Inside the quadratic region the predicted decrease is
                    // below rounding; take the full step unless it visibly hurts.
                    let tiny = -slope <= 1e-10 * f.abs().max(1.0)
                        && f_try <= f + 1e-13 * f.abs().max(1.0);
                    if f_try <= f + 1e-4 * alpha * slope || (alpha == 1.0 && tiny) {
                        std::mem::swap(&mut w, &mut w_try);
                        std::mem::swap(&mut eta, &mut eta_try);
                        b = b_try;
                        f = f_try;
                        trace.push(f);
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // No descent left at working precision.
                return Ok(SmoothResult {
                    w,
                    b,
                    objective: f,
                    iterations: iter,
                    grad_norm,
                    converged: grad_norm <= 1e-6 * f.abs().max(1.0),
                    trace,
                });
            }
        }
        Ok(SmoothResult {
            w,
            b,
            objective: f,
            iterations: opts.max_iter,
            grad_norm,
            converged: false,
            trace,
        })
    }
}

/// Minimizes `L(w_J, b) + (1/γ)‖w_J‖²` over the features in `support`.
pub fn solve_restricted(support: &[usize], d: &Dataset, gamma: f64) -> Result<RestrictedSolution> {
    solve_restricted_with(support, d, gamma, &SmoothOptions::default())
}

pub fn solve_restricted_with(
    support: &[usize],
    d: &Dataset,
    gamma: f64,
    opts: &SmoothOptions,
) -> Result<RestrictedSolution> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig(format!("gamma = {gamma} must be positive")));
    }
    if let Some(&bad) = support.iter().find(|&&j| j >= d.m()) {
        return Err(Error::DimensionMismatch(format!(
            "support index {bad} out of range for {} features",
            d.m()
        )));
    }
    let sub = d.select_columns(support);
    let fit = SmoothFit {
        data: &sub,
        ridge: 1.0 / gamma,
        linear: None,
    }
    .solve(opts)?;
    if !fit.converged {
        log::warn!(
            "restricted solve on {} features stopped after {} iterations (grad {:e})",
            support.len(),
            fit.iterations,
            fit.grad_norm
        );
    }
    Ok(RestrictedSolution {
        support: support.to_vec(),
        w: fit.w,
        b: fit.b,
        objective: fit.objective,
        iterations: fit.iterations,
        grad_norm: fit.grad_norm,
        converged: fit.converged,
    })
}

/// `L(w, b) + (1/γ)‖w‖²` at full-length coefficients.
pub fn ridge_objective(c: &Coefficients, d: &Dataset, gamma: f64) -> Result<f64> {
    Ok(poisson_loss(c, d)?.value + norm2_sq(&c.w) / gamma)
}
