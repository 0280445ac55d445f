//! Exact solver: best-first branch-and-bound on the indicators, with
//! perspective-relaxation node bounds certified through the dual vector, and
//! a brute-force enumeration used as a test oracle.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::{solve_restricted, Coefficients};
use crate::relax::{certificate_at, solve_relaxation_with, RelaxOptions};
use crate::screen::{apply_rules, safe_screen_with, top_by_dual, ScreenOptions};

/// Indicators within this distance of 0 or 1 count as integral.
pub const INTEGRALITY_TOL: f64 = 1e-9;

/// Largest number of supports `exhaustive_solve` will enumerate.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    TimeLimit,
    NodeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub incumbent: Option<Coefficients>,
    /// Zero-based indices of the selected features.
    pub support: Vec<usize>,
    pub obj: Option<f64>,
    pub lb: f64,
    pub gap_percent: f64,
    pub nodes: usize,
    pub status: SolveStatus,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnbOptions {
    pub time_limit_s: Option<f64>,
    pub node_limit: Option<usize>,
    pub gap_tol_rel: f64,
    pub screen_first: bool,
    /// Apply the pegging rules again at every node with the node's dual.
    pub node_screening: bool,
    pub root_relax: RelaxOptions,
    pub node_relax: RelaxOptions,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self {
            time_limit_s: None,
            node_limit: None,
            gap_tol_rel: 1e-6,
            screen_first: true,
            node_screening: false,
            root_relax: RelaxOptions::default(),
            node_relax: RelaxOptions {
                tol_rel: 1e-6,
                ..RelaxOptions::default()
            },
        }
    }
}

/// `100·(obj − lb)/obj`; 100 without a feasible solution. Slightly negative
/// gaps from rounding are clamped to zero.
pub fn gap_percent(obj: Option<f64>, lb: f64) -> f64 {
    match obj {
        None => 100.0,
        Some(obj) => {
            let gap = 100.0 * (obj - lb) / obj;
            if gap < 0.0 {
                if gap < -1e-6 {
                    log::warn!("lower bound {lb} exceeds objective {obj}; reporting zero gap");
                }
                0.0
            } else {
                gap
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoFractional;

/// Free index maximizing `z_j (1 − z_j)`; ties go to the larger `λ̄_j²`, then
/// to the lower index.
pub fn branching_variable(
    z: &[f64],
    free: &[usize],
    lambda_sq: &[f64],
) -> std::result::Result<usize, NoFractional> {
    let mut best: Option<(f64, f64, usize)> = None;
    for &j in free {
        let zj = z[j];
        if zj <= INTEGRALITY_TOL || zj >= 1.0 - INTEGRALITY_TOL {
            continue;
        }
        let score = zj * (1.0 - zj);
        let better = match best {
            None => true,
            Some((s, l, idx)) => {
                score > s || (score == s && (lambda_sq[j] > l || (lambda_sq[j] == l && j < idx)))
            }
        };
        if better {
            best = Some((score, lambda_sq[j], j));
        }
    }
    best.map(|b| b.2).ok_or(NoFractional)
}

#[derive(Debug, Clone)]
struct Node {
    fixed0: Vec<usize>,
    fixed1: Vec<usize>,
    lower_bound: f64,
    depth: usize,
    id: usize,
    warm: Option<Coefficients>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Max-heap order: the smallest bound, then the deepest, then the oldest
    // node compares greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .lower_bound
            .total_cmp(&self.lower_bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

struct Incumbent {
    obj: f64,
    coef: Coefficients,
    /// In the original index space, ascending.
    support: Vec<usize>,
}

impl Incumbent {
    /// Lower objective wins; exact ties go to the lexicographically smaller
    /// support.
    fn offer(slot: &mut Option<Incumbent>, cand: Incumbent) -> bool {
        let take = match slot {
            None => true,
            Some(cur) => {
                cand.obj < cur.obj || (cand.obj == cur.obj && cand.support < cur.support)
            }
        };
        if take {
            *slot = Some(cand);
        }
        take
    }
}

fn fathomed(lb: f64, inc: &Option<Incumbent>, tol: f64) -> bool {
    match inc {
        Some(inc) => lb >= inc.obj - (tol * inc.obj.abs()).max(1e-12),
        None => false,
    }
}

/// Solves `min L(w, b) + (1/γ)‖w‖²` subject to `‖w‖₀ ≤ k`.
pub fn branch_and_bound(d: &Dataset, gamma: f64, k: usize, opts: &BnbOptions) -> Result<SolveReport> {
    let start = Instant::now();
    let m = d.m();
    if k == 0 || k > m {
        return Err(Error::InvalidConfig(format!("k = {k} must lie in [1, m = {m}]")));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig(format!("gamma = {gamma} must be positive")));
    }
    if d.total_count() == 0 {
        return Err(Error::DegenerateCounts);
    }
    let elapsed = || start.elapsed().as_secs_f64();

    if k == m {
        let all: Vec<usize> = (0..m).collect();
        let fit = solve_restricted(&all, d, gamma)?;
        let coef = fit.embed(m);
        return Ok(SolveReport {
            support: coef.support(),
            incumbent: Some(coef),
            obj: Some(fit.objective),
            lb: fit.objective,
            gap_percent: 0.0,
            nodes: 0,
            status: SolveStatus::Optimal,
            wall_time_s: elapsed(),
        });
    }

    let mut incumbent: Option<Incumbent> = None;
    let mut global_lb = f64::NEG_INFINITY;
    let (root0, root1) = if opts.screen_first {
        let scr = safe_screen_with(
            d,
            gamma,
            k,
            &ScreenOptions {
                relax: opts.root_relax,
                repeat: false,
            },
        )?;
        global_lb = scr.certificate.v_lower;
        Incumbent::offer(
            &mut incumbent,
            Incumbent {
                obj: scr.ub,
                support: scr.greedy_support.clone(),
                coef: scr.incumbent.clone(),
            },
        );
        (scr.fixed0, scr.fixed1)
    } else {
        (Vec::new(), Vec::new())
    };

    // Work on the columns that survived screening.
    let mut is_zero = vec![false; m];
    root0.iter().for_each(|&j| is_zero[j] = true);
    let active: Vec<usize> = (0..m).filter(|&j| !is_zero[j]).collect();
    let mut to_local = vec![usize::MAX; m];
    for (loc, &j) in active.iter().enumerate() {
        to_local[j] = loc;
    }
    let reduced;
    let data = if root0.is_empty() {
        d
    } else {
        reduced = d.select_columns(&active);
        &reduced
    };
    let p = data.m();
    let root1_local: Vec<usize> = root1.iter().map(|&j| to_local[j]).collect();

    let offer_local = |incumbent: &mut Option<Incumbent>, support_local: &[usize]| -> Result<()> {
        let fit = solve_restricted(support_local, data, gamma)?;
        let mut coef = Coefficients::zeros(m);
        for (&loc, &v) in support_local.iter().zip(&fit.w) {
            coef.w[active[loc]] = v;
        }
        coef.b = fit.b;
        let mut support: Vec<usize> = support_local.iter().map(|&l| active[l]).collect();
        support.sort_unstable();
        Incumbent::offer(
            incumbent,
            Incumbent {
                obj: fit.objective,
                coef,
                support,
            },
        );
        Ok(())
    };

    let mut heap = BinaryHeap::new();
    heap.push(Node {
        fixed0: Vec::new(),
        fixed1: root1_local,
        lower_bound: global_lb,
        depth: 0,
        id: 0,
        warm: None,
    });
    let mut next_id = 1;
    let mut nodes = 0usize;
    let mut status = SolveStatus::Optimal;

    while let Some(node) = heap.peek() {
        if fathomed(node.lower_bound, &incumbent, opts.gap_tol_rel) {
            heap.clear();
            break;
        }
        if let Some(limit) = opts.time_limit_s {
            if elapsed() >= limit {
                status = SolveStatus::TimeLimit;
                break;
            }
        }
        if let Some(limit) = opts.node_limit {
            if nodes >= limit {
                status = SolveStatus::NodeLimit;
                break;
            }
        }
        let node = heap.pop().expect("peeked");
        if node.id != 0 {
            nodes += 1;
        }

        let mut fixed_state = vec![0u8; p];
        node.fixed0.iter().for_each(|&j| fixed_state[j] = 1);
        node.fixed1.iter().for_each(|&j| fixed_state[j] = 2);
        let free: Vec<usize> = (0..p).filter(|&j| fixed_state[j] == 0).collect();
        let budget = k - node.fixed1.len();

        if free.is_empty() || budget == 0 {
            // Support is fully determined by the fixing.
            offer_local(&mut incumbent, &node.fixed1)?;
            continue;
        }
        if budget >= free.len() {
            let mut support = node.fixed1.clone();
            support.extend(&free);
            support.sort_unstable();
            offer_local(&mut incumbent, &support)?;
            continue;
        }

        let relax_opts = if node.id == 0 { opts.root_relax } else { opts.node_relax };
        let sol = solve_relaxation_with(
            data,
            gamma,
            k,
            &node.fixed0,
            &node.fixed1,
            &relax_opts,
            node.warm.as_ref(),
        )?;
        let cert = certificate_at(&sol.w_star, data, gamma, k, &node.fixed0, &node.fixed1)?;
        let mut node_lb = node.lower_bound.max(cert.v_lower);

        // Dual-guided rounding at every node.
        let mut guess = node.fixed1.clone();
        guess.extend(top_by_dual(&cert.lambda_bar, &free, budget));
        guess.sort_unstable();
        offer_local(&mut incumbent, &guess)?;
        if fathomed(node_lb, &incumbent, opts.gap_tol_rel) {
            continue;
        }

        let lambda_sq: Vec<f64> = cert.lambda_bar.iter().map(|l| l * l).collect();
        let mut z = sol.z_star.clone();
        let mut branch_on = branching_variable(&z, &free, &lambda_sq);
        if branch_on.is_err() {
            let mut support = node.fixed1.clone();
            support.extend(free.iter().filter(|&&j| z[j] > 0.5));
            support.sort_unstable();
            offer_local(&mut incumbent, &support)?;
            if fathomed(node_lb, &incumbent, opts.gap_tol_rel) {
                continue;
            }
            // Integral but not yet certified: tighten the node solve.
            let tight = RelaxOptions {
                tol_rel: 1e-11,
                ..relax_opts
            };
            let warm = Coefficients {
                w: sol.w_star.clone(),
                b: sol.b_star,
            };
            let sol = solve_relaxation_with(
                data,
                gamma,
                k,
                &node.fixed0,
                &node.fixed1,
                &tight,
                Some(&warm),
            )?;
            let cert = certificate_at(&sol.w_star, data, gamma, k, &node.fixed0, &node.fixed1)?;
            node_lb = node_lb.max(cert.v_lower);
            if fathomed(node_lb, &incumbent, opts.gap_tol_rel) {
                continue;
            }
            z = sol.z_star;
            branch_on = branching_variable(&z, &free, &lambda_sq);
        }
        let j = match branch_on {
            Ok(j) => j,
            // Still integral: split on the free coordinate with the largest
            // indicator, which is always a valid partition.
            Err(NoFractional) => *free
                .iter()
                .max_by(|&&a, &&b| z[a].total_cmp(&z[b]).then(b.cmp(&a)))
                .expect("free is non-empty"),
        };

        let (mut child0, mut child1) = (node.fixed0.clone(), node.fixed1.clone());
        if opts.node_screening {
            let inc_obj = incumbent.as_ref().map_or(f64::INFINITY, |i| i.obj);
            let (add0, add1) = apply_rules(&cert, inc_obj, gamma, &free);
            child0.extend(&add0);
            child1.extend(&add1);
        }
        let warm = Some(Coefficients {
            w: sol.w_star.clone(),
            b: sol.b_star,
        });

        let mut one_fix0 = child0.clone();
        let mut one_fix1 = child1.clone();
        if !one_fix1.contains(&j) && !one_fix0.contains(&j) {
            one_fix1.push(j);
        }
        if !one_fix0.contains(&j) && one_fix1.len() <= k {
            one_fix0.sort_unstable();
            one_fix1.sort_unstable();
            heap.push(Node {
                fixed0: one_fix0,
                fixed1: one_fix1,
                lower_bound: node_lb,
                depth: node.depth + 1,
                id: next_id,
                warm: warm.clone(),
            });
            next_id += 1;
        }
        let mut zero_fix0 = child0;
        let mut zero_fix1 = child1;
        if !zero_fix1.contains(&j) {
            if !zero_fix0.contains(&j) {
                zero_fix0.push(j);
            }
            zero_fix0.sort_unstable();
            zero_fix1.sort_unstable();
            heap.push(Node {
                fixed0: zero_fix0,
                fixed1: zero_fix1,
                lower_bound: node_lb,
                depth: node.depth + 1,
                id: next_id,
                warm,
            });
            next_id += 1;
        }
    }

    let open_lb = heap.iter().map(|n| n.lower_bound).fold(f64::INFINITY, f64::min);
    let inc_obj = incumbent.as_ref().map(|i| i.obj);
    let lb = match (status, inc_obj) {
        (SolveStatus::Optimal, Some(obj)) => {
            // Every remaining node is fathomed against the incumbent.
            open_lb.min(obj).max(global_lb)
        }
        (SolveStatus::Optimal, None) => global_lb,
        _ => open_lb.max(global_lb).min(inc_obj.unwrap_or(f64::INFINITY)),
    };
    let (incumbent_coef, support) = match incumbent {
        Some(inc) => (Some(inc.coef), inc.support),
        None => (None, Vec::new()),
    };
    Ok(SolveReport {
        gap_percent: gap_percent(inc_obj, lb),
        incumbent: incumbent_coef,
        support,
        obj: inc_obj,
        lb,
        nodes,
        status,
        wall_time_s: elapsed(),
    })
}

fn binomial(n: usize, r: usize) -> u128 {
    let r = r.min(n - r.min(n));
    (0..r).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of supports of size at most `k` among `m` features.
pub fn support_count(m: usize, k: usize) -> u128 {
    (0..=k.min(m)).map(|r| binomial(m, r)).sum()
}

/// Visits every subset of `0..m` with size ≤ `k` in lexicographic order per size.
fn for_each_support(m: usize, k: usize, mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    for size in 0..=k.min(m) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            f(&idx)?;
            // Advance to the next combination.
            let mut i = size;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if idx[i] < m - size + i {
                    idx[i] += 1;
                    for t in i + 1..size {
                        idx[t] = idx[t - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    i = usize::MAX;
                    break;
                }
            }
            if size == 0 || i == usize::MAX {
                break;
            }
        }
    }
    Ok(())
}

/// Restricted objective of every support of size ≤ `k`.
pub fn enumerate_supports(d: &Dataset, gamma: f64, k: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    let count = support_count(d.m(), k);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::TooLarge {
            count,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    for_each_support(d.m(), k, |s| {
        let fit = solve_restricted(s, d, gamma)?;
        out.push((s.to_vec(), fit.objective));
        Ok(())
    })?;
    Ok(out)
}

/// Brute-force optimum over all supports of size ≤ `k`.
pub fn exhaustive_solve(d: &Dataset, gamma: f64, k: usize) -> Result<SolveReport> {
    let start = Instant::now();
    let all = enumerate_supports(d, gamma, k)?;
    let (best, _) = all
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
        .map(|(_, s)| s.clone())
        .expect("the empty support is always enumerated");
    let fit = solve_restricted(&best, d, gamma)?;
    Ok(SolveReport {
        incumbent: Some(fit.embed(d.m())),
        support: best,
        obj: Some(fit.objective),
        lb: fit.objective,
        gap_percent: 0.0,
        nodes: all.len(),
        status: SolveStatus::Optimal,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_examples() {
        assert!((gap_percent(Some(10.0), 9.0) - 10.0).abs() < 1e-12);
        assert_eq!(gap_percent(Some(3.0), 3.0), 0.0);
        assert_eq!(gap_percent(None, 1.0), 100.0);
        assert_eq!(gap_percent(Some(3.0), 3.0 + 1e-12), 0.0);
    }

    #[test]
    fn branching_examples() {
        assert_eq!(branching_variable(&[1.0, 0.5, 0.0], &[0, 1, 2], &[0.0; 3]), Ok(1));
        assert_eq!(branching_variable(&[0.5, 0.5], &[0, 1], &[4.0, 9.0]), Ok(1));
        assert_eq!(branching_variable(&[0.5, 0.5], &[0, 1], &[9.0, 9.0]), Ok(0));
        assert_eq!(branching_variable(&[1.0, 0.0], &[0, 1], &[0.0; 2]), Err(NoFractional));
        // Fixed coordinates are never chosen.
        assert_eq!(branching_variable(&[0.5, 0.3], &[1], &[0.0; 2]), Ok(1));
    }

    #[test]
    fn support_enumeration_counts() {
        assert_eq!(support_count(8, 2), 37);
        let mut seen = Vec::new();
        for_each_support(4, 2, |s| {
            seen.push(s.to_vec());
            Ok(())
        })
        .unwrap();
        assert_eq!(seen.len(), 11);
        assert_eq!(seen[0], Vec::<usize>::new());
        assert_eq!(seen[5], vec![0, 1]);
        assert_eq!(seen[10], vec![2, 3]);
    }

    #[test]
    fn node_order_is_best_first() {
        let mk = |lb: f64, depth: usize, id: usize| Node {
            fixed0: vec![],
            fixed1: vec![],
            lower_bound: lb,
            depth,
            id,
            warm: None,
        };
        let mut heap = BinaryHeap::new();
        heap.push(mk(2.0, 0, 0));
        heap.push(mk(1.0, 1, 1));
        heap.push(mk(1.0, 2, 2));
        heap.push(mk(1.0, 2, 3));
        let order: Vec<usize> = std::iter::from_fn(|| heap.pop().map(|n| n.id)).collect();
        assert_eq!(order, vec![2, 3, 1, 0]);
    }
}
