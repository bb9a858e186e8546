//! Internal feasibility heuristic: projected subgradient descent on a
//! squared-hinge violation measure, with seeded random restarts.
//!
//! The objective is
//!
//! ```text
//! f(x) = sum_blocks max(0, lambda_max(B(x)) + margin)^2
//!      + sum_{SPD vars} max(0, floor - lambda_min(V(x)))^2
//! ```
//!
//! minimized with Polyak-type steps (the optimal value of a strictly
//! feasible problem is zero) under projection of the sign-constrained
//! scalars. The routine reports infeasibility, it never proves it: a
//! returned assignment is certified by re-evaluating every block, while a
//! failure only means the heuristic found nothing. Export the problem in
//! SDPA format for an external solver when that matters.

use alloc::vec;
use alloc::vec::Vec;

use crate::lmi::{eval_scalarized, Assignment, LmiProblem, VarStructure};
use crate::mat::{self, Mat};
use crate::rng::Lcg64;

/// Solver options. `margin` is the strictness applied to every block
/// (`lambda_max <= -margin`); structural floors derive from it.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub margin: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Optional packed warm start tried before the random restarts.
    pub warm_start: Option<Vec<f64>>,
    /// Shrink unstructured (`Full`) variables toward zero after
    /// feasibility, as far as feasibility allows. Gain formulas divide
    /// these variables by the positive-definite ones, so an unpolished
    /// feasible point can carry needlessly violent gains.
    pub polish: bool,
    /// Restricts the shrink set to the named variables; `None` shrinks
    /// every `Full` variable. Use this when some `Full` variables sit in a
    /// denominator role (shrinking them would be counterproductive).
    pub polish_vars: Option<Vec<alloc::string::String>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            margin: 1e-6,
            max_iter: 4000,
            restarts: 12,
            seed: 0x5eed,
            warm_start: None,
            polish: true,
            polish_vars: None,
        }
    }
}

/// The heuristic found no feasible point. `best_residual` is the worst
/// block eigenvalue at the best iterate seen.
#[derive(Debug, Clone, PartialEq)]
pub struct Infeasible {
    pub best_residual: f64,
    pub iterations: usize,
}

/// Internal target for the smallest eigenvalue of positive-definite
/// variables. Well above the contractual floor of `margin * 1e-3`, which
/// keeps downstream inversions comfortably conditioned; homogeneous
/// problems can always scale up to meet it.
const SPD_TARGET: f64 = 1e-2;

struct SpdRange {
    offset: usize,
    n: usize,
}

/// Smallest eigenvalue of a packed symmetric variable.
fn spd_lambda_min(x: &[f64], r: &SpdRange) -> f64 {
    let mut v = Mat::zeros(r.n, r.n);
    let mut k = r.offset;
    for i in 0..r.n {
        for j in i..r.n {
            v[(i, j)] = x[k];
            v[(j, i)] = x[k];
            k += 1;
        }
    }
    mat::sym_eig(&v).expect("symmetric by construction").lambda_min()
}

/// Solves the feasibility problem. On success every block satisfies
/// `lambda_max <= -margin + 1e-8` (re-checked through the term-list
/// evaluation path) and positive-definite variables satisfy
/// `lambda_min >= margin * 1e-3`. Deterministic given identical inputs.
pub fn solve_feasibility(
    problem: &LmiProblem,
    opts: &SolveOptions,
) -> Result<Assignment, Infeasible> {
    let s = problem.scalarize();
    let n = s.n_scalars;

    let mut spd = Vec::new();
    let mut pos_floor_idx = Vec::new();
    let mut nonneg_idx = Vec::new();
    for (vi, v) in problem.vars.iter().enumerate() {
        match v.structure {
            VarStructure::SymmetricPosDef => {
                spd.push(SpdRange { offset: s.offsets[vi], n: v.rows });
            }
            VarStructure::PosScalar => pos_floor_idx.push(s.offsets[vi]),
            VarStructure::NonnegScalar => nonneg_idx.push(s.offsets[vi]),
            _ => {}
        }
    }
    let pos_floor = (opts.margin * 1e-3).max(1e-12);

    let project = |x: &mut [f64]| {
        for &k in &pos_floor_idx {
            if x[k] < pos_floor {
                x[k] = pos_floor;
            }
        }
        for &k in &nonneg_idx {
            if x[k] < 0.0 {
                x[k] = 0.0;
            }
        }
    };

    // f, grad, and the infeasibility measure at x: the worst of the
    // margin-adjusted block eigenvalues and the positive-definiteness
    // shortfall (a point is acceptable iff the measure is <= -margin)
    let objective = |x: &[f64], grad: &mut [f64]| -> (f64, f64) {
        for g in grad.iter_mut() {
            *g = 0.0;
        }
        let mut f = 0.0;
        let mut worst = f64::NEG_INFINITY;
        for b in &s.blocks {
            let m = eval_scalarized(b, x);
            let eig = mat::sym_eig(&m).expect("scalarized blocks are symmetric");
            let lmax = eig.lambda_max();
            if lmax + b.extra_margin > worst {
                worst = lmax + b.extra_margin;
            }
            let viol = lmax + opts.margin + b.extra_margin;
            if viol > 0.0 {
                f += viol * viol;
                let nb = b.size;
                let u: Vec<f64> = (0..nb).map(|i| eig.eigenvectors[(i, nb - 1)]).collect();
                for (k, g) in &b.basis {
                    // d lambda_max / d x_k = u^T G_k u
                    let mut q = 0.0;
                    for i in 0..nb {
                        let ui = u[i];
                        if ui == 0.0 {
                            continue;
                        }
                        for j in 0..nb {
                            q += ui * g[(i, j)] * u[j];
                        }
                    }
                    grad[*k] += 2.0 * viol * q;
                }
            }
        }
        for r in &spd {
            // unpack the symmetric variable from its packed triangle
            let mut v = Mat::zeros(r.n, r.n);
            let mut k = r.offset;
            for i in 0..r.n {
                for j in i..r.n {
                    v[(i, j)] = x[k];
                    v[(j, i)] = x[k];
                    k += 1;
                }
            }
            let eig = mat::sym_eig(&v).expect("symmetric by construction");
            let lmin = eig.lambda_min();
            if pos_floor - lmin > worst {
                worst = pos_floor - lmin;
            }
            let viol = SPD_TARGET - lmin;
            if viol > 0.0 {
                f += viol * viol;
                let u: Vec<f64> = (0..r.n).map(|i| eig.eigenvectors[(i, 0)]).collect();
                // d lambda_min / d v_ij = u_i u_j (times 2 off-diagonal)
                let mut k = r.offset;
                for i in 0..r.n {
                    for j in i..r.n {
                        let dl = if i == j { u[i] * u[i] } else { 2.0 * u[i] * u[j] };
                        grad[k] += -2.0 * viol * dl;
                        k += 1;
                    }
                }
            }
        }
        (f, worst)
    };

    let mut best_residual = f64::INFINITY;
    let mut total_iters = 0usize;
    let n_attempts = opts.restarts + usize::from(opts.warm_start.is_some());

    for attempt in 0..n_attempts {
        let mut x = if attempt == 0 && opts.warm_start.is_some() {
            let w = opts.warm_start.as_ref().unwrap();
            if w.len() != n {
                continue;
            }
            w.clone()
        } else {
            let r = attempt - usize::from(opts.warm_start.is_some());
            initial_point(problem, &s, opts.seed, r as u64)
        };
        project(&mut x);

        let acceptable = |x: &[f64]| -> bool {
            if !spd.iter().all(|r| spd_lambda_min(x, r) >= pos_floor) {
                return false;
            }
            for b in &s.blocks {
                let m = eval_scalarized(b, x);
                let lmax = mat::sym_eig(&m).expect("symmetric").lambda_max();
                if lmax + b.extra_margin > -opts.margin + 1e-8 {
                    return false;
                }
            }
            true
        };
        let try_accept = |x: &[f64]| -> Option<Assignment> {
            if !spd.iter().all(|r| spd_lambda_min(x, r) >= pos_floor) {
                return None;
            }
            let values = problem.unpack(x);
            match problem.check_assignment(&values, -opts.margin + 1e-8) {
                Ok(res) if res <= -opts.margin + 1e-8 => {
                    Some(Assignment { values, residual: res })
                }
                _ => None,
            }
        };
        // Shrink-freeze-restore polish: repeatedly scale the selected
        // `Full` variables down, then let the feasibility descent reshape
        // the remaining variables around the frozen numerators. Gain
        // formulas divide the `Full` variables by the positive-definite
        // ones, so each accepted round reduces the extracted gains.
        let deep_polish = |x0: &[f64]| -> Vec<f64> {
            let ranges: Vec<(usize, usize)> = problem
                .vars
                .iter()
                .enumerate()
                .filter(|(_, v)| {
                    v.structure == VarStructure::Full
                        && opts
                            .polish_vars
                            .as_ref()
                            .map_or(true, |names| names.iter().any(|n| *n == v.name))
                })
                .map(|(vi, v)| (s.offsets[vi], v.n_scalars()))
                .collect();
            let mut cur = x0.to_vec();
            if ranges.is_empty() {
                return cur;
            }
            let mut frozen = vec![false; n];
            for &(off, len) in &ranges {
                for k in off..off + len {
                    frozen[k] = true;
                }
            }
            let mut grad = vec![0.0; n];
            let mut restore = |cand: &mut Vec<f64>| -> bool {
                if acceptable(cand) {
                    return true;
                }
                for it in 0..1500 {
                    let (f, worst) = objective(cand, &mut grad);
                    if worst <= -opts.margin + 1e-8 {
                        break;
                    }
                    if f == 0.0 {
                        break;
                    }
                    for (g, fr) in grad.iter_mut().zip(&frozen) {
                        if *fr {
                            *g = 0.0;
                        }
                    }
                    let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
                    if gnorm2 <= 1e-300 {
                        break;
                    }
                    let step =
                        (f / gnorm2).min(10.0 / (1.0 + it as f64 / 50.0) / mat::sqrt(gnorm2));
                    for k in 0..n {
                        cand[k] -= step * grad[k];
                    }
                    project(cand);
                }
                acceptable(cand)
            };
            // gain proxy: numerator norm over the smallest eigenvalue of
            // the positive-definite variables; moves must improve it
            let metric = |x: &[f64]| -> f64 {
                let mut rn = 0.0;
                for &(off, len) in &ranges {
                    for k in off..off + len {
                        rn += x[k] * x[k];
                    }
                }
                let rn = mat::sqrt(rn);
                let mut lm = f64::INFINITY;
                for r in &spd {
                    lm = lm.min(spd_lambda_min(x, r));
                }
                if lm.is_finite() {
                    if lm <= 0.0 {
                        f64::INFINITY
                    } else {
                        rn / lm
                    }
                } else {
                    rn
                }
            };
            let mut m_cur = metric(&cur);
            'rounds: for _round in 0..120 {
                // move (a): scale the selected numerators down
                for shrink in [0.8, 0.95] {
                    let mut cand = cur.clone();
                    for &(off, len) in &ranges {
                        for k in off..off + len {
                            cand[k] *= shrink;
                        }
                    }
                    if restore(&mut cand) {
                        let m = metric(&cand);
                        if m < m_cur * 0.999 {
                            cur = cand;
                            m_cur = m;
                            continue 'rounds;
                        }
                    }
                }
                // move (b): grow everything else, numerators frozen
                for grow in [1.5, 1.15, 1.05] {
                    let mut cand = cur.clone();
                    for (k, fr) in frozen.iter().enumerate() {
                        if !fr {
                            cand[k] *= grow;
                        }
                    }
                    if restore(&mut cand) {
                        let m = metric(&cand);
                        if m < m_cur * 0.999 {
                            cur = cand;
                            m_cur = m;
                            continue 'rounds;
                        }
                    }
                }
                break;
            }
            cur
        };
        let finish = |x: &[f64], fallback: Assignment| -> Assignment {
            if !opts.polish {
                return fallback;
            }
            let polished = deep_polish(x);
            try_accept(&polished).unwrap_or(fallback)
        };

        let mut grad = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let mut stall = 0usize;
        let mut f_prev = f64::INFINITY;
        for it in 0..opts.max_iter {
            total_iters += 1;
            let (f, worst) = objective(&x, &mut grad);
            if worst < best_residual {
                best_residual = worst;
            }
            if worst <= -opts.margin + 1e-8 {
                if let Some(a) = try_accept(&x) {
                    return Ok(finish(&x, a));
                }
                // certification disagreed; keep iterating
                stall += 1;
            } else if worst < 0.0 && it % 20 == 0 {
                // strictly inside but short of the margin: many of these
                // problems are homogeneous, so a scaled copy may already be
                // acceptable
                let scale = 1.5 * opts.margin / (-worst);
                if scale.is_finite() && scale > 1.0 {
                    for (s, v) in scratch.iter_mut().zip(&x) {
                        *s = v * scale;
                    }
                    if let Some(a) = try_accept(&scratch) {
                        let xs = scratch.clone();
                        return Ok(finish(&xs, a));
                    }
                }
            }
            if f == 0.0 {
                // fully inside the penalty's comfort zone but the
                // acceptance test above did not fire (margins disagree);
                // nothing left to descend on
                break;
            }
            let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
            if gnorm2 <= 1e-300 {
                break;
            }
            // Polyak step toward the known optimal value zero, with a
            // diminishing cap to keep early steps sane
            let step = (f / gnorm2).min(10.0 / (1.0 + it as f64 / 50.0) / mat::sqrt(gnorm2));
            for k in 0..n {
                x[k] -= step * grad[k];
            }
            project(&mut x);
            if f_prev - f <= 1e-16 * f_prev.max(1.0) {
                stall += 1;
                if stall > 400 {
                    break;
                }
            } else {
                stall = 0;
            }
            f_prev = f;
        }
    }

    Err(Infeasible { best_residual, iterations: total_iters })
}

/// Seeded start point: positive-definite variables start near a scaled
/// identity, everything else near zero, with the scale cycled across
/// restarts to diversify basins.
fn initial_point(
    problem: &LmiProblem,
    s: &crate::lmi::Scalarized,
    seed: u64,
    restart: u64,
) -> Vec<f64> {
    let mut rng = Lcg64::new(seed ^ restart.wrapping_mul(0x9e3779b97f4a7c15));
    let scale = [1.0, 0.3, 3.0, 10.0, 0.05][restart as usize % 5];
    let mut x = vec![0.0; s.n_scalars];
    for (vi, v) in problem.vars.iter().enumerate() {
        let off = s.offsets[vi];
        match v.structure {
            VarStructure::SymmetricPosDef => {
                let mut k = off;
                for i in 0..v.rows {
                    for j in i..v.rows {
                        x[k] = if i == j {
                            scale * (1.0 + 0.3 * rng.next_f64())
                        } else {
                            scale * 0.05 * rng.uniform(-1.0, 1.0)
                        };
                        k += 1;
                    }
                }
            }
            VarStructure::Symmetric | VarStructure::Full => {
                for k in off..off + v.n_scalars() {
                    x[k] = scale * 0.3 * rng.uniform(-1.0, 1.0);
                }
            }
            VarStructure::NonnegScalar | VarStructure::PosScalar => {
                x[off] = scale * (0.5 + rng.next_f64());
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{LmiBlock, LmiProblem, VarStructure};
    use crate::mat::Mat;

    #[test]
    fn scalar_interval_problem() {
        // p positive scalar with block [p - 2] <= 0: feasible p in (0, 2]
        let mut prob = LmiProblem::new();
        let vp = prob.add_var("p", 1, 1, VarStructure::PosScalar).unwrap();
        let mut b = LmiBlock::new("interval", 1);
        b.add_scaled(vp, Mat::scalar(1.0));
        b.add_const(&Mat::scalar(-2.0));
        prob.blocks.push(b);
        let a = solve_feasibility(&prob, &SolveOptions::default()).unwrap();
        let p = a.scalar("p").unwrap();
        assert!(p > 0.0 && p <= 2.0, "p = {p}");
        assert!(a.residual <= -1e-6 + 1e-8);
    }

    #[test]
    fn infeasible_toy_reports_residual() {
        // block [p + 1] <= 0 with p >= 0 is infeasible; residual >= 1
        let mut prob = LmiProblem::new();
        let vp = prob.add_var("p", 1, 1, VarStructure::NonnegScalar).unwrap();
        let mut b = LmiBlock::new("infeasible", 1);
        b.add_scaled(vp, Mat::scalar(1.0));
        b.add_const(&Mat::scalar(1.0));
        prob.blocks.push(b);
        let mut opts = SolveOptions::default();
        opts.max_iter = 300;
        opts.restarts = 3;
        let err = solve_feasibility(&prob, &opts).unwrap_err();
        assert!(err.best_residual >= 1.0 - 1e-9);
    }

    #[test]
    fn lyapunov_style_matrix_problem() {
        // find P > 0 with A^T P + P A <= -margin for a stable A
        let a = Mat::from_rows(&[&[-1.0, 2.0], &[0.0, -3.0]]);
        let mut prob = LmiProblem::new();
        let vp = prob.add_var("P", 2, 2, VarStructure::SymmetricPosDef).unwrap();
        let mut b = LmiBlock::new("lyap", 2);
        b.add_sym_pair(Mat::identity(2), vp, a.clone());
        prob.blocks.push(b);
        let asg = solve_feasibility(&prob, &SolveOptions::default()).unwrap();
        let p = asg.get("P").unwrap();
        assert!(mat::lambda_min(p).unwrap() > 0.0);
        let lyap = &(&a.transpose() * p) + &(p * &a);
        assert!(mat::lambda_max(&lyap.symmetrized()).unwrap() <= -1e-6 + 1e-8);
    }

    #[test]
    fn deterministic_given_inputs() {
        let a = Mat::from_rows(&[&[-1.0, 0.5], &[0.3, -2.0]]);
        let build = || {
            let mut prob = LmiProblem::new();
            let vp = prob.add_var("P", 2, 2, VarStructure::SymmetricPosDef).unwrap();
            let mut b = LmiBlock::new("lyap", 2);
            b.add_sym_pair(Mat::identity(2), vp, a.clone());
            prob.blocks.push(b);
            prob
        };
        let a1 = solve_feasibility(&build(), &SolveOptions::default()).unwrap();
        let a2 = solve_feasibility(&build(), &SolveOptions::default()).unwrap();
        assert_eq!(a1.get("P").unwrap().data(), a2.get("P").unwrap().data());
    }
}
