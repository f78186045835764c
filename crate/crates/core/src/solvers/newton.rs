//! Damped Newton on the convex dual of the regularized problem.
//!
//! With `a_ij = α_i + β_j + λ m_ij` and `u = exp_q(a)^{-1}`, the plan in KKT
//! form is `p = e u` and the dual function
//!
//! `Φ(α, β) = Σ_ij (e/q) u(a_ij)^q + α·r + β·c`
//!
//! is convex with `∇Φ = (r - P1, c - Pᵀ1)`. Its Hessian is the weighted
//! bipartite Laplacian with weights `p / (1 + (1-q) a)`. For `q > 1` cells
//! past the cutoff have zero weight, so this is a semismooth Newton method.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::qmath::{is_classical, pow0, q_exp_recip};
use crate::transport::{kernel_scale, QParams, TransportProblem};

// Bases below this are treated as this when weighting, so cells right at
// the cutoff cannot blow up the Hessian for q > 2.
const BASE_FLOOR: f64 = 1e-6;

pub(crate) struct NewtonOutcome {
    pub duals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖P1 - r‖₁ + ‖Pᵀ1 - c‖₁` at each accepted iterate.
    pub residuals: Vec<f64>,
}

struct Eval {
    phi: f64,
    grad: DVector<f64>,
    plan: Array2<f64>,
    base: Array2<f64>,
}

fn evaluate(x: &[f64], prob: &TransportProblem, params: &QParams) -> Option<Eval> {
    let (n, m) = (prob.rows(), prob.cols());
    let (q, lambda) = (params.q, params.lambda);
    let e = kernel_scale(q);
    let k = 1.0 - q;
    let cost = prob.cost();
    let mut plan = Array2::zeros((n, m));
    let mut base = Array2::zeros((n, m));
    let mut phi = 0.0;
    for i in 0..n {
        for j in 0..m {
            let a = x[i] + x[n + j] + lambda * cost[[i, j]];
            let b = if is_classical(q) { 1.0 } else { 1.0 + k * a };
            // outside the domain of exp_q for q < 1
            if k > 0.0 && b <= 0.0 {
                return None;
            }
            let u = q_exp_recip(a, q);
            if !u.is_finite() || u == f64::MAX {
                return None;
            }
            phi += e / q * pow0(u, q);
            plan[[i, j]] = e * u;
            base[[i, j]] = b;
        }
    }
    let mut grad = DVector::zeros(n + m);
    for (i, &r) in prob.r().iter().enumerate() {
        phi += x[i] * r;
        grad[i] = r - plan.row(i).sum();
    }
    for (j, &c) in prob.c().iter().enumerate() {
        phi += x[n + j] * c;
        grad[n + j] = c - plan.column(j).sum();
    }
    Some(Eval { phi, grad, plan, base })
}

/// Minimizes `Φ` from `x0 = (α, β)`, keeping `α_0` fixed. Stops once the
/// total ℓ1 marginal residual is below `tol`.
pub(crate) fn dual_newton(prob: &TransportProblem, params: &QParams, x0: Vec<f64>, tol: f64, max_iters: usize) -> NewtonOutcome {
    let (n, m) = (prob.rows(), prob.cols());
    let dim = n + m - 1;
    let mut x = x0;
    let mut out = NewtonOutcome { duals: Vec::new(), iterations: 0, converged: false, residuals: Vec::new() };
    let Some(mut cur) = evaluate(&x, prob, params) else {
        out.duals = x;
        return out;
    };
    for it in 1..=max_iters {
        let gnorm = cur.grad.lp_norm(1);
        if gnorm < tol {
            out.converged = true;
            break;
        }
        // Hessian over the free coordinates 1..n+m (coordinate 0 is pinned)
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for ((i, j), &p) in cur.plan.indexed_iter() {
            if p <= 0.0 {
                continue;
            }
            let w = p / cur.base[[i, j]].max(BASE_FLOOR);
            let (a, b) = (i, n + j);
            if a > 0 {
                h[(a - 1, a - 1)] += w;
            }
            h[(b - 1, b - 1)] += w;
            if a > 0 {
                h[(a - 1, b - 1)] += w;
                h[(b - 1, a - 1)] += w;
            }
        }
        // Levenberg ridge: keeps steps finite when every cell of a row is
        // cut off, and vanishes at the solution.
        let scale = (0..dim).map(|i| h[(i, i)]).fold(0.0, f64::max);
        let ridge = 1e-12 * scale + 1e-2 * gnorm;
        for i in 0..dim {
            h[(i, i)] += ridge;
        }
        let g = cur.grad.rows(1, dim).into_owned();
        let d = match h.clone().cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => match h.lu().solve(&(-&g)) {
                Some(d) => d,
                None => break,
            },
        };
        let slope = g.dot(&d);
        if !(slope < 0.0) {
            break;
        }

        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-20 {
            let mut trial = x.clone();
            for i in 0..dim {
                trial[i + 1] += t * d[i];
            }
            if let Some(ev) = evaluate(&trial, prob, params) {
                let armijo = ev.phi <= cur.phi + 1e-4 * t * slope;
                // near the optimum Φ stops resolving; fall back on the gradient
                let flat = ev.phi <= cur.phi + 1e-14 * cur.phi.abs() && ev.grad.lp_norm(1) < gnorm;
                if armijo || flat {
                    accepted = Some((trial, ev));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, ev)) = accepted else { break };
        x = trial;
        cur = ev;
        out.iterations = it;
        out.residuals.push(cur.grad.lp_norm(1));
    }
    if !out.converged {
        out.converged = cur.grad.lp_norm(1) < tol;
    }
    out.duals = x;
    out
}

pub(crate) struct PrimalDualOutcome {
    pub plan: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct PdState {
    /// Fischer-Burmeister residual `p + g - √(p² + g²)` per cell.
    f: Array2<f64>,
    /// `q p^{q-1} - B` per cell.
    g: Array2<f64>,
    /// Row then column marginal residuals.
    res: DVector<f64>,
    merit: f64,
}

fn pd_state(p: &Array2<f64>, x: &[f64], prob: &TransportProblem, params: &QParams) -> PdState {
    let (n, m) = (prob.rows(), prob.cols());
    let (q, lambda) = (params.q, params.lambda);
    let cost = prob.cost();
    let g = Array2::from_shape_fn((n, m), |(i, j)| {
        let a = x[i] + x[n + j] + lambda * cost[[i, j]];
        q * p[[i, j]].max(0.0).powf(q - 1.0) - (1.0 + (1.0 - q) * a)
    });
    let f = Array2::from_shape_fn((n, m), |ij| p[ij] + g[ij] - p[ij].hypot(g[ij]));
    let mut res = DVector::zeros(n + m);
    for (i, &r) in prob.r().iter().enumerate() {
        res[i] = p.row(i).sum() - r;
    }
    for (j, &c) in prob.c().iter().enumerate() {
        res[n + j] = p.column(j).sum() - c;
    }
    let merit = 0.5 * (f.iter().map(|v| v * v).sum::<f64>() + res.norm_squared());
    PdState { f, g, res, merit }
}

/// Semismooth Newton on the KKT system of the regularized problem for
/// `q > 1`, in the plan and the duals jointly:
///
/// `p ≥ 0`, `g = q p^{q-1} - B(α, β) ≥ 0`, `p g = 0`, `P1 = r`, `Pᵀ1 = c`,
///
/// with the complementarity written through the Fischer-Burmeister function.
/// Near the cutoff the plan moves like `B^{1/(q-1)}`, so a cell with a
/// tiny base ruins the dual linearization; in `p` the same cell is benign.
/// Each step eliminates the plan and solves a Laplacian system in the
/// duals. Stops when both the marginal residual (ℓ1) and the largest
/// complementarity residual are below `tol`.
// Element of the generalized Jacobian of the Fischer-Burmeister function at
// its kink.
const FB_KINK: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;

pub(crate) fn primal_dual_newton(
    prob: &TransportProblem,
    params: &QParams,
    p0: &Array2<f64>,
    x0: Vec<f64>,
    tol: f64,
    max_iters: usize,
) -> PrimalDualOutcome {
    let (n, m) = (prob.rows(), prob.cols());
    let q = params.q;
    let dim = n + m - 1;
    let mut p = p0.clone();
    let mut x = x0;
    let mut st = pd_state(&p, &x, prob, params);
    let mut iterations = 0;
    let done = |st: &PdState| st.res.lp_norm(1) < tol && st.f.iter().all(|v| v.abs() < tol);
    for it in 1..=max_iters {
        if done(&st) {
            break;
        }
        // d_p dp + d_g (φ'(p) dp + (q-1)(dα_i + dβ_j)) = -f per cell
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = st.res.clone();
        let mut w = Array2::<f64>::zeros((n, m));
        let mut shift = Array2::<f64>::zeros((n, m));
        for ((i, j), &pij) in p.indexed_iter() {
            let gij = st.g[[i, j]];
            let norm = pij.hypot(gij);
            let (dp, dg) = if norm > 0.0 { (1.0 - pij / norm, 1.0 - gij / norm) } else { (FB_KINK, FB_KINK) };
            let dphi = q * (q - 1.0) * pij.max(0.0).powf(q - 2.0);
            let den = (dp + dg * dphi).max(1e-300);
            let (wij, s) = (dg * (q - 1.0) / den, -st.f[[i, j]] / den);
            w[[i, j]] = wij;
            shift[[i, j]] = s;
            rhs[i] += s;
            rhs[n + j] += s;
            let (a, b) = (i, n + j);
            if wij > 0.0 {
                if a > 0 {
                    h[(a - 1, a - 1)] += wij;
                    h[(a - 1, b - 1)] += wij;
                    h[(b - 1, a - 1)] += wij;
                }
                h[(b - 1, b - 1)] += wij;
            }
        }
        // Σ w da = R + Σ shift per row and column, with dp = shift - w da
        let scale = (0..dim).map(|k| h[(k, k)]).fold(0.0, f64::max).max(1.0);
        for k in 0..dim {
            h[(k, k)] += 1e-13 * scale;
        }
        let b = rhs.rows(1, dim).into_owned();
        let dx = match h.clone().cholesky() {
            Some(ch) => ch.solve(&b),
            None => match h.lu().solve(&b) {
                Some(d) => d,
                None => break,
            },
        };
        let dual_step = |k: usize| if k == 0 { 0.0 } else { dx[k - 1] };
        let dp = Array2::from_shape_fn((n, m), |(i, j)| shift[[i, j]] - w[[i, j]] * (dual_step(i) + dual_step(n + j)));

        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let tp = &p + &(t * &dp);
            let tx: Vec<f64> = x.iter().enumerate().map(|(k, v)| v + t * dual_step(k)).collect();
            let ts = pd_state(&tp, &tx, prob, params);
            if ts.merit <= (1.0 - 2e-4 * t) * st.merit {
                accepted = Some((tp, tx, ts));
                break;
            }
            t *= 0.5;
        }
        let Some((tp, tx, ts)) = accepted else { break };
        p = tp;
        x = tx;
        st = ts;
        iterations = it;
    }
    let converged = done(&st);
    p.mapv_inplace(|v| v.max(0.0));
    PrimalDualOutcome { plan: p, iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::outer;

    #[test]
    fn uniform_column_product_plan_from_zero() {
        let prob = TransportProblem::new(vec![0.3, 0.7], vec![0.25; 4], vec![vec![0.4; 4]; 2]).unwrap();
        for q in [0.5, 2.0, 4.0] {
            let params = QParams::new(q, 0.5).unwrap();
            let o = dual_newton(&prob, &params, vec![0.0; 6], 1e-13, 100);
            assert!(o.converged, "q={q}");
            let ev = evaluate(&o.duals, &prob, &params).unwrap();
            let rc = outer(prob.r(), prob.c());
            let d: f64 = ev.plan.iter().zip(rc.iter()).map(|(a, b)| (a - b).abs()).sum();
            assert!(d < 1e-12, "q={q} d={d}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let prob = TransportProblem::new(
            vec![0.2, 0.5, 0.3],
            vec![0.6, 0.4],
            vec![vec![0.1, 0.7], vec![0.4, 0.2], vec![0.9, 0.3]],
        )
        .unwrap();
        let params = QParams::new(2.0, 0.8).unwrap();
        let x = vec![0.05, -0.1, 0.2, 0.1, -0.05];
        let ev = evaluate(&x, &prob, &params).unwrap();
        for k in 0..x.len() {
            let h = 1e-6;
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[k] += h;
            lo[k] -= h;
            let fd = (evaluate(&hi, &prob, &params).unwrap().phi - evaluate(&lo, &prob, &params).unwrap().phi) / (2.0 * h);
            assert!((fd - ev.grad[k]).abs() < 1e-8, "k={k} fd={fd} g={}", ev.grad[k]);
        }
    }
}
