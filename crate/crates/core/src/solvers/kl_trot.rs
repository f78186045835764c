use ndarray::{Array2, ArrayView1, ArrayView2};

use super::newton::{dual_newton, primal_dual_newton};
use super::sinkhorn::balance;
use super::{outer, Phase, SolveTrace, SolverConfig, TraceRecord, ZERO_FLOOR};
use crate::error::{Error, Result};
use crate::qmath::{self, is_classical, pow0};
use crate::transport::{
    build_gibbs_kernel, kkt_plan, marginal_residuals, recover_duals, QParams, TransportPlan, TransportProblem,
};

const MAX_LOG_MOVE: f64 = 0.5;
const MOVE_FLOOR: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 200;

/// Gradient of `P ↦ ⟨P, M⟩ - H_q(P)/λ`:
/// `m_ij - (q p_ij^{q-1} - 1) / (λ (1 - q))`.
pub fn trot_gradient(p: ArrayView2<f64>, prob: &TransportProblem, params: &QParams) -> Array2<f64> {
    let q = params.q;
    let lambda = params.lambda;
    let mut g = prob.cost().to_owned();
    for (gv, &x) in g.iter_mut().zip(p.iter()) {
        let d = if is_classical(q) {
            x.ln() + 1.0
        } else if x == 0.0 {
            if q > 1.0 {
                -1.0 / (q - 1.0)
            } else {
                f64::NEG_INFINITY
            }
        } else {
            // (q x^{q-1} - 1)/(q - 1), stable near q = 1
            q * ((q - 1.0) * x.ln()).exp_m1() / (q - 1.0) + 1.0
        };
        *gv += d / lambda;
    }
    g
}

/// Mirror descent with Sinkhorn projections for `q > 1`:
/// `P ← SK(P ⊙ exp(-t_k ∇f(P)), r, c)`, starting from the Gibbs kernel.
///
/// Each iteration records the normalized step `‖P_{k+1} - P_k‖₁ / t_k` in
/// the trace's `aux` field; the run stops once it falls below
/// `cfg.objective_tol` with both marginals within `cfg.marginal_tol`.
///
/// With `cfg.dual_polish` the descent hands over every `cfg.polish_after`
/// iterations to a Newton method on the dual, warm-started from the duals
/// of the current iterate. Mirror descent resumes if Newton stalls.
pub fn solve_kl_trot(prob: &TransportProblem, params: &QParams, cfg: &SolverConfig) -> Result<(TransportPlan, SolveTrace)> {
    let q = params.q;
    if !(q > 1.0) {
        return Err(Error::InvalidParams(format!("KL-TROT needs q > 1, got {q}")));
    }
    let kernel = build_gibbs_kernel(prob, params);
    let mut md = Mirror {
        prob,
        params,
        cfg,
        uq: kernel.u_tilde.mapv(|u| pow0(u, q)),
        inner_tol: (cfg.marginal_tol * 1e-3).max(1e-14),
        p: Array2::zeros((0, 0)),
        t0: 0.0,
    };

    // The gradient vanishes at the kernel itself, so the first step is a pure
    // projection. Mirror steps never leave the support of the start, so a
    // kernel with cutoff zeros starts from the independent coupling instead.
    let (r, c) = (prob.r(), prob.c());
    let cut = kernel.u_tilde.indexed_iter().any(|((i, j), &u)| u <= 0.0 && r[i] * c[j] > 0.0);
    md.p = if cut {
        outer(r, c)
    } else {
        balance(kernel.u_tilde.view(), r, c, md.inner_tol, cfg.inner_max_iters)?.0
    };
    md.t0 = match cfg.step_schedule.t0 {
        Some(t) => t,
        None => {
            let peak = md.p.iter().map(|&x| pow0(x, q - 1.0)).fold(0.0, f64::max);
            if peak > 0.0 {
                params.lambda / (q * peak)
            } else {
                params.lambda
            }
        }
    };

    let mut trace = SolveTrace::default();
    let block = if cfg.dual_polish { cfg.polish_after.max(1) } else { cfg.max_outer_iters };
    let mut from = 1;
    let mut done = false;
    while !done && from <= cfg.max_outer_iters {
        let to = (from + block - 1).min(cfg.max_outer_iters);
        done = md.run(from, to, &mut trace)?;
        from = to + 1;
        if !done && cfg.dual_polish {
            if let Some(p) = polish(&md, &mut trace)? {
                md.p = p;
                done = true;
            }
        }
    }
    trace.converged = done;
    Ok((TransportPlan::new(md.p, prob)?, trace))
}

struct Mirror<'a> {
    prob: &'a TransportProblem,
    params: &'a QParams,
    cfg: &'a SolverConfig,
    uq: Array2<f64>,
    inner_tol: f64,
    p: Array2<f64>,
    t0: f64,
}

impl Mirror<'_> {
    fn objective(&self, p: &Array2<f64>) -> f64 {
        let q = self.params.q;
        let pq = p.mapv(|v| pow0(v, q));
        qmath::tsallis_relative_entropy(pq.view(), self.uq.view(), 1.0 / q).unwrap_or(f64::NAN)
    }

    // Iterations `from..=to`; true once the stopping rule holds.
    fn run(&mut self, from: usize, to: usize, trace: &mut SolveTrace) -> Result<bool> {
        let (prob, params, cfg) = (self.prob, self.params, self.cfg);
        let (r, c) = (prob.r(), prob.c());
        for it in from..=to {
            let p = &self.p;
            let g = trot_gradient(p.view(), prob, params);
            let gmin = g
                .iter()
                .zip(p.iter())
                .filter(|(_, &x)| x > ZERO_FLOOR)
                .map(|(&v, _)| v)
                .fold(f64::INFINITY, f64::min);
            // A step that moves some cell by more than a factor e^{MAX_LOG_MOVE}
            // halves t0 for the rest of the run. This can only happen finitely
            // often, so the schedule keeps its summability properties.
            let (next, t) = loop {
                let t = cfg.step_schedule.step(self.t0, it);
                let x = Array2::from_shape_fn(p.dim(), |ij| {
                    let v = p[ij];
                    if v <= ZERO_FLOOR {
                        0.0
                    } else {
                        v * (-t * (g[ij] - gmin)).exp()
                    }
                });
                // a step so long that a whole row or column underflows is too long
                let next = match balance(x.view(), r, c, self.inner_tol, cfg.inner_max_iters) {
                    Ok((next, _, _)) => Some(next),
                    Err(Error::Starved { .. }) if self.t0 >= 1e-300 => None,
                    Err(e) => return Err(e),
                };
                if let Some(next) = next {
                    // cells that are already negligible may vanish freely
                    let moved = next
                        .iter()
                        .zip(p.iter())
                        .filter(|(_, &b)| b > MOVE_FLOOR)
                        .map(|(&a, &b)| (a.max(ZERO_FLOOR) / b).ln().abs())
                        .fold(0.0, f64::max);
                    if moved <= MAX_LOG_MOVE || self.t0 < 1e-300 {
                        break (next, t);
                    }
                }
                self.t0 *= 0.5;
            };
            let step: f64 = next.iter().zip(p.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / t;
            self.p = next;

            let (dr, dc) = marginal_residuals(self.p.view(), r, c);
            trace.records.push(TraceRecord {
                iter: it,
                phase: Phase::Full,
                objective: self.objective(&self.p),
                row_residual: dr,
                col_residual: dc,
                aux: Some(step),
                lyapunov: None,
            });
            trace.iterations = it;
            if dr < cfg.marginal_tol && dc < cfg.marginal_tol && step < cfg.objective_tol {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

// Newton on the dual from the duals of the current iterate. Returns the
// KKT-form plan if it meets the marginal tolerance.
fn polish(md: &Mirror, trace: &mut SolveTrace) -> Result<Option<Array2<f64>>> {
    let (prob, params, cfg) = (md.prob, md.params, md.cfg);
    let x0 = match recover_duals(md.p.view(), prob, params) {
        Ok(d) => d.alpha.iter().chain(d.beta.iter()).copied().collect(),
        Err(_) => vec![0.0; prob.rows() + prob.cols()],
    };
    let tol = (cfg.marginal_tol * 1e-3).max(1e-14);
    let out = dual_newton(prob, params, x0.clone(), tol, NEWTON_MAX_ITERS);
    let (p, iterations) = if out.converged {
        let n = prob.rows();
        let alpha = ArrayView1::from(&out.duals[..n]);
        let beta = ArrayView1::from(&out.duals[n..]);
        (kkt_plan(alpha, beta, prob, params), out.iterations)
    } else if params.q > 1.0 {
        log::debug!("dual Newton stalled after {} iterations", out.iterations);
        let pd = primal_dual_newton(prob, params, &md.p, x0, tol, NEWTON_MAX_ITERS);
        if !pd.converged {
            log::debug!("primal-dual Newton stalled after {} iterations", pd.iterations);
            return Ok(None);
        }
        (pd.plan, out.iterations + pd.iterations)
    } else {
        log::debug!("dual Newton stalled after {} iterations", out.iterations);
        return Ok(None);
    };
    let (dr, dc) = marginal_residuals(p.view(), prob.r(), prob.c());
    trace.iterations += iterations;
    trace.records.push(TraceRecord {
        iter: trace.iterations,
        phase: Phase::Polish,
        objective: md.objective(&p),
        row_residual: dr,
        col_residual: dc,
        aux: None,
        lyapunov: None,
    });
    Ok((dr < cfg.marginal_tol && dc < cfg.marginal_tol).then_some(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::outer;
    use ndarray::array;

    #[test]
    fn gradient_matches_closed_form() {
        let prob = TransportProblem::new(vec![0.5, 0.5], vec![0.5, 0.5], vec![vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let p = array![[0.1, 0.2], [0.3, 0.4]];
        for q in [1.5, 2.0, 3.0] {
            let params = QParams::new(q, 2.0).unwrap();
            let g = trot_gradient(p.view(), &prob, &params);
            for ((i, j), &v) in g.indexed_iter() {
                let x: f64 = p[[i, j]];
                let direct = prob.cost()[[i, j]] - (q * x.powf(q - 1.0) - 1.0) / (2.0 * (1.0 - q));
                assert!((v - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constant_cost_with_uniform_column_gives_product_plan() {
        // a uniform column marginal makes columns exchangeable, so the product plan is optimal
        let prob = TransportProblem::new(vec![0.3, 0.7], vec![0.25; 4], vec![vec![0.4; 4]; 2]).unwrap();
        for q in [1.5, 2.0, 4.0] {
            let (p, t) = solve_kl_trot(&prob, &QParams::new(q, 0.5).unwrap(), &SolverConfig::default()).unwrap();
            assert!(t.converged, "q={q}");
            let rc = outer(prob.r(), prob.c());
            let d: f64 = p.plan.iter().zip(rc.iter()).map(|(a, b)| (a - b).abs()).sum();
            assert!(d < 1e-9, "q={q} d={d}");
        }
    }

    #[test]
    fn rejects_small_q() {
        let prob = TransportProblem::new(vec![1.0], vec![1.0], vec![vec![0.0]]).unwrap();
        assert!(solve_kl_trot(&prob, &QParams::new(0.5, 1.0).unwrap(), &SolverConfig::default()).is_err());
    }
}
