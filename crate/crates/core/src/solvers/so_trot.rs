use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2};

use super::{bregman_gap, outer, Phase, SolveTrace, SolverConfig, TraceRecord, ZERO_FLOOR};
use crate::error::{Error, Result};
use crate::qmath::{self, pow0, q_exp_recip, q_log_unchecked};
use crate::transport::{kernel_scale, marginal_residuals, QParams, TransportPlan, TransportProblem};

struct Sweep {
    aux: f64,
}

// One pass of Steps 4-14 over the rows of `a` against `target`. `a` holds the
// exp_q arguments, so the plan is e * exp_q(a)^{-1}. Returns Σ_i A_i(P, y).
fn row_sweep(mut a: ArrayViewMut2<f64>, target: ArrayView1<f64>, q: f64, e: f64, mods: bool) -> Sweep {
    let k = 1.0 - q;
    let mut aux = 0.0;
    for (i, mut row) in a.outer_iter_mut().enumerate() {
        let mut mass = 0.0;
        let mut b = 0.0;
        let mut a2 = 0.0;
        let mut pmax_pow = 0.0f64;
        let mut min_base = f64::INFINITY;
        for &x in row.iter() {
            let p = e * q_exp_recip(x, q);
            let base = 1.0 + k * x;
            min_base = min_base.min(base);
            if p <= ZERO_FLOOR {
                continue;
            }
            // P ⊘ A, read as division by the q-exponential base
            let p1 = p / base;
            mass += p;
            b += p1;
            a2 += p1 / base;
            pmax_pow = pmax_pow.max(p.powf(k));
        }
        let mut a2 = (2.0 - q) * a2;
        if mods {
            a2 *= 0.5;
        }
        let d = target[i] - mass;
        let mut y = if d == 0.0 || b == 0.0 {
            0.0
        } else if d > 0.0 {
            // positive root of a y² + b y - d, without cancellation
            2.0 * d / (b + (b * b + 4.0 * a2 * d).sqrt())
        } else if mods {
            2.0 * d / b
        } else {
            d / b
        };
        if !mods && pmax_pow > 0.0 {
            let cap = q / ((6.0 - 4.0 * q) * pmax_pow);
            if y.abs() > cap {
                y = cap.copysign(d);
            }
        }
        // Keep every base positive so the plan stays finite.
        if y > 0.0 && k * y >= min_base {
            y = 0.5 * min_base / k;
        }
        // A_i = y r_i - Σ_j (p'^q - p^q), each difference taken without cancellation
        let mut growth = 0.0;
        for x in row.iter_mut() {
            let p = e * q_exp_recip(*x, q);
            if p > ZERO_FLOOR {
                growth += pow_growth(p, 1.0 + k * *x, y, q);
            }
            *x -= y;
        }
        aux += y * target[i] - growth;
    }
    Sweep { aux }
}

// p'^q - p^q where p' is p with its exp_q argument lowered by y.
fn pow_growth(p: f64, base: f64, y: f64, q: f64) -> f64 {
    let k = 1.0 - q;
    let ratio_ln = -(-k * y / base).ln_1p() / k;
    p.powf(q) * (q * ratio_ln).exp_m1()
}

fn plan_of(a: &Array2<f64>, q: f64, e: f64) -> Array2<f64> {
    a.mapv(|x| {
        let p = e * q_exp_recip(x, q);
        if p <= ZERO_FLOOR {
            0.0
        } else {
            p
        }
    })
}

/// Second-order scaling solver for `0 < q < 1`.
///
/// Alternates one row sweep and one column sweep (the column sweep works on
/// the transposed matrices). With `cfg.production_mods` the step cap is
/// dropped, the linear-branch step is doubled and the quadratic coefficient
/// halved.
pub fn solve_so_trot(prob: &TransportProblem, params: &QParams, cfg: &SolverConfig) -> Result<(TransportPlan, SolveTrace)> {
    let q = params.q;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParams(format!("SO-TROT needs 0 < q < 1, got {q}")));
    }
    let e = kernel_scale(q);
    let mut a = prob.cost().mapv(|m| params.lambda * m);
    let uq = plan_of(&a, q, e).mapv(|u| pow0(u, q));
    let reference = outer(prob.r(), prob.c());
    let mut trace = SolveTrace::default();

    let evaluate = |a: &Array2<f64>, iter: usize, phase: Phase, aux: f64| -> (Array2<f64>, TraceRecord) {
        let p = plan_of(a, q, e);
        let (dr, dc) = marginal_residuals(p.view(), prob.r(), prob.c());
        let pq = p.mapv(|x| pow0(x, q));
        let objective = qmath::tsallis_relative_entropy(pq.view(), uq.view(), 1.0 / q).unwrap_or(f64::NAN);
        let rec = TraceRecord {
            iter,
            phase,
            objective,
            row_residual: dr,
            col_residual: dc,
            aux: Some(aux),
            lyapunov: Some(bregman_gap(reference.view(), p.view(), q)),
        };
        (p, rec)
    };

    let mut prev_obj = f64::NAN;
    let mut p = plan_of(&a, q, e);
    for it in 1..=cfg.max_outer_iters {
        let s = row_sweep(a.view_mut(), prob.r(), q, e, cfg.production_mods);
        let (_, rec) = evaluate(&a, it, Phase::Row, s.aux);
        trace.records.push(rec);

        let s = row_sweep(a.view_mut().reversed_axes(), prob.c(), q, e, cfg.production_mods);
        let (pc, rec) = evaluate(&a, it, Phase::Col, s.aux);
        let obj = rec.objective;
        let feasible = rec.row_residual < cfg.marginal_tol && rec.col_residual < cfg.marginal_tol;
        trace.records.push(rec);
        trace.iterations = it;
        p = pc;
        if !p.iter().all(|x| x.is_finite()) {
            return Err(Error::Domain("SO-TROT iterate left the domain of exp_q".into()));
        }
        let stable = (obj - prev_obj).abs() <= cfg.objective_tol * obj.abs().max(1.0);
        prev_obj = obj;
        if feasible && stable {
            trace.converged = true;
            break;
        }
    }
    Ok((TransportPlan::new(p, prob)?, trace))
}

/// `A(P, y) = Σ_i [y_i r_i + Σ_j (p_ij^q - e^q exp_q(a_ij - y_i)^{-q})]`, where
/// `a_ij` is recovered from `p_ij` through the KKT form. Zero cells are
/// skipped.
pub fn so_trot_auxiliary(p: ArrayView2<f64>, y: ArrayView1<f64>, prob: &TransportProblem, params: &QParams) -> f64 {
    let q = params.q;
    let e = kernel_scale(q);
    let r = prob.r();
    let mut total = 0.0;
    for (i, row) in p.outer_iter().enumerate() {
        total += y[i] * r[i];
        for &x in row.iter() {
            if x <= ZERO_FLOOR {
                continue;
            }
            let a = q_log_unchecked(e / x, q);
            total -= pow_growth(x, 1.0 + (1.0 - q) * a, y[i], q);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn instance() -> TransportProblem {
        TransportProblem::new(
            vec![0.1, 0.4, 0.2, 0.3],
            vec![0.25, 0.25, 0.3, 0.2],
            vec![
                vec![0.0, 0.4, 0.9, 0.3],
                vec![0.5, 0.1, 0.2, 0.8],
                vec![0.7, 0.6, 0.0, 0.2],
                vec![0.2, 0.9, 0.5, 0.1],
            ],
        )
        .unwrap()
    }

    #[test]
    fn constant_cost_with_uniform_column_gives_product_plan() {
        // a uniform column marginal makes columns exchangeable, so the product plan is optimal
        let prob = TransportProblem::new(vec![0.3, 0.7], vec![0.25; 4], vec![vec![0.4; 4]; 2]).unwrap();
        let params = QParams::new(0.5, 2.0).unwrap();
        for mods in [true, false] {
            let cfg = SolverConfig { production_mods: mods, marginal_tol: 1e-10, ..Default::default() };
            let (p, t) = solve_so_trot(&prob, &params, &cfg).unwrap();
            assert!(t.converged);
            let rc = outer(prob.r(), prob.c());
            let d: f64 = p.plan.iter().zip(rc.iter()).map(|(a, b)| (a - b).abs()).sum();
            assert!(d < 1e-9, "mods={mods} d={d}");
        }
    }

    #[test]
    fn converges_with_and_without_mods() {
        let prob = instance();
        let params = QParams::new(0.5, 5.0).unwrap();
        let on = solve_so_trot(&prob, &params, &SolverConfig::default()).unwrap();
        let off = solve_so_trot(&prob, &params, &SolverConfig { production_mods: false, ..Default::default() }).unwrap();
        assert!(on.1.converged && off.1.converged);
        let d: f64 = on.0.plan.iter().zip(off.0.plan.iter()).map(|(a, b)| (a - b).abs()).sum();
        assert!(d < 1e-5, "{d}");
    }

    #[test]
    fn aux_zero_at_zero_step() {
        let prob = instance();
        let params = QParams::new(0.5, 5.0).unwrap();
        let (p, _) = solve_so_trot(&prob, &params, &SolverConfig { max_outer_iters: 3, ..Default::default() }).unwrap();
        let y = Array1::zeros(4);
        assert!(so_trot_auxiliary(p.view(), y.view(), &prob, &params).abs() < 1e-14);
    }

    #[test]
    fn aux_positive_and_lyapunov_decreasing_without_mods() {
        let prob = instance();
        let params = QParams::new(0.3, 3.0).unwrap();
        let cfg = SolverConfig { production_mods: false, ..Default::default() };
        let (_, t) = solve_so_trot(&prob, &params, &cfg).unwrap();
        assert!(t.converged);
        assert!(t.auxiliary_values().unwrap().iter().all(|&a| a >= -1e-15));
        let l = t.lyapunov_history();
        assert!(l.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-15));
    }

    #[test]
    fn rejects_q_outside_unit_interval() {
        let prob = instance();
        for q in [1.0, 2.0] {
            assert!(solve_so_trot(&prob, &QParams::new(q, 1.0).unwrap(), &SolverConfig::default()).is_err());
        }
    }
}
