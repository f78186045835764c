//! Solvers for the regularized transport problem, keyed on `q`.
//!
//! | q          | solver                                  |
//! |------------|-----------------------------------------|
//! | 0          | transportation simplex ([`solve_exact_lp`]) |
//! | (0, 1)     | second-order scaling ([`solve_so_trot`]) |
//! | 1          | Sinkhorn-Knopp ([`sinkhorn_knopp`])     |
//! | > 1        | KL mirror descent ([`solve_kl_trot`])   |

mod kl_trot;
mod lp;
mod newton;
mod sinkhorn;
mod so_trot;

use std::io::Write;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

pub use kl_trot::{solve_kl_trot, trot_gradient};
pub use lp::solve_exact_lp;
pub use sinkhorn::{sinkhorn_knopp, sinkhorn_knopp_log};
pub use so_trot::{so_trot_auxiliary, solve_so_trot};

use crate::error::{Error, Result};
use crate::qmath::{self, is_classical};
use crate::transport::{
    build_gibbs_kernel, recover_duals, DualCertificate, QParams, TransportPlan, TransportProblem,
};

/// Plan entries below this are treated as exact zeros.
pub const ZERO_FLOOR: f64 = 1e-300;

/// How the KL-TROT step size decays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decay {
    /// `t_k = t0 / (1 + (k-1)/h)`
    Harmonic,
    /// `t_k = t0 / sqrt(1 + (k-1)/h)`
    Sqrt,
}

/// Step sizes for KL-TROT. Both decays satisfy `Σ t_k = ∞`; only the
/// harmonic one also has `Σ t_k² < ∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    /// Initial step. `None` picks `λ / (q max p^{q-1})` at the kernel, the
    /// largest step for which the first update is a contraction.
    pub t0: Option<f64>,
    pub decay: Decay,
    /// Number of iterations over which the step stays roughly constant.
    /// `1` gives the plain `t0 / k` schedule.
    pub half_life: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule { t0: None, decay: Decay::Harmonic, half_life: 500.0 }
    }
}

impl StepSchedule {
    /// `t0 / k`, with `t0 = 1 / (λ max M)`.
    pub fn plain_harmonic(prob: &TransportProblem, params: &QParams) -> Self {
        let mmax = prob.cost().iter().cloned().fold(0.0, f64::max);
        let t0 = if mmax > 0.0 { 1.0 / (params.lambda * mmax) } else { 1.0 / params.lambda };
        StepSchedule { t0: Some(t0), decay: Decay::Harmonic, half_life: 1.0 }
    }

    /// Step at iteration `k >= 1` given the initial step.
    pub fn step(&self, t0: f64, k: usize) -> f64 {
        let s = 1.0 + (k as f64 - 1.0) / self.half_life;
        match self.decay {
            Decay::Harmonic => t0 / s,
            Decay::Sqrt => t0 / s.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    /// Bound on each marginal residual, in ℓ1.
    pub marginal_tol: f64,
    /// Relative objective change per sweep below which a feasible iterate is
    /// accepted (scaling solvers), or bound on the normalized mirror step
    /// `‖P_{k+1} - P_k‖₁ / t_k` (KL-TROT).
    pub objective_tol: f64,
    pub step_schedule: StepSchedule,
    pub production_mods: bool,
    /// Iteration cap of each Sinkhorn projection inside KL-TROT.
    pub inner_max_iters: usize,
    /// Finish KL-TROT with a Newton method on the dual.
    pub dual_polish: bool,
    /// KL-TROT iterations between attempts of the Newton finish.
    pub polish_after: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_outer_iters: 100_000,
            marginal_tol: 1e-6,
            objective_tol: 1e-9,
            step_schedule: StepSchedule::default(),
            production_mods: true,
            inner_max_iters: 20_000,
            dual_polish: true,
            polish_after: 1000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 || self.inner_max_iters == 0 {
            return Err(Error::InvalidParams("iteration limits must be >= 1".into()));
        }
        if !(self.marginal_tol > 0.0 && self.objective_tol > 0.0) {
            return Err(Error::InvalidParams("tolerances must be > 0".into()));
        }
        let s = &self.step_schedule;
        if !(s.half_life > 0.0) || s.t0.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParams("step schedule needs t0 > 0 and half_life > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Row,
    Col,
    Full,
    /// Dual Newton finish of KL-TROT.
    Polish,
}

/// One record per sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub phase: Phase,
    /// Escort objective `K_{1/q}(P^q, Ũ^q)` (KL for Sinkhorn, cost for the LP).
    pub objective: f64,
    pub row_residual: f64,
    pub col_residual: f64,
    /// SO-TROT: auxiliary function `A(P, y)` of the step that produced this iterate.
    pub aux: Option<f64>,
    /// Bregman divergence from the independent coupling `r cᵀ` to the iterate,
    /// the quantity the scaling solvers decrease.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub iterations: usize,
    pub converged: bool,
    pub records: Vec<TraceRecord>,
}

impl SolveTrace {
    pub fn objective_history(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// Larger of the two marginal residuals, per sweep.
    pub fn residual_history(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.row_residual.max(r.col_residual)).collect()
    }

    pub fn auxiliary_values(&self) -> Option<Vec<f64>> {
        let v: Vec<f64> = self.records.iter().filter_map(|r| r.aux).collect();
        (!v.is_empty()).then_some(v)
    }

    pub fn lyapunov_history(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.lyapunov).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Output of [`solve`].
#[derive(Clone, Debug)]
pub struct Solution {
    pub plan: TransportPlan,
    pub trace: SolveTrace,
    /// Recovered KKT duals; `None` for the LP (q = 0).
    pub duals: Option<DualCertificate>,
}

/// Bregman divergence of `φ = -H_q` between `x` and `p`, summed over cells.
pub fn bregman_gap(x: ArrayView2<f64>, p: ArrayView2<f64>, q: f64) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in x.iter().zip(p.iter()) {
        if b == 0.0 {
            if a > 0.0 {
                return f64::INFINITY;
            }
            continue;
        }
        // φ'(b) = (q b^{q-1} - 1)/(q-1), or ln b + 1 at q = 1
        let grad = if is_classical(q) {
            b.ln() + 1.0
        } else {
            q * ((q - 1.0) * b.ln()).exp_m1() / (q - 1.0) + 1.0
        };
        // φ(x) - φ(b) - φ'(b)(x - b) with φ = -entropy
        total += -qmath::entropy_term(a, q) + qmath::entropy_term(b, q) - grad * (a - b);
    }
    total.max(0.0)
}

pub(crate) fn outer(r: ArrayView1<f64>, c: ArrayView1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((r.len(), c.len()), |(i, j)| r[i] * c[j])
}

/// Dispatches on `q`, then recovers the KKT duals of the result.
pub fn solve(prob: &TransportProblem, params: &QParams, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    let q = params.q;
    let (plan, trace) = if q == 0.0 {
        solve_exact_lp(prob, cfg)?
    } else if is_classical(q) {
        solve_sinkhorn(prob, params, cfg)?
    } else if q < 1.0 {
        solve_so_trot(prob, params, cfg)?
    } else {
        solve_kl_trot(prob, params, cfg)?
    };
    let duals = if q > 0.0 { Some(recover_duals(plan.view(), prob, params)?) } else { None };
    Ok(Solution { plan, trace, duals })
}

/// Sinkhorn on the Gibbs kernel; switches to the log domain when
/// `λ max M > 200`.
pub fn solve_sinkhorn(prob: &TransportProblem, params: &QParams, cfg: &SolverConfig) -> Result<(TransportPlan, SolveTrace)> {
    let mmax = prob.cost().iter().cloned().fold(0.0, f64::max);
    let (p, trace) = if params.lambda * mmax > 200.0 {
        let log_k = prob.cost().mapv(|m| -1.0 - params.lambda * m);
        sinkhorn_knopp_log(log_k.view(), prob.r(), prob.c(), cfg.marginal_tol, cfg.max_outer_iters)?
    } else {
        let k = build_gibbs_kernel(prob, params);
        sinkhorn_knopp(k.u_tilde.view(), prob.r(), prob.c(), cfg.marginal_tol, cfg.max_outer_iters)?
    };
    Ok((TransportPlan::new(p, prob)?, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn schedules() {
        let s = StepSchedule { t0: Some(1.0), decay: Decay::Harmonic, half_life: 1.0 };
        assert_eq!(s.step(1.0, 1), 1.0);
        assert_eq!(s.step(1.0, 4), 0.25);
        let s = StepSchedule { decay: Decay::Sqrt, ..s };
        assert_eq!(s.step(2.0, 4), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { marginal_tol: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { max_outer_iters: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bregman_gap_is_kl_at_one() {
        let x = array![[0.2f64, 0.3], [0.1, 0.4]];
        let p = array![[0.25, 0.25], [0.25, 0.25]];
        let kl: f64 = x.iter().zip(p.iter()).map(|(a, b)| a * (a / b).ln() - a + b).sum();
        assert!((bregman_gap(x.view(), p.view(), 1.0) - kl).abs() < 1e-15);
        assert_eq!(bregman_gap(x.view(), x.view(), 0.5), 0.0);
        assert!(bregman_gap(x.view(), p.view(), 2.0) > 0.0);
    }

    #[test]
    fn trace_jsonl() {
        let t = SolveTrace {
            iterations: 1,
            converged: true,
            records: vec![TraceRecord {
                iter: 1,
                phase: Phase::Full,
                objective: 0.5,
                row_residual: 0.0,
                col_residual: 1e-9,
                aux: None,
                lyapunov: None,
            }],
        };
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        for k in ["iter", "objective", "row_residual", "col_residual", "aux"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
    }
}
