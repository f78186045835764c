//! Harnesses for metric properties of the regularized distances: plan
//! gluing, triangle-inequality sweeps and the weak identity of
//! indiscernibles.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmath::tsallis_entropy;
use crate::solvers::{solve, SolverConfig};
use crate::transport::{beta_adjusted_distance, QParams, TransportProblem};

/// Marginal mismatch tolerated by [`glue`].
pub const GLUE_TOL: f64 = 1e-9;

/// Slack of [`entropy_monotonicity_check`].
pub const MONOTONICITY_SLACK: f64 = 1e-10;

/// Triangle-inequality violations below this are ignored.
pub const TRIANGLE_TOL: f64 = 1e-8;

/// `S = P diag(y)^{-1} Q`, a plan between the outer marginals of `P` and `Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct GluedPlan {
    pub s: Array2<f64>,
    pub x: Array1<f64>,
    pub z: Array1<f64>,
}

/// Composes `P ∈ U(x, y)` and `Q ∈ U(y, z)`. Terms with `y_j = 0` contribute 0.
pub fn glue(p: ArrayView2<f64>, q: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<GluedPlan> {
    if p.ncols() != y.len() || q.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "P is {:?}, Q is {:?}, y has length {}",
            p.dim(),
            q.dim(),
            y.len()
        )));
    }
    let pc = p.sum_axis(ndarray::Axis(0));
    let qr = q.sum_axis(ndarray::Axis(1));
    for j in 0..y.len() {
        if (pc[j] - y[j]).abs() > GLUE_TOL || (qr[j] - y[j]).abs() > GLUE_TOL {
            return Err(Error::InvalidProblem(format!(
                "middle marginal mismatch at {j}: P gives {}, Q gives {}, y = {}",
                pc[j], qr[j], y[j]
            )));
        }
    }
    let mut s = Array2::zeros((p.nrows(), q.ncols()));
    for (j, &yj) in y.iter().enumerate() {
        if yj == 0.0 {
            continue;
        }
        for i in 0..p.nrows() {
            let w = p[[i, j]] / yj;
            if w == 0.0 {
                continue;
            }
            for k in 0..q.ncols() {
                s[[i, k]] += w * q[[j, k]];
            }
        }
    }
    let x = p.sum_axis(ndarray::Axis(1));
    let z = q.sum_axis(ndarray::Axis(0));
    Ok(GluedPlan { s, x, z })
}

/// `H_q(S) - H_q(x) - H_q(z) ≥ H_q(P) - H_q(x) - H_q(y)`, up to
/// [`MONOTONICITY_SLACK`].
pub fn entropy_monotonicity_check(
    p: ArrayView2<f64>,
    s: ArrayView2<f64>,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    z: ArrayView1<f64>,
    q: f64,
) -> Result<bool> {
    if !(q >= 1.0) {
        return Err(Error::Domain(format!("monotonicity check needs q >= 1, got {q}")));
    }
    let h = |v: &mut dyn Iterator<Item = &f64>| -> Result<f64> { Ok(tsallis_entropy(v, q)?.h_q) };
    let hx = h(&mut x.iter())?;
    let lhs = h(&mut s.iter())? - hx - h(&mut z.iter())?;
    let rhs = h(&mut p.iter())? - hx - h(&mut y.iter())?;
    Ok(lhs >= rhs - MONOTONICITY_SLACK)
}

/// A uniform sample from the simplex (symmetric Dirichlet(1)).
pub fn random_marginal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array1<f64> {
    let mut v = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(Exp1));
    let s = v.sum();
    v /= s;
    v
}

/// Pairwise Euclidean distances of `n` uniform points in the unit square.
pub fn random_metric<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let (a, b) = pts[i];
        let (c, d) = pts[j];
        (a - c).hypot(b - d)
    })
}

/// Checks symmetry, zero diagonal, positivity off the diagonal and the
/// triangle inequality, all to `1e-12`.
pub fn validate_metric(m: ArrayView2<f64>) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Shape(format!("metric matrix must be square, got {:?}", m.dim())));
    }
    let tol = 1e-12;
    for i in 0..n {
        if m[[i, i]].abs() > tol {
            return Err(Error::InvalidProblem(format!("m[{i},{i}] = {} is not zero", m[[i, i]])));
        }
        for j in 0..n {
            if (m[[i, j]] - m[[j, i]]).abs() > tol {
                return Err(Error::InvalidProblem(format!("m is not symmetric at ({i},{j})")));
            }
            if i != j && !(m[[i, j]] > 0.0) {
                return Err(Error::InvalidProblem(format!("m[{i},{j}] must be positive")));
            }
            for k in 0..n {
                if m[[i, k]] > m[[i, j]] + m[[j, k]] + tol {
                    return Err(Error::InvalidProblem(format!(
                        "triangle inequality fails for ({i},{j},{k})"
                    )));
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub trials: usize,
    pub violations: usize,
    pub max_violation: f64,
}

impl SweepReport {
    fn record(&mut self, excess: f64, tol: f64) {
        self.trials += 1;
        if excess > tol {
            self.violations += 1;
        }
        self.max_violation = self.max_violation.max(excess);
    }
}

// Tight enough that solver error stays well under TRIANGLE_TOL.
fn sweep_config() -> SolverConfig {
    SolverConfig { marginal_tol: 1e-12, objective_tol: 1e-14, ..Default::default() }
}

/// `d^{λ,q,β}_M(r, c)` at the solver's optimal plan.
pub fn beta_distance(
    m: ArrayView2<f64>,
    r: ArrayView1<f64>,
    c: ArrayView1<f64>,
    params: &QParams,
    beta_const: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let prob = TransportProblem::from_arrays(r.to_owned(), c.to_owned(), m.to_owned())?;
    let sol = solve(&prob, params, cfg)?;
    beta_adjusted_distance(&prob, params, beta_const, sol.plan.view())
}

/// Draws `trials` Dirichlet(1) triples `(x, y, z)` and records the excess
/// `d(x,z) - d(x,y) - d(y,z)` of each. Triples are drawn up front, so the
/// report depends only on `rng`.
pub fn triangle_sweep<R: Rng + ?Sized>(
    m: ArrayView2<f64>,
    beta_const: f64,
    params: &QParams,
    trials: usize,
    rng: &mut R,
) -> Result<SweepReport> {
    validate_metric(m)?;
    let n = m.nrows();
    let triples: Vec<[Array1<f64>; 3]> = (0..trials)
        .map(|_| [random_marginal(n, rng), random_marginal(n, rng), random_marginal(n, rng)])
        .collect();
    let cfg = sweep_config();
    let excess: Vec<f64> = triples
        .par_iter()
        .map(|[x, y, z]| -> Result<f64> {
            let d = |a: &Array1<f64>, b: &Array1<f64>| beta_distance(m, a.view(), b.view(), params, beta_const, &cfg);
            Ok(d(x, z)? - d(x, y)? - d(y, z)?)
        })
        .collect::<Result<_>>()?;
    let mut report = SweepReport::default();
    for e in excess {
        report.record(e, TRIANGLE_TOL);
    }
    Ok(report)
}

/// Gluing feasibility and entropy monotonicity over `trials` random pairs of
/// plans on `n`-point marginals. A trial counts as a violation if the glued
/// plan misses its marginals by more than `1e-12` or the entropy inequality
/// fails.
pub fn gluing_sweep<R: Rng + ?Sized>(n: usize, q: f64, trials: usize, rng: &mut R) -> Result<SweepReport> {
    let mut report = SweepReport::default();
    for _ in 0..trials {
        let (x, y, z) = (random_marginal(n, rng), random_marginal(n, rng), random_marginal(n, rng));
        let p = random_plan(x.view(), y.view(), rng);
        let qp = random_plan(y.view(), z.view(), rng);
        let g = glue(p.view(), qp.view(), y.view())?;
        let (dr, dc) = crate::transport::marginal_residuals(g.s.view(), x.view(), z.view());
        let feasible = dr.max(dc) <= 1e-12;
        let monotone = entropy_monotonicity_check(p.view(), g.s.view(), x.view(), y.view(), z.view(), q)?;
        report.record(if feasible && monotone { 0.0 } else { 1.0 }, 0.5);
    }
    Ok(report)
}

/// A random plan in `U(r, c)`: Sinkhorn scaling of a matrix with Exp(1)
/// entries.
pub fn random_plan<R: Rng + ?Sized>(r: ArrayView1<f64>, c: ArrayView1<f64>, rng: &mut R) -> Array2<f64> {
    let mut p = Array2::from_shape_fn((r.len(), c.len()), |_| rng.sample::<f64, _>(Exp1));
    for _ in 0..10_000 {
        for (mut row, &ri) in p.rows_mut().into_iter().zip(r.iter()) {
            let s = row.sum();
            if s > 0.0 {
                row *= ri / s;
            }
        }
        let mut worst = 0.0f64;
        for (mut col, &cj) in p.columns_mut().into_iter().zip(c.iter()) {
            let s = col.sum();
            worst = worst.max((s - cj).abs());
            if s > 0.0 {
                col *= cj / s;
            }
        }
        if worst < 1e-15 {
            break;
        }
    }
    p
}

/// `d^{λ,q,1/2}_M(r, r) ≤ 1e-10`.
pub fn weak_indiscernibles_check(m: ArrayView2<f64>, r: ArrayView1<f64>, params: &QParams) -> Result<bool> {
    if !(params.q >= 1.0) {
        return Err(Error::Domain(format!("weak indiscernibles needs q >= 1, got {}", params.q)));
    }
    validate_metric(m)?;
    Ok(beta_distance(m, r, r, params, 0.5, &sweep_config())? <= 1e-10)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::outer;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_glues_to_diagonal() {
        let x = array![0.2, 0.5, 0.3];
        let d = Array2::from_diag(&x);
        let g = glue(d.view(), d.view(), x.view()).unwrap();
        assert_eq!(g.s, d);
    }

    #[test]
    fn independent_couplings_compose() {
        let x = array![0.2, 0.8];
        let y = array![0.1, 0.6, 0.3];
        let z = array![0.5, 0.25, 0.25];
        let g = glue(outer(x.view(), y.view()).view(), outer(y.view(), z.view()).view(), y.view()).unwrap();
        let xz = outer(x.view(), z.view());
        assert!(g.s.iter().zip(xz.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn zero_middle_mass_is_skipped() {
        let y = array![0.0, 1.0];
        let p = array![[0.0, 0.4], [0.0, 0.6]];
        let q = array![[0.0, 0.0], [0.5, 0.5]];
        let g = glue(p.view(), q.view(), y.view()).unwrap();
        assert_eq!(g.s, array![[0.2, 0.2], [0.3, 0.3]]);
    }

    #[test]
    fn glue_rejects_mismatch() {
        let y = array![0.5, 0.5];
        let p = array![[0.3, 0.2], [0.3, 0.2]];
        assert!(glue(p.view(), p.view(), y.view()).is_err());
    }

    #[test]
    fn monotonicity_holds_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rep = gluing_sweep(4, 1.0, 300, &mut rng).unwrap();
        assert_eq!(rep.violations, 0);
    }

    #[test]
    fn metric_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(validate_metric(random_metric(5, &mut rng).view()).is_ok());
        assert!(validate_metric(array![[0.0, 1.0], [2.0, 0.0]].view()).is_err());
        let bad = array![[0.0, 1.0, 3.0], [1.0, 0.0, 1.0], [3.0, 1.0, 0.0]];
        assert!(validate_metric(bad.view()).is_err());
    }

    #[test]
    fn triangle_holds_at_beta_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_metric(4, &mut rng);
        let params = QParams::new(1.0, 3.0).unwrap();
        let rep = triangle_sweep(m.view(), 1.0, &params, 40, &mut rng).unwrap();
        assert_eq!(rep.trials, 40);
        assert_eq!(rep.violations, 0, "{rep:?}");
    }

    #[test]
    fn triangle_is_tight_or_slack_on_equal_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_metric(4, &mut rng);
        let x = random_marginal(4, &mut rng);
        let params = QParams::new(1.0, 2.0).unwrap();
        let cfg = sweep_config();
        let d = beta_distance(m.view(), x.view(), x.view(), &params, 1.0, &cfg).unwrap();
        assert!(d <= 2.0 * d + TRIANGLE_TOL);
    }

    #[test]
    fn one_hot_distance_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_metric(3, &mut rng);
        let r = array![0.0, 1.0, 0.0];
        let params = QParams::new(1.0, 2.0).unwrap();
        let d = beta_distance(m.view(), r.view(), r.view(), &params, 0.5, &sweep_config()).unwrap();
        assert!(d.abs() < 1e-12, "{d}");
    }

    #[test]
    fn no_transport_plan_at_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_metric(4, &mut rng);
        let r = random_marginal(4, &mut rng);
        for q in [1.0, 1.5, 2.0] {
            let params = QParams::new(q, 2.0).unwrap();
            let prob = TransportProblem::from_arrays(r.clone(), r.clone(), m.clone()).unwrap();
            let d = beta_adjusted_distance(&prob, &params, 0.5, Array2::from_diag(&r).view()).unwrap();
            assert!(d.abs() < 1e-14, "q={q} {d}");
        }
    }

    #[test]
    fn weak_indiscernibles() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_metric(5, &mut rng);
        for q in [1.0, 2.0] {
            let r = random_marginal(5, &mut rng);
            assert!(weak_indiscernibles_check(m.view(), r.view(), &QParams::new(q, 1.5).unwrap()).unwrap());
        }
        assert!(weak_indiscernibles_check(m.view(), random_marginal(5, &mut rng).view(), &QParams::new(0.5, 1.0).unwrap()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn glued_plan_is_feasible(seed in any::<u64>(), n in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y, z) = (random_marginal(n, &mut rng), random_marginal(n, &mut rng), random_marginal(n, &mut rng));
            let p = random_plan(x.view(), y.view(), &mut rng);
            let q = random_plan(y.view(), z.view(), &mut rng);
            let g = glue(p.view(), q.view(), y.view()).unwrap();
            let (dr, dc) = crate::transport::marginal_residuals(g.s.view(), x.view(), z.view());
            prop_assert!(dr < 1e-12 && dc < 1e-12);
        }

        #[test]
        fn swapped_arguments_agree(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_metric(4, &mut rng);
            let (x, z) = (random_marginal(4, &mut rng), random_marginal(4, &mut rng));
            let params = QParams::new(1.0, 2.0).unwrap();
            let cfg = sweep_config();
            let a = beta_distance(m.view(), x.view(), z.view(), &params, 1.0, &cfg).unwrap();
            let b = beta_distance(m.view(), z.view(), x.view(), &params, 1.0, &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
