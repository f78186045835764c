use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{bregman_gap, outer, Phase, SolveTrace, TraceRecord};
use crate::error::{Error, Result};
use crate::qmath;
use crate::transport::marginal_residuals;

fn check_starvation(k: ArrayView2<f64>, r: ArrayView1<f64>, c: ArrayView1<f64>) -> Result<()> {
    if k.nrows() != r.len() || k.ncols() != c.len() {
        return Err(Error::Shape(format!(
            "kernel is {:?}, marginals have lengths ({}, {})",
            k.dim(),
            r.len(),
            c.len()
        )));
    }
    if let Some(x) = k.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::Domain(format!("kernel entry {x} is not a nonnegative number")));
    }
    for (i, row) in k.outer_iter().enumerate() {
        if r[i] > 0.0 && row.iter().zip(c.iter()).all(|(&x, &cj)| x == 0.0 || cj == 0.0) {
            return Err(Error::Starved { axis: "row", index: i });
        }
    }
    for (j, col) in k.axis_iter(Axis(1)).enumerate() {
        if c[j] > 0.0 && col.iter().zip(r.iter()).all(|(&x, &ri)| x == 0.0 || ri == 0.0) {
            return Err(Error::Starved { axis: "column", index: j });
        }
    }
    Ok(())
}

fn record(iter: usize, p: &Array2<f64>, k: ArrayView2<f64>, r: ArrayView1<f64>, c: ArrayView1<f64>) -> TraceRecord {
    let (dr, dc) = marginal_residuals(p.view(), r, c);
    let objective = qmath::tsallis_relative_entropy(p.view(), k, 1.0).unwrap_or(f64::NAN);
    let lyapunov = bregman_gap(outer(r, c).view(), p.view(), 1.0);
    TraceRecord {
        iter,
        phase: Phase::Full,
        objective,
        row_residual: dr,
        col_residual: dc,
        aux: None,
        lyapunov: Some(lyapunov),
    }
}

fn safe_div(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Scales `K` to `diag(u) K diag(v)` with row sums `r` and column sums `c`.
///
/// Stops once both ℓ1 marginal residuals are below `tol`. A non-converged
/// run returns the last iterate with `converged = false`.
pub fn sinkhorn_knopp(
    k: ArrayView2<f64>,
    r: ArrayView1<f64>,
    c: ArrayView1<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(Array2<f64>, SolveTrace)> {
    check_starvation(k, r, c)?;
    let mut u = Array1::<f64>::ones(r.len());
    let mut v = Array1::<f64>::ones(c.len());
    let mut trace = SolveTrace::default();
    let scaled = |u: &Array1<f64>, v: &Array1<f64>| -> Array2<f64> {
        Array2::from_shape_fn(k.dim(), |(i, j)| u[i] * k[[i, j]] * v[j])
    };
    for it in 1..=max_iters {
        let kv = k.dot(&v);
        for i in 0..u.len() {
            u[i] = safe_div(r[i], kv[i]);
        }
        let ktu = k.t().dot(&u);
        for j in 0..v.len() {
            v[j] = safe_div(c[j], ktu[j]);
        }
        let p = scaled(&u, &v);
        let rec = record(it, &p, k, r, c);
        let done = rec.row_residual < tol && rec.col_residual < tol;
        trace.records.push(rec);
        trace.iterations = it;
        if done {
            trace.converged = true;
            return Ok((p, trace));
        }
    }
    Ok((scaled(&u, &v), trace))
}

/// Plain Sinkhorn scaling without trace bookkeeping. Returns the plan, the
/// number of iterations and whether `tol` was reached.
pub(crate) fn balance(
    k: ArrayView2<f64>,
    r: ArrayView1<f64>,
    c: ArrayView1<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(Array2<f64>, usize, bool)> {
    check_starvation(k, r, c)?;
    let mut u = Array1::<f64>::ones(r.len());
    let mut v = Array1::<f64>::ones(c.len());
    for it in 1..=max_iters {
        let kv = k.dot(&v);
        for i in 0..u.len() {
            u[i] = safe_div(r[i], kv[i]);
        }
        let ktu = k.t().dot(&u);
        for j in 0..v.len() {
            v[j] = safe_div(c[j], ktu[j]);
        }
        // columns are exact after the v update; check the rows
        let row_err: f64 = (0..u.len())
            .map(|i| {
                let s: f64 = (0..v.len()).map(|j| k[[i, j]] * v[j]).sum::<f64>() * u[i];
                (s - r[i]).abs()
            })
            .sum();
        if row_err < tol {
            let p = Array2::from_shape_fn(k.dim(), |(i, j)| u[i] * k[[i, j]] * v[j]);
            let (dr, dc) = marginal_residuals(p.view(), r, c);
            if dr < tol && dc < tol {
                return Ok((p, it, true));
            }
        }
    }
    let p = Array2::from_shape_fn(k.dim(), |(i, j)| u[i] * k[[i, j]] * v[j]);
    Ok((p, max_iters, false))
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// [`sinkhorn_knopp`] on `log K`, for kernels whose entries underflow.
/// Cells with `log K = -inf` are zeros of the kernel.
pub fn sinkhorn_knopp_log(
    log_k: ArrayView2<f64>,
    r: ArrayView1<f64>,
    c: ArrayView1<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(Array2<f64>, SolveTrace)> {
    let support = log_k.mapv(|x| if x == f64::NEG_INFINITY { 0.0 } else { 1.0 });
    check_starvation(support.view(), r, c)?;
    let (n, m) = log_k.dim();
    let mut f = Array1::<f64>::zeros(n);
    let mut g = Array1::<f64>::zeros(m);
    let ln_or_ninf = |x: f64| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY };
    let lr = r.mapv(ln_or_ninf);
    let lc = c.mapv(ln_or_ninf);
    let plan = |f: &Array1<f64>, g: &Array1<f64>| Array2::from_shape_fn((n, m), |(i, j)| (f[i] + log_k[[i, j]] + g[j]).exp());
    let kernel = log_k.mapv(f64::exp);
    let mut trace = SolveTrace::default();
    for it in 1..=max_iters {
        for i in 0..n {
            f[i] = if r[i] == 0.0 {
                f64::NEG_INFINITY
            } else {
                lr[i] - log_sum_exp((0..m).map(|j| log_k[[i, j]] + g[j]))
            };
        }
        for j in 0..m {
            g[j] = if c[j] == 0.0 {
                f64::NEG_INFINITY
            } else {
                lc[j] - log_sum_exp((0..n).map(|i| f[i] + log_k[[i, j]]))
            };
        }
        let p = plan(&f, &g).mapv(|x| if x.is_nan() { 0.0 } else { x });
        let rec = record(it, &p, kernel.view(), r, c);
        let done = rec.row_residual < tol && rec.col_residual < tol;
        trace.records.push(rec);
        trace.iterations = it;
        if done {
            trace.converged = true;
            return Ok((p, trace));
        }
    }
    let p = plan(&f, &g).mapv(|x| if x.is_nan() { 0.0 } else { x });
    Ok((p, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn feasible_kernel_is_fixed_point() {
        let k = array![[0.1, 0.2], [0.3, 0.4]];
        let r = array![0.3, 0.7];
        let c = array![0.4, 0.6];
        let (p, t) = sinkhorn_knopp(k.view(), r.view(), c.view(), 1e-12, 10).unwrap();
        assert_eq!(t.iterations, 1);
        assert!(t.converged);
        for (a, b) in p.iter().zip(k.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_row_in_one_pass() {
        let k = array![[0.5, 2.0, 1.0]];
        let (p, t) = sinkhorn_knopp(k.view(), array![1.0].view(), array![0.2, 0.3, 0.5].view(), 1e-12, 10).unwrap();
        assert_eq!(t.iterations, 1);
        assert_eq!(p, array![[0.2, 0.3, 0.5]]);
    }

    #[test]
    fn starvation_names_index() {
        let k = array![[0.5, 0.5], [0.0, 0.0]];
        let err = sinkhorn_knopp(k.view(), array![0.5, 0.5].view(), array![0.5, 0.5].view(), 1e-9, 10).unwrap_err();
        assert!(matches!(err, Error::Starved { axis: "row", index: 1 }));
        let k = array![[0.5, 0.0], [0.5, 0.0]];
        let err = sinkhorn_knopp(k.view(), array![0.5, 0.5].view(), array![0.5, 0.5].view(), 1e-9, 10).unwrap_err();
        assert!(matches!(err, Error::Starved { axis: "column", index: 1 }));
    }

    #[test]
    fn log_domain_matches_plain() {
        let m = array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.5], [0.3, 0.9, 0.1]];
        let r = array![0.2, 0.5, 0.3];
        let c = array![0.3, 0.3, 0.4];
        let lam = 3.0;
        let k = m.mapv(|x: f64| (-1.0 - lam * x).exp());
        let lk = m.mapv(|x| -1.0 - lam * x);
        let (p1, _) = sinkhorn_knopp(k.view(), r.view(), c.view(), 1e-12, 10_000).unwrap();
        let (p2, _) = sinkhorn_knopp_log(lk.view(), r.view(), c.view(), 1e-12, 10_000).unwrap();
        let d: f64 = p1.iter().zip(p2.iter()).map(|(a, b)| (a - b).abs()).sum();
        assert!(d < 1e-11, "{d}");
    }

    #[test]
    fn log_domain_survives_underflow() {
        let m = array![[0.0, 1.0], [1.0, 0.0]];
        let lk = m.mapv(|x| -1.0 - 2000.0 * x);
        let (p, t) = sinkhorn_knopp_log(lk.view(), array![0.4, 0.6].view(), array![0.4, 0.6].view(), 1e-10, 1000).unwrap();
        assert!(t.converged);
        assert!((p.sum() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lyapunov_decreases() {
        let k = array![[1.0, 0.2, 0.1], [0.3, 1.0, 0.2], [0.05, 0.4, 1.0]];
        let r = array![0.5, 0.3, 0.2];
        let c = array![0.2, 0.2, 0.6];
        let (_, t) = sinkhorn_knopp(k.view(), r.view(), c.view(), 1e-12, 10_000).unwrap();
        let l = t.lyapunov_history();
        assert!(l.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }
}
