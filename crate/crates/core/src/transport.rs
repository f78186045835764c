//! Problem statement, plans, Gibbs kernels, objectives and dual recovery.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmath::{self, is_classical, pow0, q_exp, q_exp_recip, q_log_unchecked};

/// Marginals must sum to one within this tolerance.
pub const MARGINAL_SUM_TOL: f64 = 1e-9;

/// An optimal transport problem: row marginal `r`, column marginal `c` and
/// an `n x m` cost matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportProblem {
    r: Array1<f64>,
    c: Array1<f64>,
    cost: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct ProblemFile {
    r: Vec<f64>,
    c: Vec<f64>,
    #[serde(rename = "M")]
    m: Vec<Vec<f64>>,
}

fn check_marginal(name: &str, v: ArrayView1<f64>) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidProblem(format!("marginal {name} is empty")));
    }
    if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::InvalidProblem(format!(
            "marginal {name}[{i}] = {x} must be finite and nonnegative"
        )));
    }
    let s = v.sum();
    if (s - 1.0).abs() > MARGINAL_SUM_TOL {
        return Err(Error::InvalidProblem(format!(
            "marginal {name} sums to {s} (must be 1 within {MARGINAL_SUM_TOL:e})"
        )));
    }
    Ok(())
}

impl TransportProblem {
    pub fn new(r: Vec<f64>, c: Vec<f64>, cost: Vec<Vec<f64>>) -> Result<Self> {
        let n = cost.len();
        let m = cost.first().map_or(0, Vec::len);
        if let Some(i) = cost.iter().position(|row| row.len() != m) {
            return Err(Error::Shape(format!("cost row {i} is ragged")));
        }
        let flat: Vec<f64> = cost.into_iter().flatten().collect();
        let cost = Array2::from_shape_vec((n, m), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Self::from_arrays(Array1::from(r), Array1::from(c), cost)
    }

    pub fn from_arrays(r: Array1<f64>, c: Array1<f64>, cost: Array2<f64>) -> Result<Self> {
        check_marginal("r", r.view())?;
        check_marginal("c", c.view())?;
        if cost.dim() != (r.len(), c.len()) {
            return Err(Error::Shape(format!(
                "cost is {:?} but marginals have lengths ({}, {})",
                cost.dim(),
                r.len(),
                c.len()
            )));
        }
        if let Some(x) = cost.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::InvalidProblem(format!(
                "cost entry {x} must be finite and nonnegative"
            )));
        }
        Ok(TransportProblem { r, c, cost })
    }

    pub fn r(&self) -> ArrayView1<'_, f64> {
        self.r.view()
    }

    pub fn c(&self) -> ArrayView1<'_, f64> {
        self.c.view()
    }

    pub fn cost(&self) -> ArrayView2<'_, f64> {
        self.cost.view()
    }

    pub fn rows(&self) -> usize {
        self.r.len()
    }

    pub fn cols(&self) -> usize {
        self.c.len()
    }

    /// The same problem with rows and columns swapped.
    pub fn transposed(&self) -> TransportProblem {
        TransportProblem {
            r: self.c.clone(),
            c: self.r.clone(),
            cost: self.cost.t().to_owned(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ProblemFile = serde_json::from_str(s)?;
        Self::new(f.r, f.c, f.m)
    }

    pub fn to_json(&self) -> String {
        let f = ProblemFile {
            r: self.r.to_vec(),
            c: self.c.to_vec(),
            m: self.cost.outer_iter().map(|row| row.to_vec()).collect(),
        };
        serde_json::to_string(&f).expect("problem serializes")
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&s)
    }
}

/// Regularization parameters: Tsallis index `q` and inverse weight `lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QParams {
    pub q: f64,
    pub lambda: f64,
}

impl QParams {
    pub fn new(q: f64, lambda: f64) -> Result<Self> {
        if !(q.is_finite() && q >= 0.0) {
            return Err(Error::InvalidParams(format!("q must be finite and >= 0, got {q}")));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParams(format!(
                "lambda must be finite and > 0, got {lambda}"
            )));
        }
        Ok(QParams { q, lambda })
    }
}

/// `‖P 1 - r‖₁` and `‖Pᵀ 1 - c‖₁`.
pub fn marginal_residuals(p: ArrayView2<f64>, r: ArrayView1<f64>, c: ArrayView1<f64>) -> (f64, f64) {
    let rows = p.sum_axis(Axis(1));
    let cols = p.sum_axis(Axis(0));
    let dr = rows.iter().zip(r.iter()).map(|(a, b)| (a - b).abs()).sum();
    let dc = cols.iter().zip(c.iter()).map(|(a, b)| (a - b).abs()).sum();
    (dr, dc)
}

/// A transport plan together with its marginal residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub row_residual: f64,
    pub col_residual: f64,
}

impl TransportPlan {
    pub fn new(plan: Array2<f64>, prob: &TransportProblem) -> Result<Self> {
        if plan.dim() != prob.cost.dim() {
            return Err(Error::Shape(format!(
                "plan is {:?}, problem is {:?}",
                plan.dim(),
                prob.cost.dim()
            )));
        }
        let (row_residual, col_residual) = marginal_residuals(plan.view(), prob.r(), prob.c());
        Ok(TransportPlan { plan, row_residual, col_residual })
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.plan.view()
    }

    pub fn mass(&self) -> f64 {
        self.plan.sum()
    }

    pub fn max_residual(&self) -> f64 {
        self.row_residual.max(self.col_residual)
    }
}

/// `Ũ = exp_q(-1) exp_q(λM)^{-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsKernel {
    pub u_tilde: Array2<f64>,
    pub q: f64,
    pub lambda: f64,
}

impl GibbsKernel {
    /// `g(M) = (1/λ) Σ Ũ^q`.
    pub fn g_offset(&self) -> f64 {
        self.u_tilde.iter().map(|&u| pow0(u, self.q)).sum::<f64>() / self.lambda
    }
}

/// `exp_q(-1)`, the scale of every regularized plan.
pub fn kernel_scale(q: f64) -> f64 {
    q_exp(-1.0, q)
}

pub fn build_gibbs_kernel(prob: &TransportProblem, params: &QParams) -> GibbsKernel {
    let e = kernel_scale(params.q);
    let (q, lambda) = (params.q, params.lambda);
    GibbsKernel {
        u_tilde: prob.cost.mapv(|m| e * q_exp_recip(lambda * m, q)),
        q,
        lambda,
    }
}

fn check_plan_shape(p: ArrayView2<f64>, prob: &TransportProblem) -> Result<()> {
    if p.dim() != prob.cost.dim() {
        return Err(Error::Shape(format!(
            "plan is {:?}, cost is {:?}",
            p.dim(),
            prob.cost.dim()
        )));
    }
    Ok(())
}

/// `⟨P, M⟩ - H_q(P)/λ`.
pub fn trot_objective(p: ArrayView2<f64>, prob: &TransportProblem, params: &QParams) -> Result<f64> {
    check_plan_shape(p, prob)?;
    let linear: f64 = p.iter().zip(prob.cost.iter()).map(|(a, m)| a * m).sum();
    let h = qmath::tsallis_entropy(p.iter(), params.q)?.h_q;
    Ok(linear - h / params.lambda)
}

/// `K_{1/q}(P^q, Ũ^q)`.
///
/// For every nonnegative `P` with no mass on cut-off kernel cells,
/// `trot_objective(P) = escort / λ - g(M)`.
pub fn escort_divergence_objective(p: ArrayView2<f64>, kernel: &GibbsKernel, q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::Domain(format!("escort objective needs q > 0, got {q}")));
    }
    let pq = qmath::escort_power(p, q);
    let uq = qmath::escort_power(kernel.u_tilde.view(), q);
    qmath::tsallis_relative_entropy(pq.view(), uq.view(), 1.0 / q)
}

/// Lagrange multipliers of the regularized problem, normalized so that the
/// first row anchor of every connected support component is 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DualCertificate {
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    /// False when the support graph is disconnected; the duals are then only
    /// determined up to one shift per component.
    pub unique: bool,
    /// `kkt_form_residual` of the recovered duals.
    pub residual: f64,
}

/// Plan predicted by the KKT form for the given duals.
pub fn kkt_plan(
    alpha: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    prob: &TransportProblem,
    params: &QParams,
) -> Array2<f64> {
    let e = kernel_scale(params.q);
    let mut out = Array2::zeros(prob.cost.dim());
    for ((i, j), v) in out.indexed_iter_mut() {
        let a = alpha[i] + params.lambda * prob.cost[[i, j]] + beta[j];
        *v = e * q_exp_recip(a, params.q);
    }
    out
}

/// `max_ij |p_ij - exp_q(-1) exp_q(α_i + λ m_ij + β_j)^{-1}|`.
pub fn kkt_form_residual(
    p: ArrayView2<f64>,
    cert: &DualCertificate,
    prob: &TransportProblem,
    params: &QParams,
) -> f64 {
    let fitted = kkt_plan(cert.alpha.view(), cert.beta.view(), prob, params);
    p.iter()
        .zip(fitted.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

// Derivative of a -> e * exp_q(a)^{-1}, written in terms of the value f.
fn kkt_slope(f: f64, a: f64, q: f64) -> f64 {
    if f == 0.0 {
        return 0.0;
    }
    if is_classical(q) {
        return -f;
    }
    let base = 1.0 + (1.0 - q) * a;
    if base <= 0.0 {
        0.0
    } else {
        -f / base
    }
}

/// Fits duals `(α, β)` so that `P` matches the KKT form.
///
/// The initial guess inverts each positive cell (`α_i + β_j = log_q(e/p) - λm`)
/// and solves the resulting least-squares system on the support graph; a
/// damped Gauss-Newton refinement then minimizes the squared residual of the
/// plan entries themselves. For `q > 1` cells below `1e-6 max P` start out
/// as cut off and only join the fit if the fitted duals predict mass there.
pub fn recover_duals(p: ArrayView2<f64>, prob: &TransportProblem, params: &QParams) -> Result<DualCertificate> {
    check_plan_shape(p, prob)?;
    let q = params.q;
    if !(q > 0.0) {
        return Err(Error::Domain("dual recovery needs q > 0".into()));
    }
    if let Some(x) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::Domain(format!("plan entry {x} is not a nonnegative number")));
    }
    let (n, m) = p.dim();
    let e = kernel_scale(q);
    let pmax = p.iter().cloned().fold(0.0, f64::max);
    let cutoff_regime = q > 1.0 && !is_classical(q);
    let floor = if cutoff_regime { 1e-6 * pmax } else { 0.0 };
    let mut fitted = Array2::from_elem((n, m), false);
    for ((i, j), &v) in p.indexed_iter() {
        fitted[[i, j]] = v > floor && v > 0.0;
    }

    // Fit the clearly positive cells first; any other cell that the fit
    // predicts above its plan value joins the fitted set.
    let (mut x, mut anchors, mut unique);
    loop {
        let support: Vec<(usize, usize)> =
            fitted.indexed_iter().filter(|(_, &f)| f).map(|(ij, _)| ij).collect();
        (anchors, unique) = anchor_components(&support, n, m);
        x = fit_support(p, prob, params, &support, &anchors);
        let mut grew = false;
        for ((i, j), f) in fitted.indexed_iter_mut() {
            if *f || p[[i, j]] <= 0.0 {
                continue;
            }
            let a = x[i] + params.lambda * prob.cost[[i, j]] + x[n + j];
            if e * q_exp_recip(a, q) - p[[i, j]] > floor.max(1e-15) {
                *f = true;
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }

    refine_gauss_newton(p, prob, params, &anchors, &mut x);

    let alpha = Array1::from(x[..n].to_vec());
    let beta = Array1::from(x[n..].to_vec());
    let mut cert = DualCertificate { alpha, beta, unique, residual: 0.0 };
    cert.residual = kkt_form_residual(p, &cert, prob, params);
    Ok(cert)
}

// One anchor per connected component of the bipartite support graph
// (rows are nodes 0..n, columns n..n+m).
fn anchor_components(support: &[(usize, usize)], n: usize, m: usize) -> (Vec<bool>, bool) {
    let mut uf = UnionFind::<usize>::new(n + m);
    for &(i, j) in support {
        uf.union(i, n + j);
    }
    let labels = uf.into_labeling();
    let mut anchors = vec![false; n + m];
    let mut seen = std::collections::HashSet::new();
    for (v, &l) in labels.iter().enumerate() {
        if seen.insert(l) {
            anchors[v] = true;
        }
    }
    let unique = seen.len() == 1;
    (anchors, unique)
}

// Least squares for α_i + β_j = log_q(e / p_ij) - λ m_ij over `support`.
fn fit_support(
    p: ArrayView2<f64>,
    prob: &TransportProblem,
    params: &QParams,
    support: &[(usize, usize)],
    anchors: &[bool],
) -> Vec<f64> {
    let (n, m) = p.dim();
    let e = kernel_scale(params.q);
    let mut normal = DMatrix::<f64>::zeros(n + m, n + m);
    let mut rhs = DVector::<f64>::zeros(n + m);
    for &(i, j) in support {
        let t = q_log_unchecked(e / p[[i, j]], params.q) - params.lambda * prob.cost[[i, j]];
        let (a, b) = (i, n + j);
        normal[(a, a)] += 1.0;
        normal[(b, b)] += 1.0;
        normal[(a, b)] += 1.0;
        normal[(b, a)] += 1.0;
        rhs[a] += t;
        rhs[b] += t;
    }
    solve_anchored(normal, rhs, anchors).as_slice().to_vec()
}

// Solves N x = b with the anchored variables pinned to 0. Unpinned variables
// with an empty row (isolated nodes) are also pinned.
fn solve_anchored(mut normal: DMatrix<f64>, mut rhs: DVector<f64>, anchors: &[bool]) -> DVector<f64> {
    let k = anchors.len();
    for v in 0..k {
        if anchors[v] || normal[(v, v)] == 0.0 {
            for w in 0..k {
                normal[(v, w)] = 0.0;
                normal[(w, v)] = 0.0;
            }
            normal[(v, v)] = 1.0;
            rhs[v] = 0.0;
        }
    }
    if let Some(ch) = normal.clone().cholesky() {
        return ch.solve(&rhs);
    }
    normal.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(k))
}

fn refine_gauss_newton(
    p: ArrayView2<f64>,
    prob: &TransportProblem,
    params: &QParams,
    anchors: &[bool],
    x: &mut [f64],
) {
    let (n, m) = p.dim();
    let q = params.q;
    let e = kernel_scale(q);
    let eval = |x: &[f64]| -> (f64, Vec<(usize, usize, f64, f64)>) {
        let mut cost = 0.0;
        let mut cells = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                let a = x[i] + params.lambda * prob.cost[[i, j]] + x[n + j];
                let f = e * q_exp_recip(a, q);
                let res = p[[i, j]] - f;
                cost += res * res;
                cells.push((i, j, res, kkt_slope(f, a, q)));
            }
        }
        (cost, cells)
    };

    let (mut cost, mut cells) = eval(x);
    if !cost.is_finite() {
        return;
    }
    let mut mu = 1e-3;
    for _ in 0..60 {
        if cost == 0.0 {
            break;
        }
        let mut jtj = DMatrix::<f64>::zeros(n + m, n + m);
        let mut jtr = DVector::<f64>::zeros(n + m);
        for &(i, j, res, d) in &cells {
            let (a, b) = (i, n + j);
            let d2 = d * d;
            jtj[(a, a)] += d2;
            jtj[(b, b)] += d2;
            jtj[(a, b)] += d2;
            jtj[(b, a)] += d2;
            jtr[a] += d * res;
            jtr[b] += d * res;
        }
        let scale = (0..n + m).map(|v| jtj[(v, v)]).fold(0.0, f64::max);
        if scale == 0.0 {
            break;
        }
        let mut improved = false;
        for _ in 0..12 {
            let mut damped = jtj.clone();
            for v in 0..n + m {
                damped[(v, v)] += mu * (jtj[(v, v)] + 1e-12 * scale);
            }
            let delta = solve_anchored(damped, jtr.clone(), anchors);
            let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            let (c2, cells2) = eval(&trial);
            if c2.is_finite() && c2 < cost {
                let rel = (cost - c2) / cost;
                x.copy_from_slice(&trial);
                cost = c2;
                cells = cells2;
                mu = (mu / 4.0).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            mu *= 8.0;
        }
        if !improved {
            break;
        }
    }
}

/// TROT value at `plan` plus `(β/λ)(H_q(r) + H_q(c))`.
pub fn beta_adjusted_distance(
    prob: &TransportProblem,
    params: &QParams,
    beta_const: f64,
    plan: ArrayView2<f64>,
) -> Result<f64> {
    let base = trot_objective(plan, prob, params)?;
    let hr = qmath::tsallis_entropy(prob.r.iter(), params.q)?.h_q;
    let hc = qmath::tsallis_entropy(prob.c.iter(), params.q)?.h_q;
    Ok(base + beta_const / params.lambda * (hr + hc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn two_by_two() -> TransportProblem {
        TransportProblem::new(vec![0.5, 0.5], vec![0.5, 0.5], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn validation() {
        assert!(TransportProblem::new(vec![0.5, 0.6], vec![1.0], vec![vec![0.0], vec![1.0]]).is_err());
        assert!(TransportProblem::new(vec![1.0], vec![1.0], vec![vec![f64::NAN]]).is_err());
        assert!(TransportProblem::new(vec![1.0], vec![0.5, 0.5], vec![vec![0.0]]).is_err());
        assert!(TransportProblem::new(vec![1.0], vec![0.5, 0.5], vec![vec![0.0, -1.0]]).is_err());
        let err = TransportProblem::new(vec![0.4, 0.4], vec![1.0], vec![vec![0.0], vec![1.0]]).unwrap_err();
        assert!(err.to_string().contains("marginal r"));
        assert!(QParams::new(-0.1, 1.0).is_err());
        assert!(QParams::new(0.5, 0.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = TransportProblem::new(vec![0.2, 0.8], vec![0.1, 0.3, 0.6], vec![vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 0.5]])
            .unwrap();
        let back = TransportProblem::from_json(&p.to_json()).unwrap();
        assert_eq!(p, back);
        assert!(p.to_json().contains("\"M\""));
    }

    #[test]
    fn objective_examples() {
        let prob = two_by_two();
        let u = Array2::from_elem((2, 2), 0.25);
        let params = QParams::new(2.0, 1.0).unwrap();
        assert_relative_eq!(trot_objective(u.view(), &prob, &params).unwrap(), -0.25, epsilon = 1e-15);

        // zero cost, product plan, Shannon: -H(r) - H(c)
        let prob = TransportProblem::new(vec![0.3, 0.7], vec![0.6, 0.4], vec![vec![0.0; 2]; 2]).unwrap();
        let p = array![[0.18, 0.12], [0.42, 0.28]];
        let params = QParams::new(1.0, 1.0).unwrap();
        let h = |v: &[f64]| -> f64 { v.iter().map(|x| -x * x.ln()).sum() };
        let expect = -h(&[0.3, 0.7]) - h(&[0.6, 0.4]);
        assert_relative_eq!(trot_objective(p.view(), &prob, &params).unwrap(), expect, epsilon = 1e-14);

        assert!(trot_objective(Array2::zeros((3, 2)).view(), &prob, &params).is_err());
    }

    #[test]
    fn kernel_examples() {
        let prob = TransportProblem::new(vec![1.0], vec![1.0], vec![vec![3.0]]).unwrap();
        let k = build_gibbs_kernel(&prob, &QParams::new(0.5, 1.0).unwrap());
        assert_relative_eq!(k.u_tilde[[0, 0]], 0.04, epsilon = 1e-15);
        let prob1 = TransportProblem::new(vec![1.0], vec![1.0], vec![vec![1.0]]).unwrap();
        let k = build_gibbs_kernel(&prob1, &QParams::new(1.0, 1.0).unwrap());
        assert_relative_eq!(k.u_tilde[[0, 0]], (-2.0f64).exp(), epsilon = 1e-16);
        let zero = TransportProblem::new(vec![0.5, 0.5], vec![1.0], vec![vec![0.0], vec![0.0]]).unwrap();
        for q in [0.3, 1.0, 2.5] {
            let k = build_gibbs_kernel(&zero, &QParams::new(q, 3.0).unwrap());
            assert!(k.u_tilde.iter().all(|&u| u == q_exp(-1.0, q)));
        }
        // cutoff for q > 1 once λm ≥ 1/(q-1)
        let big = TransportProblem::new(vec![1.0], vec![1.0], vec![vec![2.0]]).unwrap();
        let k = build_gibbs_kernel(&big, &QParams::new(2.0, 1.0).unwrap());
        assert_eq!(k.u_tilde[[0, 0]], 0.0);
    }

    #[test]
    fn escort_of_kernel_is_zero() {
        let prob = two_by_two();
        for q in [0.5, 1.0, 2.0] {
            let params = QParams::new(q, 0.7).unwrap();
            let k = build_gibbs_kernel(&prob, &params);
            assert_eq!(escort_divergence_objective(k.u_tilde.view(), &k, q).unwrap(), 0.0);
        }
        let k = build_gibbs_kernel(&prob, &QParams::new(0.0, 1.0).unwrap());
        assert!(escort_divergence_objective(k.u_tilde.view(), &k, 0.0).is_err());
    }

    #[test]
    fn escort_identity_on_two_by_two() {
        let prob = TransportProblem::new(vec![0.4, 0.6], vec![0.7, 0.3], vec![vec![0.1, 0.9], vec![0.6, 0.2]]).unwrap();
        let p = array![[0.3, 0.1], [0.4, 0.2]];
        let params = QParams::new(0.5, 1.5).unwrap();
        let k = build_gibbs_kernel(&prob, &params);
        let lhs = escort_divergence_objective(p.view(), &k, 0.5).unwrap();
        let rhs = params.lambda * (trot_objective(p.view(), &prob, &params).unwrap() + k.g_offset());
        assert_relative_eq!(lhs, rhs, epsilon = 1e-13);
    }

    #[test]
    fn duals_round_trip() {
        let prob = TransportProblem::new(
            vec![0.2, 0.3, 0.5],
            vec![0.25, 0.25, 0.5],
            vec![vec![0.1, 0.5, 0.9], vec![0.4, 0.0, 0.3], vec![0.7, 0.2, 0.6]],
        )
        .unwrap();
        for q in [0.3, 0.5, 1.0, 1.5, 2.0] {
            let params = QParams::new(q, 1.3).unwrap();
            let alpha = array![0.0, 0.2, -0.15];
            let beta = array![0.05, -0.1, 0.12];
            let p = kkt_plan(alpha.view(), beta.view(), &prob, &params);
            let cert = recover_duals(p.view(), &prob, &params).unwrap();
            assert!(cert.unique);
            assert!(cert.residual < 1e-8, "q={q} residual {}", cert.residual);
            for i in 0..3 {
                assert!((cert.alpha[i] - alpha[i]).abs() < 1e-8, "q={q}");
                assert!((cert.beta[i] - beta[i]).abs() < 1e-8, "q={q}");
            }
        }
    }

    #[test]
    fn duals_one_by_one() {
        let prob = TransportProblem::new(vec![1.0], vec![1.0], vec![vec![0.4]]).unwrap();
        let params = QParams::new(0.5, 2.0).unwrap();
        let p = array![[1.0]];
        let cert = recover_duals(p.view(), &prob, &params).unwrap();
        assert_eq!(cert.alpha[0], 0.0);
        let expect = q_log_unchecked(kernel_scale(0.5), 0.5) - 0.8;
        assert_relative_eq!(cert.beta[0], expect, epsilon = 1e-12);
        assert!(cert.residual < 1e-14);
    }

    #[test]
    fn disconnected_support_is_flagged() {
        let prob = TransportProblem::new(vec![0.5, 0.5], vec![0.5, 0.5], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let p = array![[0.5, 0.0], [0.0, 0.5]];
        let cert = recover_duals(p.view(), &prob, &QParams::new(2.0, 1.0).unwrap()).unwrap();
        assert!(!cert.unique);
    }

    #[test]
    fn shift_invariance() {
        let prob = two_by_two();
        let params = QParams::new(0.7, 2.0).unwrap();
        let p = array![[0.3, 0.2], [0.2, 0.3]];
        let cert = DualCertificate { alpha: array![0.0, 0.1], beta: array![0.3, -0.2], unique: true, residual: 0.0 };
        let base = kkt_form_residual(p.view(), &cert, &prob, &params);
        assert!(base > 0.0);
        let shifted = DualCertificate {
            alpha: &cert.alpha + 0.25,
            beta: &cert.beta - 0.25,
            ..cert.clone()
        };
        assert_relative_eq!(kkt_form_residual(p.view(), &shifted, &prob, &params), base, epsilon = 1e-15);
    }

    #[test]
    fn beta_distance_of_identity_plan_is_zero() {
        let r = vec![0.2, 0.5, 0.3];
        let cost = vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]];
        let prob = TransportProblem::new(r.clone(), r.clone(), cost).unwrap();
        let diag = Array2::from_diag(&Array1::from(r));
        for q in [0.5, 1.0, 2.0] {
            let params = QParams::new(q, 3.0).unwrap();
            let d = beta_adjusted_distance(&prob, &params, 0.5, diag.view()).unwrap();
            assert!(d.abs() < 1e-15, "q={q} d={d}");
            let plain = beta_adjusted_distance(&prob, &params, 0.0, diag.view()).unwrap();
            assert_eq!(plain, trot_objective(diag.view(), &prob, &params).unwrap());
        }
    }
}
