//! Transportation simplex for the unregularized problem.
//!
//! The basis is a spanning tree on the bipartite row/column graph with
//! `n + m - 1` cells (degenerate cells with zero flow are allowed). Entering
//! and leaving cells are chosen by Bland's rule on the row-major cell index.

use ndarray::Array2;

use super::{Phase, SolveTrace, SolverConfig, TraceRecord};
use crate::error::{Error, Result};
use crate::transport::{TransportPlan, TransportProblem};

struct Basis {
    n: usize,
    m: usize,
    cells: Vec<(usize, usize)>,
}

impl Basis {
    // Northwest-corner rule: a monotone staircase from (0,0) to (n-1,m-1).
    fn northwest(r: &[f64], c: &[f64], flow: &mut Array2<f64>) -> Basis {
        let (n, m) = (r.len(), c.len());
        let mut rr = r.to_vec();
        let mut cc = c.to_vec();
        let (mut i, mut j) = (0, 0);
        let mut cells = Vec::with_capacity(n + m - 1);
        loop {
            let x = rr[i].min(cc[j]).max(0.0);
            flow[[i, j]] = x;
            cells.push((i, j));
            rr[i] -= x;
            cc[j] -= x;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if i == n - 1 {
                j += 1;
            } else if j == m - 1 || rr[i] <= cc[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Basis { n, m, cells }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        // node ids: rows 0..n, columns n..n+m; edge payload is the basis slot
        let mut adj = vec![Vec::new(); self.n + self.m];
        for (slot, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push((self.n + j, slot));
            adj[self.n + j].push((i, slot));
        }
        adj
    }

    fn potentials(&self, cost: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; self.n + self.m];
        pot[0] = 0.0;
        let mut stack = vec![0];
        while let Some(v) = stack.pop() {
            for &(w, slot) in &adj[v] {
                if pot[w].is_nan() {
                    let (i, j) = self.cells[slot];
                    // u_i + v_j = c_ij
                    pot[w] = cost[[i, j]] - pot[v];
                    stack.push(w);
                }
            }
        }
        (pot[..self.n].to_vec(), pot[self.n..].to_vec())
    }

    // Basis slots on the tree path from row i to column j, in order.
    fn path(&self, i: usize, j: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let target = self.n + j;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.n + self.m];
        let mut seen = vec![false; self.n + self.m];
        seen[i] = true;
        let mut stack = vec![i];
        while let Some(v) = stack.pop() {
            if v == target {
                break;
            }
            for &(w, slot) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some((v, slot));
                    stack.push(w);
                }
            }
        }
        let mut slots = Vec::new();
        let mut v = target;
        while v != i {
            let (u, slot) = parent[v].expect("basis is a spanning tree");
            slots.push(slot);
            v = u;
        }
        slots.reverse();
        slots
    }
}

/// Exact minimum-cost plan (a vertex of the transportation polytope).
pub fn solve_exact_lp(prob: &TransportProblem, cfg: &SolverConfig) -> Result<(TransportPlan, SolveTrace)> {
    let (n, m) = (prob.rows(), prob.cols());
    let r = prob.r().to_vec();
    let c = prob.c().to_vec();
    let sr: f64 = r.iter().sum();
    let sc: f64 = c.iter().sum();
    if (sr - sc).abs() > 2.0 * crate::transport::MARGINAL_SUM_TOL {
        return Err(Error::InvalidProblem(format!("marginal masses differ: {sr} vs {sc}")));
    }
    let cost = prob.cost().to_owned();
    let scale = cost.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    let eps = 1e-12 * scale;

    let mut flow = Array2::<f64>::zeros((n, m));
    let mut basis = Basis::northwest(&r, &c, &mut flow);
    let mut trace = SolveTrace::default();
    let limit = cfg.max_outer_iters.max(100 * (n + m) * (n + m));

    let objective = |flow: &Array2<f64>| -> f64 { flow.iter().zip(cost.iter()).map(|(a, b)| a * b).sum() };

    let mut optimal = false;
    for it in 1..=limit {
        let (u, v) = basis.potentials(&cost);
        let mut in_basis = vec![false; n * m];
        for &(i, j) in &basis.cells {
            in_basis[i * m + j] = true;
        }
        let entering = (0..n * m)
            .filter(|&k| !in_basis[k])
            .map(|k| (k / m, k % m))
            .find(|&(i, j)| cost[[i, j]] - u[i] - v[j] < -eps);
        let Some((ei, ej)) = entering else {
            optimal = true;
            break;
        };

        // cycle: entering (+), then alternating -, +, ... along the tree path
        let path = basis.path(ei, ej);
        let mut theta = f64::INFINITY;
        let mut leave: Option<usize> = None;
        for (pos, &slot) in path.iter().enumerate() {
            if pos % 2 == 0 {
                let (i, j) = basis.cells[slot];
                let x = flow[[i, j]];
                let better = match leave {
                    None => true,
                    Some(l) => {
                        let (li, lj) = basis.cells[l];
                        x < theta || (x == theta && (i, j) < (li, lj))
                    }
                };
                if better {
                    theta = x;
                    leave = Some(slot);
                }
            }
        }
        let leave = leave.expect("cycle has a decreasing cell");
        for (pos, &slot) in path.iter().enumerate() {
            let (i, j) = basis.cells[slot];
            if pos % 2 == 0 {
                flow[[i, j]] -= theta;
            } else {
                flow[[i, j]] += theta;
            }
        }
        let (li, lj) = basis.cells[leave];
        flow[[li, lj]] = 0.0;
        flow[[ei, ej]] += theta;
        basis.cells[leave] = (ei, ej);

        trace.records.push(TraceRecord {
            iter: it,
            phase: Phase::Full,
            objective: objective(&flow),
            row_residual: 0.0,
            col_residual: 0.0,
            aux: None,
            lyapunov: None,
        });
        trace.iterations = it;
    }

    flow.mapv_inplace(|x| x.max(0.0));
    let plan = TransportPlan::new(flow, prob)?;
    trace.converged = optimal;
    trace.records.push(TraceRecord {
        iter: trace.iterations + 1,
        phase: Phase::Full,
        objective: objective(&plan.plan),
        row_residual: plan.row_residual,
        col_residual: plan.col_residual,
        aux: None,
        lyapunov: None,
    });
    Ok((plan, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn point_masses() {
        let prob = TransportProblem::new(vec![0.0, 1.0], vec![1.0, 0.0, 0.0], vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]])
            .unwrap();
        let (p, t) = solve_exact_lp(&prob, &SolverConfig::default()).unwrap();
        assert!(t.converged);
        assert_eq!(p.plan, array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn diagonal_matching() {
        let prob = TransportProblem::new(vec![0.5, 0.5], vec![0.5, 0.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (p, _) = solve_exact_lp(&prob, &SolverConfig::default()).unwrap();
        assert_eq!(p.plan, array![[0.0, 0.5], [0.5, 0.0]]);
        let prob = TransportProblem::new(vec![0.5, 0.5], vec![0.5, 0.5], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let (p, _) = solve_exact_lp(&prob, &SolverConfig::default()).unwrap();
        assert_eq!(p.plan, array![[0.5, 0.0], [0.0, 0.5]]);
    }

    #[test]
    fn degenerate_marginals() {
        // equal partial sums force degenerate pivots
        let prob = TransportProblem::new(
            vec![0.25, 0.25, 0.25, 0.25],
            vec![0.25, 0.25, 0.25, 0.25],
            vec![
                vec![3.0, 2.0, 1.0, 0.0],
                vec![2.0, 3.0, 0.0, 1.0],
                vec![1.0, 0.0, 3.0, 2.0],
                vec![0.0, 1.0, 2.0, 3.0],
            ],
        )
        .unwrap();
        let (p, t) = solve_exact_lp(&prob, &SolverConfig::default()).unwrap();
        assert!(t.converged);
        let cost: f64 = p.plan.iter().zip(prob.cost().iter()).map(|(a, b)| a * b).sum();
        assert!(cost.abs() < 1e-15);
        assert!(p.row_residual < 1e-15 && p.col_residual < 1e-15);
    }
}
