use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_cost_matrix, CostKind, CostMatrixSpec, Manifest, Region, RegionDataset};
use crate::error::{Error, Result};
use crate::qmath::relative_entropy_term;
use crate::solvers::{solve, SolverConfig};
use crate::transport::{QParams, TransportProblem};

/// Per-cell cap on the KL penalty where one table has mass and the other
/// has none.
pub const KL_CELL_CAP: f64 = 50.0;

/// Argument order of the evaluation KL.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// `KL(truth ‖ inferred)`
    #[default]
    TruthFirst,
    /// `KL(inferred ‖ truth)`
    InferredFirst,
}

/// Generalized KL between two tables, each cell capped at [`KL_CELL_CAP`].
/// Returns the divergence and the number of capped cells.
pub fn kl_divergence(truth: ArrayView2<f64>, inferred: ArrayView2<f64>, dir: KlDirection) -> (f64, usize) {
    let mut total = 0.0;
    let mut capped = 0;
    for (&t, &p) in truth.iter().zip(inferred.iter()) {
        let (a, b) = match dir {
            KlDirection::TruthFirst => (t, p),
            KlDirection::InferredFirst => (p, t),
        };
        let term = relative_entropy_term(a, b, 1.0);
        if term > KL_CELL_CAP {
            capped += 1;
            total += KL_CELL_CAP;
        } else {
            total += term;
        }
    }
    (total, capped)
}

/// Mean absolute cell difference.
pub fn mean_abs_error(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

// Solves one region on the support of its marginals; zero rows and columns
// of the plan are forced by the constraints.
fn solve_region(region: &Region, cost: &Array2<f64>, params: &QParams, cfg: &SolverConfig) -> Result<Array2<f64>> {
    let rows: Vec<usize> = (0..region.r.len()).filter(|&i| region.r[i] > 0.0).collect();
    let cols: Vec<usize> = (0..region.c.len()).filter(|&j| region.c[j] > 0.0).collect();
    let r = Array1::from_iter(rows.iter().map(|&i| region.r[i]));
    let c = Array1::from_iter(cols.iter().map(|&j| region.c[j]));
    let sub = Array2::from_shape_fn((rows.len(), cols.len()), |(a, b)| cost[[rows[a], cols[b]]]);
    let prob = TransportProblem::from_arrays(r, c, sub)?;
    let sol = solve(&prob, params, cfg)?;
    if !sol.trace.converged {
        return Err(Error::NotConverged { iterations: sol.trace.iterations, residual: sol.plan.max_residual() });
    }
    let mut plan = Array2::zeros(cost.dim());
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            plan[[i, j]] = sol.plan.plan[[a, b]];
        }
    }
    Ok(plan)
}

/// Scores of one method over the regions with ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Regions that were scored, in dataset order.
    pub regions: Vec<String>,
    pub per_region_kl: Vec<f64>,
    pub per_region_abs_error: Vec<f64>,
    pub mean_kl: f64,
    pub sd_kl: f64,
    pub mean_abs: f64,
    pub sd_abs: f64,
    pub best_params: Option<QParams>,
    /// Regions whose solve failed; they are left out of the means.
    pub failed_regions: Vec<String>,
    /// Cells whose KL term hit [`KL_CELL_CAP`].
    pub capped_cells: usize,
}

impl EvalReport {
    fn build(
        data: &RegionDataset,
        joints: &[Option<Array2<f64>>],
        params: Option<QParams>,
        dir: KlDirection,
    ) -> EvalReport {
        let mut rep = EvalReport {
            regions: Vec::new(),
            per_region_kl: Vec::new(),
            per_region_abs_error: Vec::new(),
            mean_kl: f64::NAN,
            sd_kl: f64::NAN,
            mean_abs: f64::NAN,
            sd_abs: f64::NAN,
            best_params: params,
            failed_regions: Vec::new(),
            capped_cells: 0,
        };
        for (region, joint) in data.regions.iter().zip(joints) {
            let Some(joint) = joint else {
                rep.failed_regions.push(region.id.clone());
                continue;
            };
            let Some(truth) = &region.ground_truth else { continue };
            let (kl, capped) = kl_divergence(truth.view(), joint.view(), dir);
            rep.regions.push(region.id.clone());
            rep.per_region_kl.push(kl);
            rep.per_region_abs_error.push(mean_abs_error(truth.view(), joint.view()));
            rep.capped_cells += capped;
        }
        (rep.mean_kl, rep.sd_kl) = mean_sd(&rep.per_region_kl);
        (rep.mean_abs, rep.sd_abs) = mean_sd(&rep.per_region_abs_error);
        rep
    }
}

/// One line of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub algorithm: String,
    pub cost: Option<CostKind>,
    pub q: Option<f64>,
    pub lambda: Option<f64>,
    pub mean_kl: f64,
    pub sd_kl: f64,
    pub mean_abs: f64,
    pub sd_abs: f64,
    pub failed: usize,
}

impl ComparisonRow {
    fn from_report(algorithm: &str, cost: Option<CostKind>, rep: &EvalReport) -> Self {
        ComparisonRow {
            algorithm: algorithm.into(),
            cost,
            q: rep.best_params.map(|p| p.q),
            lambda: rep.best_params.map(|p| p.lambda),
            mean_kl: rep.mean_kl,
            sd_kl: rep.sd_kl,
            mean_abs: rep.mean_abs,
            sd_abs: rep.sd_abs,
            failed: rep.failed_regions.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub manifest: Manifest,
    pub kl_direction: KlDirection,
    pub method: EvalReport,
    /// Baselines first, then the method.
    pub rows: Vec<ComparisonRow>,
}

#[derive(Clone, Debug)]
pub struct InferenceOutput {
    pub report: InferenceReport,
    /// Inferred table per region (`None` when the solve failed), in dataset order.
    pub joints: Vec<(String, Option<Array2<f64>>)>,
}

fn solve_all(data: &RegionDataset, cost: &Array2<f64>, params: &QParams, cfg: &SolverConfig) -> Vec<Option<Array2<f64>>> {
    data.regions
        .par_iter()
        .map(|region| match solve_region(region, cost, params, cfg) {
            Ok(p) => Some(p),
            Err(e) => {
                log::warn!("region {}: {e}", region.id);
                None
            }
        })
        .collect()
}

/// Pooled ground truth over all regions that have one, weighted by record count.
fn population_average(data: &RegionDataset) -> Option<Array2<f64>> {
    let mut acc: Option<Array2<f64>> = None;
    let mut total = 0.0;
    for region in &data.regions {
        if let Some(t) = &region.ground_truth {
            let w = region.records.max(1) as f64;
            match &mut acc {
                Some(a) => a.scaled_add(w, t),
                None => acc = Some(t * w),
            }
            total += w;
        }
    }
    acc.map(|a| a / total)
}

/// Solves every region at `params` and scores it against ground truth,
/// alongside the population-average, independence and unregularized
/// (q = 0) baselines.
pub fn infer_all(
    data: &RegionDataset,
    params: &QParams,
    spec: &CostMatrixSpec,
    cfg: &SolverConfig,
    dir: KlDirection,
) -> Result<InferenceOutput> {
    let cost = build_cost_matrix(spec, data)?;
    let joints = solve_all(data, &cost, params, cfg);
    let method = EvalReport::build(data, &joints, Some(*params), dir);

    let mut rows = Vec::new();
    if let Some(avg) = population_average(data) {
        let j: Vec<_> = data.regions.iter().map(|_| Some(avg.clone())).collect();
        rows.push(ComparisonRow::from_report("population-average", None, &EvalReport::build(data, &j, None, dir)));
    }
    let indep: Vec<_> = data
        .regions
        .iter()
        .map(|g| Some(Array2::from_shape_fn((g.r.len(), g.c.len()), |(i, j)| g.r[i] * g.c[j])))
        .collect();
    rows.push(ComparisonRow::from_report("independence", None, &EvalReport::build(data, &indep, None, dir)));
    let lp = QParams { q: 0.0, lambda: 1.0 };
    let simplex = solve_all(data, &cost, &lp, cfg);
    let mut simplex_rep = EvalReport::build(data, &simplex, None, dir);
    simplex_rep.best_params = None;
    rows.push(ComparisonRow::from_report("simplex", Some(spec.kind), &simplex_rep));
    rows.push(ComparisonRow::from_report("trot", Some(spec.kind), &method));

    let report = InferenceReport { manifest: Manifest::default(), kl_direction: dir, method, rows };
    let joints = data.regions.iter().map(|g| g.id.clone()).zip(joints).collect();
    Ok(InferenceOutput { report, joints })
}

/// The `(q, λ)` grid searched by [`cross_validate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub qs: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Default for ParamGrid {
    /// `q ∈ {0.5, 0.8, 1, 1.5, 2, 2.8, 4}`, `λ` over half-decades of `[0.01, 1000]`.
    fn default() -> Self {
        ParamGrid {
            qs: vec![0.5, 0.8, 1.0, 1.5, 2.0, 2.8, 4.0],
            lambdas: (0..=10).map(|k| 10f64.powf(-2.0 + 0.5 * k as f64)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub q: f64,
    pub lambda: f64,
    /// Mean KL over the hold-in regions; `None` if any solve failed.
    pub mean_kl: Option<f64>,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: QParams,
    pub scores: Vec<GridScore>,
}

/// Scores every grid point by mean KL on the hold-in regions and returns the
/// best. Ties go to the smaller `λ`, then to the `q` closest to 1. Grid
/// points where some hold-in solve fails are not eligible.
pub fn cross_validate(
    data: &RegionDataset,
    holdin: &[String],
    grid: &ParamGrid,
    spec: &CostMatrixSpec,
    cfg: &SolverConfig,
    dir: KlDirection,
) -> Result<CvResult> {
    if grid.qs.is_empty() || grid.lambdas.is_empty() {
        return Err(Error::InvalidParams("cross-validation grid is empty".into()));
    }
    if holdin.is_empty() {
        return Err(Error::InvalidParams("no hold-in regions".into()));
    }
    let mut regions = Vec::new();
    for id in holdin {
        let g = data.region(id).ok_or_else(|| Error::Input(format!("unknown hold-in region '{id}'")))?;
        if g.ground_truth.is_none() {
            return Err(Error::Input(format!("hold-in region '{id}' has no ground truth")));
        }
        regions.push(g);
    }
    let cost = build_cost_matrix(spec, data)?;
    let points: Vec<QParams> = grid
        .qs
        .iter()
        .flat_map(|&q| grid.lambdas.iter().map(move |&lambda| (q, lambda)))
        .map(|(q, lambda)| QParams::new(q, lambda))
        .collect::<Result<_>>()?;

    let scores: Vec<GridScore> = points
        .par_iter()
        .map(|params| {
            let mut kls = Vec::new();
            let mut failed = 0;
            for g in &regions {
                match solve_region(g, &cost, params, cfg) {
                    Ok(p) => kls.push(kl_divergence(g.ground_truth.as_ref().unwrap().view(), p.view(), dir).0),
                    Err(_) => failed += 1,
                }
            }
            let mean_kl = (failed == 0).then(|| kls.iter().sum::<f64>() / kls.len() as f64);
            GridScore { q: params.q, lambda: params.lambda, mean_kl, failed }
        })
        .collect();

    let best = scores
        .iter()
        .filter_map(|s| s.mean_kl.map(|kl| (kl, s)))
        .min_by(|(ka, a), (kb, b)| {
            ka.total_cmp(kb)
                .then(a.lambda.total_cmp(&b.lambda))
                .then((a.q - 1.0).abs().total_cmp(&(b.q - 1.0).abs()))
        })
        .map(|(_, s)| QParams { q: s.q, lambda: s.lambda })
        .ok_or(Error::NotConverged { iterations: 0, residual: f64::NAN })?;
    Ok(CvResult { best, scores })
}
