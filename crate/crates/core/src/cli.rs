//! The `trot` command line.
//!
//! Every command is deterministic given its inputs, seed and configuration.
//! Exit codes: 0 on success, 1 on a runtime failure or, with `--strict`, on
//! non-convergence, 2 on malformed input or usage errors.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eco::{
    self, CostKind, CostMatrixSpec, KlDirection, ParamGrid, SurveyTable, SynthOptions, ETHNICITIES, PARTIES,
};
use crate::error::{Error, Result};
use crate::lab::{self, SweepReport};
use crate::solvers::{self, SolverConfig};
use crate::transport::{trot_objective, QParams, TransportProblem};

#[derive(Parser, Debug)]
#[command(name = "trot", version, about = "Tsallis-regularized optimal transport and ecological inference")]
pub struct Cli {
    /// JSON configuration file. Flags given on the command line win over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for region solves and sweeps [default: available parallelism]
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve one transport problem given as JSON {"r", "c", "M"}.
    Solve(SolveArgs),
    /// Infer joint tables for every region of a records file and compare with baselines.
    Infer(InferArgs),
    /// Cross-validate (q, lambda) on the regions of one district.
    Cv(CvArgs),
    /// Metric-property sweeps of the regularized distances.
    Sweep(SweepArgs),
    /// Write a synthetic records file, its true joints and a matching survey table.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CostArg {
    Rbf,
    Survey,
    #[value(name = "no_prior", alias = "no-prior")]
    NoPrior,
}

impl From<CostArg> for CostKind {
    fn from(c: CostArg) -> Self {
        match c {
            CostArg::Rbf => CostKind::Rbf,
            CostArg::Survey => CostKind::Survey,
            CostArg::NoPrior => CostKind::NoPrior,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KlArg {
    TruthFirst,
    InferredFirst,
}

impl From<KlArg> for KlDirection {
    fn from(k: KlArg) -> Self {
        match k {
            KlArg::TruthFirst => KlDirection::TruthFirst,
            KlArg::InferredFirst => KlDirection::InferredFirst,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Triangle,
    Gluing,
    All,
}

#[derive(Args, Debug, Default)]
pub struct ParamArgs {
    /// Tsallis order q >= 0.
    #[arg(long)]
    pub q: Option<f64>,
    /// Regularization strength lambda > 0.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct SolverArgs {
    /// Marginal feasibility tolerance (l1, per marginal).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Outer iteration cap.
    #[arg(long, value_name = "N")]
    pub max_iters: Option<usize>,
    /// Safeguards of the second-order scaling solver (0 < q < 1).
    #[arg(long, value_name = "on|off")]
    pub production_mods: Option<Toggle>,
}

#[derive(Args, Debug, Default)]
pub struct CostArgs {
    /// Cost matrix construction [default: rbf]
    #[arg(long)]
    pub cost: Option<CostArg>,
    /// RBF kernel width [default: 10]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Survey proportions JSON (parties x ethnicities), for --cost survey.
    #[arg(long, value_name = "FILE")]
    pub survey: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct CvGridArgs {
    /// District whose regions tune (q, lambda) [default: first district]
    #[arg(long, value_name = "DISTRICT")]
    pub holdin: Option<String>,
    /// Comma-separated q values of the grid.
    #[arg(long, value_delimiter = ',', value_name = "Q,...")]
    pub grid_q: Option<Vec<f64>>,
    /// Comma-separated lambda values of the grid.
    #[arg(long, value_delimiter = ',', value_name = "L,...")]
    pub grid_lambda: Option<Vec<f64>>,
    /// Which way round the evaluation KL is taken [default: truth-first]
    #[arg(long)]
    pub kl_direction: Option<KlArg>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// Problem JSON.
    pub problem: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory [default: out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Exit with status 1 if the solver does not converge.
    #[arg(long)]
    pub strict: bool,
    /// Also write the plan as a CSV grid.
    #[arg(long, value_name = "CSV")]
    pub emit_heatmap: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Records CSV.
    pub records: PathBuf,
    /// Fixed (q, lambda); whichever is missing is cross-validated.
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub cost: CostArgs,
    #[command(flatten)]
    pub grid: CvGridArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory [default: out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Exit with status 1 if any region fails to converge.
    #[arg(long)]
    pub strict: bool,
    /// Also write every inferred table in long CSV form (region, party, ethnicity, mass).
    #[arg(long, value_name = "CSV")]
    pub emit_heatmap: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    /// Records CSV.
    pub records: PathBuf,
    #[command(flatten)]
    pub cost: CostArgs,
    #[command(flatten)]
    pub grid: CvGridArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory [default: out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Which sweep to run.
    #[arg(long, default_value = "all")]
    pub kind: SweepKind,
    /// Trials per configuration [default: 500 triangle, 1000 gluing]
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    /// Support size of the random marginals.
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Random metric matrices for the triangle sweep.
    #[arg(long, default_value_t = 2)]
    pub metrics: usize,
    /// Comma-separated constants beta of the adjusted distance.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub beta: Vec<f64>,
    /// Order q [default: 1 for the triangle sweep, 1,1.5,2,4 for gluing]
    #[arg(long)]
    pub q: Option<f64>,
    /// Regularization strength [default: 1]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of regions.
    #[arg(long, default_value_t = 20)]
    pub regions: usize,
    /// Records sampled per region.
    #[arg(long, default_value_t = 50_000)]
    pub records: usize,
    /// 0 gives independent joints, 1 strongly cost-aligned ones.
    #[arg(long, default_value_t = 0.8)]
    pub coupling: f64,
    /// Consecutive regions grouped into one district.
    #[arg(long, default_value_t = 5)]
    pub regions_per_district: usize,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Contents of `--config`. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub q: Option<f64>,
    pub lambda: Option<f64>,
    pub cost: Option<CostKind>,
    pub gamma: Option<f64>,
    pub survey: Option<PathBuf>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub production_mods: Option<bool>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub kl_direction: Option<KlDirection>,
    pub holdin: Option<String>,
    pub grid_q: Option<Vec<f64>>,
    pub grid_lambda: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub strict: Option<bool>,
    /// Full solver configuration; the flat keys above override it.
    pub solver: Option<SolverConfig>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|source| Error::File { path: path.to_owned(), source })?;
        serde_json::from_str(&s).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }

    fn solver(&self, args: &SolverArgs) -> SolverConfig {
        let mut cfg = self.solver.clone().unwrap_or_default();
        if let Some(t) = args.tol.or(self.tol) {
            cfg.marginal_tol = t;
        }
        if let Some(n) = args.max_iters.or(self.max_iters) {
            cfg.max_outer_iters = n;
        }
        if let Some(on) = args.production_mods.map(|t| t == Toggle::On).or(self.production_mods) {
            cfg.production_mods = on;
        }
        cfg
    }

    fn out(&self, arg: &Option<PathBuf>) -> PathBuf {
        arg.clone().or_else(|| self.out.clone()).unwrap_or_else(|| PathBuf::from("out"))
    }

    fn params(&self, args: &ParamArgs) -> (Option<f64>, Option<f64>) {
        (args.q.or(self.q), args.lambda.or(self.lambda))
    }

    fn cost_spec(&self, args: &CostArgs) -> Result<CostMatrixSpec> {
        let kind = args.cost.map(CostKind::from).or(self.cost).unwrap_or(CostKind::Rbf);
        let mut spec = CostMatrixSpec::new(kind);
        if let Some(g) = args.gamma.or(self.gamma) {
            spec.gamma = g;
        }
        if kind == CostKind::Survey {
            let path = args
                .survey
                .clone()
                .or_else(|| self.survey.clone())
                .ok_or_else(|| Error::Input("--cost survey needs --survey FILE".into()))?;
            spec.survey = Some(SurveyTable::read_json(&path)?.matrix()?);
        }
        Ok(spec)
    }

    fn kl_direction(&self, args: &CvGridArgs) -> KlDirection {
        args.kl_direction.map(KlDirection::from).or(self.kl_direction).unwrap_or_default()
    }
}

/// What a command reports back besides its files.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Some solve did not converge.
    pub not_converged: bool,
    pub strict: bool,
}

/// Parses `std::env::args` and runs the command.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(&cli) {
        Ok(o) if o.strict && o.not_converged => {
            eprintln!("error: solver did not converge");
            ExitCode::from(1)
        }
        Ok(o) => {
            if o.not_converged {
                log::warn!("some solves did not converge");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let file = match &cli.config {
        Some(p) => FileConfig::read(p)?,
        None => FileConfig::default(),
    };
    if let Some(j) = cli.jobs.or(file.jobs) {
        if j == 0 {
            return Err(Error::InvalidParams("--jobs must be >= 1".into()));
        }
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    match &cli.command {
        Command::Solve(a) => cmd_solve(a, &file),
        Command::Infer(a) => cmd_infer(a, &file),
        Command::Cv(a) => cmd_cv(a, &file),
        Command::Sweep(a) => cmd_sweep(a, &file),
        Command::Synth(a) => cmd_synth(a, &file),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::File { path: dir.to_owned(), source })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| Error::File { path: path.to_owned(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn required_params(q: Option<f64>, lambda: Option<f64>) -> Result<QParams> {
    match (q, lambda) {
        (Some(q), Some(l)) => QParams::new(q, l),
        _ => Err(Error::InvalidParams("both --q and --lambda are required".into())),
    }
}

#[derive(Serialize)]
struct PlanFile {
    q: f64,
    lambda: f64,
    converged: bool,
    iterations: usize,
    objective: Option<f64>,
    row_residual: f64,
    col_residual: f64,
    plan: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct DualsFile {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    unique: bool,
    kkt_residual: f64,
}

fn write_grid(path: &Path, a: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["row".to_string()];
    header.extend((0..a.ncols()).map(|j| j.to_string()));
    w.write_record(&header)?;
    for (i, row) in a.outer_iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_solve(a: &SolveArgs, file: &FileConfig) -> Result<Outcome> {
    let prob = TransportProblem::read_json(&a.problem)?;
    let (q, lambda) = file.params(&a.params);
    let params = required_params(q, lambda)?;
    let cfg = file.solver(&a.solver);
    let out = file.out(&a.out);
    let sol = solvers::solve(&prob, &params, &cfg)?;
    log::info!(
        "{} after {} iterations, residual {:e}",
        if sol.trace.converged { "converged" } else { "stopped" },
        sol.trace.iterations,
        sol.plan.max_residual()
    );

    write_json(
        &out.join("plan.json"),
        &PlanFile {
            q: params.q,
            lambda: params.lambda,
            converged: sol.trace.converged,
            iterations: sol.trace.iterations,
            objective: trot_objective(sol.plan.view(), &prob, &params).ok().filter(|v| v.is_finite()),
            row_residual: sol.plan.row_residual,
            col_residual: sol.plan.col_residual,
            plan: rows(&sol.plan.plan),
        },
    )?;
    if let Some(d) = &sol.duals {
        write_json(
            &out.join("duals.json"),
            &DualsFile { alpha: d.alpha.to_vec(), beta: d.beta.to_vec(), unique: d.unique, kkt_residual: d.residual },
        )?;
    }
    let mut t = create(&out.join("trace.jsonl"))?;
    sol.trace.write_jsonl(&mut t)?;
    t.flush()?;
    if let Some(path) = &a.emit_heatmap {
        write_grid(path, &sol.plan.plan)?;
    }
    Ok(Outcome { not_converged: !sol.trace.converged, strict: a.strict || file.strict.unwrap_or(false) })
}

fn holdin_regions(data: &eco::RegionDataset, district: Option<&String>) -> Result<(String, Vec<String>)> {
    let district = match district {
        Some(d) => d.clone(),
        None => data.districts().into_iter().next().ok_or_else(|| Error::Input("no regions in the records".into()))?,
    };
    let ids = data.district_regions(&district);
    if ids.is_empty() {
        return Err(Error::Input(format!("district '{district}' has no regions")));
    }
    Ok((district, ids))
}

fn grid(file: &FileConfig, args: &CvGridArgs) -> ParamGrid {
    let mut g = ParamGrid::default();
    if let Some(qs) = args.grid_q.clone().or_else(|| file.grid_q.clone()) {
        g.qs = qs;
    }
    if let Some(ls) = args.grid_lambda.clone().or_else(|| file.grid_lambda.clone()) {
        g.lambdas = ls;
    }
    g
}

#[derive(Serialize)]
struct CvFile<'a> {
    district: &'a str,
    regions: &'a [String],
    best: QParams,
    scores: &'a [eco::GridScore],
}

fn write_cv(out: &Path, district: &str, regions: &[String], cv: &eco::CvResult) -> Result<()> {
    write_json(&out.join("cv.json"), &CvFile { district, regions, best: cv.best, scores: &cv.scores })?;
    let mut w = csv::Writer::from_writer(create(&out.join("cv.csv"))?);
    w.write_record(["q", "lambda", "mean_kl", "failed"])?;
    for s in &cv.scores {
        w.write_record([
            s.q.to_string(),
            s.lambda.to_string(),
            s.mean_kl.map_or(String::new(), |v| v.to_string()),
            s.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_cv(
    data: &eco::RegionDataset,
    file: &FileConfig,
    args: &CvGridArgs,
    grid: &ParamGrid,
    spec: &CostMatrixSpec,
    cfg: &SolverConfig,
    out: &Path,
) -> Result<eco::CvResult> {
    let (district, ids) = holdin_regions(data, args.holdin.as_ref().or(file.holdin.as_ref()))?;
    log::info!("cross-validating {} grid points on district {district}", grid.qs.len() * grid.lambdas.len());
    let cv = eco::cross_validate(data, &ids, grid, spec, cfg, file.kl_direction(args))?;
    write_cv(out, &district, &ids, &cv)?;
    Ok(cv)
}

fn cmd_cv(a: &CvArgs, file: &FileConfig) -> Result<Outcome> {
    let data = eco::ingest(&a.records)?;
    let spec = file.cost_spec(&a.cost)?;
    let cfg = file.solver(&a.solver);
    let out = file.out(&a.out);
    let cv = run_cv(&data, file, &a.grid, &grid(file, &a.grid), &spec, &cfg, &out)?;
    log::info!("best q = {}, lambda = {}", cv.best.q, cv.best.lambda);
    Ok(Outcome::default())
}

#[derive(Serialize)]
struct JointsFile {
    manifest: eco::Manifest,
    /// `null` for regions whose solve failed.
    joints: std::collections::BTreeMap<String, Option<Vec<Vec<f64>>>>,
}

fn cmd_infer(a: &InferArgs, file: &FileConfig) -> Result<Outcome> {
    let data = eco::ingest(&a.records)?;
    if data.excluded_rows > 0 {
        log::info!("{} incomplete rows excluded", data.excluded_rows);
    }
    let spec = file.cost_spec(&a.cost)?;
    let cfg = file.solver(&a.solver);
    let out = file.out(&a.out);
    let dir = file.kl_direction(&a.grid);
    let params = match file.params(&a.params) {
        (Some(q), Some(l)) => QParams::new(q, l)?,
        (q, l) => {
            let mut g = grid(file, &a.grid);
            if let Some(q) = q {
                g.qs = vec![q];
            }
            if let Some(l) = l {
                g.lambdas = vec![l];
            }
            run_cv(&data, file, &a.grid, &g, &spec, &cfg, &out)?.best
        }
    };
    log::info!("inferring {} regions at q = {}, lambda = {}", data.regions.len(), params.q, params.lambda);
    let result = eco::infer_all(&data, &params, &spec, &cfg, dir)?;

    write_json(&out.join("report.json"), &result.report)?;
    let mut w = csv::Writer::from_writer(create(&out.join("report.csv"))?);
    w.write_record(["algorithm", "cost", "q", "lambda", "mean_kl", "sd_kl", "mean_abs", "sd_abs", "failed"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &result.report.rows {
        let cost = r.cost.map_or(String::new(), |c| serde_json::to_value(c).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default());
        w.write_record([
            r.algorithm.clone(),
            cost,
            opt(r.q),
            opt(r.lambda),
            r.mean_kl.to_string(),
            r.sd_kl.to_string(),
            r.mean_abs.to_string(),
            r.sd_abs.to_string(),
            r.failed.to_string(),
        ])?;
    }
    w.flush()?;

    write_json(
        &out.join("joints.json"),
        &JointsFile {
            manifest: result.report.manifest.clone(),
            joints: result.joints.iter().map(|(id, j)| (id.clone(), j.as_ref().map(rows))).collect(),
        },
    )?;

    // per-cell truth against inference, for correlation plots
    let mut w = csv::Writer::from_writer(create(&out.join("scatter.csv"))?);
    w.write_record(["region", "party", "ethnicity", "truth", "inferred"])?;
    for ((id, joint), region) in result.joints.iter().zip(&data.regions) {
        let (Some(joint), Some(truth)) = (joint, &region.ground_truth) else { continue };
        for ((i, j), v) in joint.indexed_iter() {
            w.write_record([id, PARTIES[i], ETHNICITIES[j], &truth[[i, j]].to_string(), &v.to_string()])?;
        }
    }
    w.flush()?;

    // per-region errors, for histograms
    let m = &result.report.method;
    let mut w = csv::Writer::from_writer(create(&out.join("errors.csv"))?);
    w.write_record(["region", "kl", "abs_error"])?;
    for ((id, kl), ae) in m.regions.iter().zip(&m.per_region_kl).zip(&m.per_region_abs_error) {
        w.write_record([id.clone(), kl.to_string(), ae.to_string()])?;
    }
    w.flush()?;

    if let Some(path) = &a.emit_heatmap {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(["region", "party", "ethnicity", "mass"])?;
        for (id, joint) in &result.joints {
            if let Some(joint) = joint {
                for ((i, j), v) in joint.indexed_iter() {
                    w.write_record([id, PARTIES[i], ETHNICITIES[j], &v.to_string()])?;
                }
            }
        }
        w.flush()?;
    }
    Ok(Outcome { not_converged: !m.failed_regions.is_empty(), strict: a.strict || file.strict.unwrap_or(false) })
}

#[derive(Serialize)]
struct TriangleEntry {
    metric: usize,
    beta: f64,
    q: f64,
    lambda: f64,
    #[serde(flatten)]
    report: SweepReport,
}

#[derive(Serialize)]
struct GluingEntry {
    q: f64,
    #[serde(flatten)]
    report: SweepReport,
}

#[derive(Serialize)]
struct SweepFile {
    seed: u64,
    n: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    triangle: Vec<TriangleEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    gluing: Vec<GluingEntry>,
}

fn cmd_sweep(a: &SweepArgs, file: &FileConfig) -> Result<Outcome> {
    if a.n < 2 {
        return Err(Error::InvalidParams("--n must be >= 2".into()));
    }
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let q = a.q.or(file.q);
    let lambda = a.lambda.or(file.lambda).unwrap_or(1.0);
    let out = file.out(&a.out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SweepFile { seed, n: a.n, triangle: Vec::new(), gluing: Vec::new() };

    if matches!(a.kind, SweepKind::Triangle | SweepKind::All) {
        let params = QParams::new(q.unwrap_or(1.0), lambda)?;
        let trials = a.trials.unwrap_or(500);
        for metric in 0..a.metrics {
            let m = lab::random_metric(a.n, &mut rng);
            for &beta in &a.beta {
                let r = lab::triangle_sweep(m.view(), beta, &params, trials, &mut rng)?;
                log::info!("triangle metric {metric} beta {beta}: {} / {} violations", r.violations, r.trials);
                report.triangle.push(TriangleEntry { metric, beta, q: params.q, lambda, report: r });
            }
        }
    }
    if matches!(a.kind, SweepKind::Gluing | SweepKind::All) {
        let trials = a.trials.unwrap_or(1000);
        let qs = q.map_or_else(|| vec![1.0, 1.5, 2.0, 4.0], |q| vec![q]);
        for q in qs {
            let r = lab::gluing_sweep(a.n, q, trials, &mut rng)?;
            log::info!("gluing q {q}: {} / {} violations", r.violations, r.trials);
            report.gluing.push(GluingEntry { q, report: r });
        }
    }
    write_json(&out.join("sweep.json"), &report)?;
    Ok(Outcome::default())
}

fn cmd_synth(a: &SynthArgs, file: &FileConfig) -> Result<Outcome> {
    let opts = SynthOptions {
        n_regions: a.regions,
        records_per_region: a.records,
        coupling_strength: a.coupling,
        seed: a.seed.or(file.seed).unwrap_or(0),
        regions_per_district: a.regions_per_district,
    };
    let data = eco::synthesize_dataset(&opts)?;
    let out = file.out(&a.out);
    data.write_to(&out)?;
    log::info!("wrote {} regions to {}", a.regions, out.display());
    Ok(Outcome::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_flag_is_rejected() {
        let e = Cli::try_parse_from(["trot", "solve", "p.json", "--bogus"]).unwrap_err();
        assert_eq!(e.kind(), clap::error::ErrorKind::UnknownArgument);
    }

    #[test]
    fn flags_override_config() {
        let file = FileConfig { tol: Some(1e-3), max_iters: Some(7), production_mods: Some(false), ..Default::default() };
        let cfg = file.solver(&SolverArgs { tol: Some(1e-8), ..Default::default() });
        assert_eq!(cfg.marginal_tol, 1e-8);
        assert_eq!(cfg.max_outer_iters, 7);
        assert!(!cfg.production_mods);
        let cfg = FileConfig::default().solver(&SolverArgs::default());
        assert_eq!(cfg, SolverConfig::default());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"q": 2, "lamda": 1}"#).is_err());
        let f: FileConfig = serde_json::from_str(r#"{"cost": "no_prior", "kl_direction": "inferred-first"}"#).unwrap();
        assert_eq!(f.cost, Some(CostKind::NoPrior));
        assert_eq!(f.kl_direction, Some(KlDirection::InferredFirst));
    }

    #[test]
    fn missing_params_are_input_errors() {
        assert!(required_params(Some(1.0), None).unwrap_err().is_input_error());
        assert!(required_params(Some(-1.0), Some(1.0)).unwrap_err().is_input_error());
    }

    #[test]
    fn survey_cost_needs_a_table() {
        let args = CostArgs { cost: Some(CostArg::Survey), ..Default::default() };
        assert!(FileConfig::default().cost_spec(&args).unwrap_err().is_input_error());
    }

    #[test]
    fn grid_flags_replace_defaults() {
        let args = CvGridArgs { grid_q: Some(vec![2.0]), ..Default::default() };
        let g = grid(&FileConfig::default(), &args);
        assert_eq!(g.qs, vec![2.0]);
        assert_eq!(g.lambdas, ParamGrid::default().lambdas);
    }

}
