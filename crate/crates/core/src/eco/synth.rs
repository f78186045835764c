use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ingest_reader, rbf_cost, Manifest, RbfNorm, RegionDataset, SurveyTable, ETHNICITIES, PARTIES, RECORD_HEADER};
use crate::error::{Error, Result};
use crate::solvers::{solve, SolverConfig};
use crate::transport::{QParams, TransportProblem};

/// Hidden party profiles; with [`ETHNICITY_PROFILES`] and `γ = 10` they give
/// the hidden cost structure of the generator.
pub const PARTY_PROFILES: [[f64; 3]; 3] = [
    [-0.069122207976, 0.039059976817, -0.015076417367],
    [-0.10983348132, 0.118657893921, -0.021398881767],
    [-0.01962070598, -0.00309700758, 0.0895488437],
];

pub const ETHNICITY_PROFILES: [[f64; 3]; 6] = [
    [-0.114328029009, 0.0814272958, -0.036463644185],
    [0.010935341694, 0.035983132789, -0.047867123947],
    [0.02538421824, 0.033642936842, 0.071168878695],
    [0.005818659643, -0.036817879806, 0.055814183177],
    [-0.104512917487, 0.022900408938, 0.059602277037],
    [-0.033863579802, 0.040645450948, 0.11330483893],
];

/// Regularization of the hidden joints at `coupling_strength = 1`.
pub const MAX_COUPLING_LAMBDA: f64 = 15.0;

const PARTY_BASE: [f64; 3] = [0.40, 0.38, 0.22];
const ETHNICITY_BASE: [f64; 6] = [0.55, 0.15, 0.17, 0.04, 0.03, 0.06];
const MARGINAL_CONCENTRATION: f64 = 30.0;
const REGION_COST_NOISE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub n_regions: usize,
    pub records_per_region: usize,
    /// 0 gives independent joints, 1 strongly cost-aligned ones.
    pub coupling_strength: f64,
    pub seed: u64,
    pub regions_per_district: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { n_regions: 20, records_per_region: 50_000, coupling_strength: 0.8, seed: 0, regions_per_district: 5 }
    }
}

/// Hidden joints, rows = parties and columns = ethnicities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub manifest: Manifest,
    pub joints: BTreeMap<String, Vec<Vec<f64>>>,
}

struct Record {
    party: usize,
    ethnicity: usize,
    age: u32,
    female: bool,
    prior: bool,
}

struct SynthRegion {
    id: String,
    district: String,
    records: Vec<Record>,
}

pub struct SyntheticDataset {
    regions: Vec<SynthRegion>,
    pub truth: TruthSidecar,
    /// Proportions whose survey cost `1 - p` is the hidden cost matrix.
    pub survey: SurveyTable,
    pub options: SynthOptions,
}

fn dirichlet<R: Rng>(base: &[f64], rng: &mut R) -> Array1<f64> {
    let mut v = Array1::from_iter(base.iter().map(|&b| {
        Gamma::new(MARGINAL_CONCENTRATION * b, 1.0).expect("positive shape").sample(rng).max(1e-12)
    }));
    let s = v.sum();
    v /= s;
    v
}

/// The hidden cost matrix, parties × ethnicities.
pub fn hidden_cost() -> Array2<f64> {
    let p = Array2::from_shape_fn((3, 3), |(i, k)| PARTY_PROFILES[i][k]);
    let e = Array2::from_shape_fn((6, 3), |(j, k)| ETHNICITY_PROFILES[j][k]);
    rbf_cost(p.view(), e.view(), 10.0, RbfNorm::Squared)
}

fn hidden_joint<R: Rng>(r: &Array1<f64>, c: &Array1<f64>, strength: f64, rng: &mut R) -> Result<Array2<f64>> {
    if strength == 0.0 {
        return Ok(Array2::from_shape_fn((r.len(), c.len()), |(i, j)| r[i] * c[j]));
    }
    let cost = hidden_cost().mapv(|m| (m + REGION_COST_NOISE * rng.sample::<f64, _>(StandardNormal)).max(0.0));
    let prob = TransportProblem::from_arrays(r.clone(), c.clone(), cost)?;
    let params = QParams::new(1.0, strength * MAX_COUPLING_LAMBDA)?;
    let cfg = SolverConfig { marginal_tol: 1e-12, ..Default::default() };
    Ok(solve(&prob, &params, &cfg)?.plan.plan)
}

// Mean (age, female, prior vote) of a cell, all in (0, 1).
fn cell_profile(i: usize, j: usize) -> [f64; 3] {
    let mut f = [0.0; 3];
    for (k, v) in f.iter_mut().enumerate() {
        *v = (0.5 + 2.0 * (PARTY_PROFILES[i][k] + ETHNICITY_PROFILES[j][k])).clamp(0.02, 0.98);
    }
    f
}

/// Generates per-region hidden joints tied to [`hidden_cost`], then samples
/// individual records from them. Deterministic in `opts.seed`.
pub fn synthesize_dataset(opts: &SynthOptions) -> Result<SyntheticDataset> {
    if !(0.0..=1.0).contains(&opts.coupling_strength) {
        return Err(Error::InvalidParams(format!(
            "coupling_strength must be in [0, 1], got {}",
            opts.coupling_strength
        )));
    }
    if opts.n_regions == 0 || opts.records_per_region == 0 || opts.regions_per_district == 0 {
        return Err(Error::InvalidParams("region, record and district counts must be >= 1".into()));
    }
    let width = opts.n_regions.to_string().len().max(3);
    let built: Vec<(SynthRegion, Array2<f64>)> = (0..opts.n_regions)
        .into_par_iter()
        .map(|k| -> Result<_> {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(k as u64);
            let r = dirichlet(&PARTY_BASE, &mut rng);
            let c = dirichlet(&ETHNICITY_BASE, &mut rng);
            let joint = hidden_joint(&r, &c, opts.coupling_strength, &mut rng)?;
            let cdf: Vec<f64> = joint
                .iter()
                .scan(0.0, |acc, &p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect();
            let total = *cdf.last().unwrap();
            let m = c.len();
            let records = (0..opts.records_per_region)
                .map(|_| {
                    let u: f64 = rng.random::<f64>() * total;
                    let cell = cdf.partition_point(|&x| x <= u).min(cdf.len() - 1);
                    let (i, j) = (cell / m, cell % m);
                    let f = cell_profile(i, j);
                    let z: f64 = rng.sample(StandardNormal);
                    let age = 18.0 + 72.0 * (f[0] + 0.1 * z).clamp(0.0, 1.0);
                    Record {
                        party: i,
                        ethnicity: j,
                        age: age.round() as u32,
                        female: rng.random::<f64>() < f[1],
                        prior: rng.random::<f64>() < f[2],
                    }
                })
                .collect();
            let region = SynthRegion {
                id: format!("r{k:0width$}"),
                district: format!("d{}", k / opts.regions_per_district),
                records,
            };
            Ok((region, joint))
        })
        .collect::<Result<_>>()?;

    let mut joints = BTreeMap::new();
    let mut regions = Vec::with_capacity(built.len());
    for (region, joint) in built {
        joints.insert(region.id.clone(), joint.outer_iter().map(|row| row.to_vec()).collect());
        regions.push(region);
    }
    let survey = SurveyTable {
        manifest: Manifest::default(),
        proportions: hidden_cost().mapv(|m| (1.0 - m).clamp(0.0, 1.0)).outer_iter().map(|r| r.to_vec()).collect(),
    };
    Ok(SyntheticDataset { regions, truth: TruthSidecar { manifest: Manifest::default(), joints }, survey, options: opts.clone() })
}

impl SyntheticDataset {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(RECORD_HEADER)?;
        for region in &self.regions {
            for rec in &region.records {
                wtr.write_record([
                    region.id.as_str(),
                    region.district.as_str(),
                    &rec.age.to_string(),
                    if rec.female { "F" } else { "M" },
                    PARTIES[rec.party],
                    ETHNICITIES[rec.ethnicity],
                    if rec.prior { "1" } else { "0" },
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// The records as they would be ingested from the CSV.
    pub fn to_dataset(&self) -> Result<RegionDataset> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        ingest_reader(buf.as_slice())
    }

    /// Writes `records.csv`, `truth.json` and `survey.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| {
            let path = dir.join(name);
            std::fs::File::create(&path).map(std::io::BufWriter::new).map_err(|source| Error::File { path, source })
        };
        self.write_csv(open("records.csv")?)?;
        let mut t = open("truth.json")?;
        serde_json::to_writer_pretty(&mut t, &self.truth)?;
        t.flush()?;
        let mut s = open("survey.json")?;
        serde_json::to_writer_pretty(&mut s, &self.survey)?;
        s.flush()?;
        Ok(())
    }
}

/// Survey proportions matching [`hidden_cost`], for tests and examples.
pub fn hidden_survey() -> Array2<f64> {
    hidden_cost().mapv(|m| (1.0 - m).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(strength: f64, seed: u64) -> SynthOptions {
        SynthOptions { n_regions: 4, records_per_region: 2000, coupling_strength: strength, seed, regions_per_district: 2 }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = synthesize_dataset(&small(0.8, 9)).unwrap();
        let b = synthesize_dataset(&small(0.8, 9)).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert_eq!(serde_json::to_string(&a.truth).unwrap(), serde_json::to_string(&b.truth).unwrap());
        let c = synthesize_dataset(&small(0.8, 10)).unwrap();
        let mut z = Vec::new();
        c.write_csv(&mut z).unwrap();
        assert_ne!(x, z);
    }

    #[test]
    fn zero_coupling_is_independent() {
        let s = synthesize_dataset(&small(0.0, 1)).unwrap();
        for joint in s.truth.joints.values() {
            let j = Array2::from_shape_fn((3, 6), |(a, b)| joint[a][b]);
            let r = j.sum_axis(ndarray::Axis(1));
            let c = j.sum_axis(ndarray::Axis(0));
            for ((a, b), &v) in j.indexed_iter() {
                assert!((v - r[a] * c[b]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ingested_truth_matches_marginals() {
        let d = synthesize_dataset(&small(0.8, 2)).unwrap().to_dataset().unwrap();
        assert_eq!(d.regions.len(), 4);
        assert_eq!(d.districts(), vec!["d0".to_string(), "d1".to_string()]);
        for g in &d.regions {
            assert_eq!(g.records, 2000);
            let t = g.ground_truth.as_ref().unwrap();
            let (dr, dc) = crate::transport::marginal_residuals(t.view(), g.r.view(), g.c.view());
            assert!(dr < 1e-12 && dc < 1e-12);
        }
    }

    #[test]
    fn survey_cost_is_hidden_cost() {
        let m = hidden_cost();
        assert!(m.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let back = hidden_survey().mapv(|p| 1.0 - p);
        assert!(back.iter().zip(m.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn rejects_bad_strength() {
        assert!(synthesize_dataset(&small(1.5, 0)).is_err());
    }
}
