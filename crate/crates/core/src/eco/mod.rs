//! Ecological inference: recover per-region party × ethnicity tables from
//! their marginals and a cost matrix.
//!
//! The pipeline is [`ingest`] (records CSV to [`RegionDataset`]),
//! [`build_cost_matrix`], [`cross_validate`] on hold-in regions and
//! [`infer_all`]. [`synthesize_dataset`] produces records in the same schema.

mod cost;
mod infer;
mod ingest;
mod synth;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub use cost::{build_cost_matrix, rbf_cost, CostKind, CostMatrixSpec, RbfNorm, SurveyTable};
pub use infer::{
    cross_validate, infer_all, kl_divergence, mean_abs_error, ComparisonRow, CvResult, EvalReport, GridScore,
    InferenceOutput, InferenceReport, KlDirection, ParamGrid, KL_CELL_CAP,
};
pub use ingest::{ingest, ingest_reader, RECORD_HEADER};
pub use synth::{
    hidden_cost, hidden_survey, synthesize_dataset, SynthOptions, SyntheticDataset, TruthSidecar, ETHNICITY_PROFILES,
    MAX_COUPLING_LAMBDA, PARTY_PROFILES,
};

/// Party levels, in row order of every joint table.
pub const PARTIES: [&str; 3] = ["Democrat", "Republican", "Other"];

/// Ethnicity levels, in column order of every joint table.
pub const ETHNICITIES: [&str; 6] = ["white", "afro", "hispanic", "asian", "native", "other"];

/// Profile features: normalized age, gender (female = 1), prior vote.
pub const FEATURES: [&str; 3] = ["age", "gender", "prior_vote"];

/// Row and column labels of the joint tables.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub parties: Vec<String>,
    pub ethnicities: Vec<String>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            parties: PARTIES.iter().map(|s| s.to_string()).collect(),
            ethnicities: ETHNICITIES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// One region's marginals and, when known, its joint table.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub id: String,
    pub district: String,
    /// Party marginal.
    pub r: Array1<f64>,
    /// Ethnicity marginal.
    pub c: Array1<f64>,
    pub ground_truth: Option<Array2<f64>>,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionDataset {
    /// Sorted by region id.
    pub regions: Vec<Region>,
    /// `|parties| × |features|` mean profiles over the whole population.
    pub party_profiles: Array2<f64>,
    /// `|ethnicities| × |features|` mean profiles over the whole population.
    pub ethnicity_profiles: Array2<f64>,
    /// Rows dropped for missing attributes.
    pub excluded_rows: usize,
}

impl RegionDataset {
    pub fn region(&self, id: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    /// Ids of the regions in `district`, in dataset order.
    pub fn district_regions(&self, district: &str) -> Vec<String> {
        self.regions.iter().filter(|r| r.district == district).map(|r| r.id.clone()).collect()
    }

    /// Distinct district ids in order of first appearance.
    pub fn districts(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.regions {
            if !out.contains(&r.district) {
                out.push(r.district.clone());
            }
        }
        out
    }
}
