use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{Manifest, RegionDataset, ETHNICITIES, PARTIES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// `√(2 - 2 exp(-γ d(μ^p_i, μ^e_j)))` on population profiles.
    Rbf,
    /// `1 - p_ij` for published party-composition proportions.
    Survey,
    /// All ones.
    NoPrior,
}

/// Distance inside the RBF kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RbfNorm {
    /// `‖μ^p - μ^e‖²`, the usual Gaussian kernel.
    #[default]
    Squared,
    /// `‖μ^p - μ^e‖`.
    Euclidean,
}

/// Party-composition proportions, rows = parties, columns = ethnicities:
/// `proportions[i][j]` is the share of party `i` belonging to group `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveyTable {
    #[serde(flatten)]
    pub manifest: Manifest,
    pub proportions: Vec<Vec<f64>>,
}

impl SurveyTable {
    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|source| Error::File { path: path.to_owned(), source })?;
        Ok(serde_json::from_str(&s)?)
    }

    /// The proportions as a matrix, checked against the fixed level order.
    pub fn matrix(&self) -> Result<Array2<f64>> {
        if self.manifest != Manifest::default() {
            return Err(Error::Input(format!(
                "survey table levels must be parties {:?} and ethnicities {:?}",
                PARTIES, ETHNICITIES
            )));
        }
        let (n, m) = (PARTIES.len(), ETHNICITIES.len());
        if self.proportions.len() != n || self.proportions.iter().any(|r| r.len() != m) {
            return Err(Error::Shape(format!("survey proportions must be {n}x{m}")));
        }
        let a = Array2::from_shape_fn((n, m), |(i, j)| self.proportions[i][j]);
        if let Some(x) = a.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Input(format!("survey proportion {x} is outside [0, 1]")));
        }
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostMatrixSpec {
    pub kind: CostKind,
    pub gamma: f64,
    #[serde(default)]
    pub norm: RbfNorm,
    /// Parties × ethnicities proportions, for [`CostKind::Survey`].
    #[serde(skip)]
    pub survey: Option<Array2<f64>>,
}

impl CostMatrixSpec {
    pub fn new(kind: CostKind) -> Self {
        CostMatrixSpec { kind, gamma: 10.0, norm: RbfNorm::Squared, survey: None }
    }

    pub fn survey(proportions: Array2<f64>) -> Self {
        CostMatrixSpec { survey: Some(proportions), ..Self::new(CostKind::Survey) }
    }
}

/// RBF cost between every row of `party` and every row of `ethnicity`.
pub fn rbf_cost(party: ArrayView2<f64>, ethnicity: ArrayView2<f64>, gamma: f64, norm: RbfNorm) -> Array2<f64> {
    Array2::from_shape_fn((party.nrows(), ethnicity.nrows()), |(i, j)| {
        let sq: f64 = party.row(i).iter().zip(ethnicity.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let d = match norm {
            RbfNorm::Squared => sq,
            RbfNorm::Euclidean => sq.sqrt(),
        };
        (2.0 - 2.0 * (-gamma * d).exp()).max(0.0).sqrt()
    })
}

/// Parties × ethnicities cost matrix of the requested kind.
pub fn build_cost_matrix(spec: &CostMatrixSpec, data: &RegionDataset) -> Result<Array2<f64>> {
    let shape = (PARTIES.len(), ETHNICITIES.len());
    match spec.kind {
        CostKind::NoPrior => Ok(Array2::ones(shape)),
        CostKind::Rbf => {
            if !(spec.gamma > 0.0 && spec.gamma.is_finite()) {
                return Err(Error::InvalidParams(format!("gamma must be > 0, got {}", spec.gamma)));
            }
            if data.party_profiles.nrows() != shape.0 || data.ethnicity_profiles.nrows() != shape.1 {
                return Err(Error::Input("rbf cost needs party and ethnicity profiles".into()));
            }
            Ok(rbf_cost(data.party_profiles.view(), data.ethnicity_profiles.view(), spec.gamma, spec.norm))
        }
        CostKind::Survey => {
            let p = spec.survey.as_ref().ok_or_else(|| Error::Input("survey cost needs a proportions table".into()))?;
            if p.dim() != shape {
                return Err(Error::Shape(format!("survey proportions are {:?}, expected {shape:?}", p.dim())));
            }
            if let Some(x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::Input(format!("survey proportion {x} is outside [0, 1]")));
            }
            Ok(p.mapv(|x| 1.0 - x))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn data() -> RegionDataset {
        RegionDataset {
            regions: vec![],
            party_profiles: Array2::from_shape_fn((3, 3), |(i, k)| 0.1 * (i + k) as f64),
            ethnicity_profiles: Array2::from_shape_fn((6, 3), |(j, k)| 0.05 * (j * k) as f64),
            excluded_rows: 0,
        }
    }

    #[test]
    fn equal_profiles_cost_nothing() {
        let p = array![[0.3, 0.1, 0.7]];
        let m = rbf_cost(p.view(), p.view(), 10.0, RbfNorm::Squared);
        assert_eq!(m[[0, 0]], 0.0);
        assert_eq!(rbf_cost(p.view(), p.view(), 10.0, RbfNorm::Euclidean)[[0, 0]], 0.0);
    }

    #[test]
    fn rbf_range_and_norms() {
        let d = data();
        for norm in [RbfNorm::Squared, RbfNorm::Euclidean] {
            let spec = CostMatrixSpec { norm, ..CostMatrixSpec::new(CostKind::Rbf) };
            let m = build_cost_matrix(&spec, &d).unwrap();
            assert!(m.iter().all(|&x| (0.0..2f64.sqrt()).contains(&x)));
        }
        let a = array![[0.0, 0.0]];
        let b = array![[0.3, 0.4]];
        let sq = rbf_cost(a.view(), b.view(), 2.0, RbfNorm::Squared)[[0, 0]];
        let eu = rbf_cost(a.view(), b.view(), 2.0, RbfNorm::Euclidean)[[0, 0]];
        assert!((sq - (2.0 - 2.0 * (-0.5f64).exp()).sqrt()).abs() < 1e-15);
        assert!((eu - (2.0 - 2.0 * (-1.0f64).exp()).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn no_prior_is_ones() {
        let m = build_cost_matrix(&CostMatrixSpec::new(CostKind::NoPrior), &data()).unwrap();
        assert_eq!(m, Array2::<f64>::ones((3, 6)));
    }

    #[test]
    fn survey_inverts_proportions() {
        let p = Array2::from_shape_fn((3, 6), |(i, j)| [0.6, 0.2, 0.1, 0.05, 0.03, 0.02][(i + j) % 6]);
        let m = build_cost_matrix(&CostMatrixSpec::survey(p.clone()), &data()).unwrap();
        for ((ij, &x), &c) in p.indexed_iter().zip(m.iter()) {
            assert_eq!(c, 1.0 - x, "{ij:?}");
        }
        // a larger proportion gives a smaller cost
        let row: Vec<f64> = m.row(0).to_vec();
        assert!(row.windows(2).all(|w| w[0] < w[1]));
        assert!(build_cost_matrix(&CostMatrixSpec::new(CostKind::Survey), &data()).is_err());
        let bad = p.mapv(|x| x + 1.0);
        assert!(build_cost_matrix(&CostMatrixSpec::survey(bad), &data()).is_err());
    }

    #[test]
    fn rejects_bad_gamma() {
        let spec = CostMatrixSpec { gamma: 0.0, ..CostMatrixSpec::new(CostKind::Rbf) };
        assert!(build_cost_matrix(&spec, &data()).is_err());
    }
}
