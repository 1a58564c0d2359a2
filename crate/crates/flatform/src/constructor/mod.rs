//! Numeric construction of flat charts: Pfaffian integration of parallel
//! covectors for the degenerate symmetric case, Moser-flow Darboux charts
//! for symplectic and constant-rank closed skew forms, the joint
//! construction for a flat metric paired with a symplectic form, and the
//! pullback certification shared by all of them.

mod darboux;
mod joint;
mod pfaffian;
mod rectify;
mod symmetric;

pub use darboux::{darboux_degenerate, darboux_symplectic, symplectic_basis};
pub use joint::joint_flat_chart;
pub use pfaffian::ParallelCovector;
pub use rectify::RectificationChart;
pub use symmetric::flat_chart_symmetric;

use crate::chart::Grid;
use crate::chartmap::{ChartMap, InvertibilityCertificate};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::forms::MatrixField;
use nalgebra::DMatrix;
use rayon::prelude::*;

/// Which way a constructed chart map runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum MapDirection {
    /// Problem chart -> flat chart (the map components are the flat
    /// coordinate functions).
    Forward,
    /// Flat chart -> problem chart (flows parametrize the box).
    Parametrization,
}

/// A constructed flat chart with its certification data.
#[derive(Debug)]
pub struct FlatChartResult {
    pub map: ChartMap,
    pub direction: MapDirection,
    /// Components of the form in the flat coordinates, at the base point.
    pub constant_matrix: DMatrix<f64>,
    /// Max grid deviation of the pullback from `constant_matrix`.
    pub max_deviation: f64,
    pub invertibility: InvertibilityCertificate,
    /// Flat potentials f^1..f^m and the coefficient matrix of g on them,
    /// when the symmetric machinery produced them.
    pub flat_functions: Option<FlatFunctions>,
    /// Number of box halvings the Moser path needed.
    pub shrink_count: u32,
}

/// The potentials produced by the symmetric constructor: g = sum c_ij
/// df^i df^j with constant coefficients, normalized to c = diag(eps).
#[derive(Debug, Clone)]
pub struct FlatFunctions {
    pub rank: usize,
    pub epsilons: Vec<f64>,
    /// Raw (pre-normalization) coefficient matrix at the base point.
    pub c_raw: DMatrix<f64>,
}

/// Certification report for a chart map against a form.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub constant_matrix: DMatrix<f64>,
    pub max_deviation: f64,
    pub invertibility: InvertibilityCertificate,
}

impl VerifyReport {
    pub fn passes(&self, config: &Config) -> bool {
        self.max_deviation <= config.tol_construct && self.invertibility.passes(config.jac_min)
    }
}

/// Certifies a chart map: the constant matrix is the pullback at the source
/// base point, the deviation is the max over the grid.
///
/// `Forward` maps are verified on a grid of the problem chart through the
/// inverse Jacobian; `Parametrization` maps on a grid of the flat chart by
/// direct pullback.
pub fn verify_flat_chart(
    form: &dyn MatrixField,
    map: &ChartMap,
    direction: MapDirection,
    grid: &Grid,
) -> Result<VerifyReport> {
    let base = map.source().base().to_vec();
    let at = |x: &[f64]| -> Result<(DMatrix<f64>, f64)> {
        let j = map.jacobian(x)?;
        let det = j.determinant().abs();
        let v = match direction {
            MapDirection::Forward => {
                let k = j
                    .try_inverse()
                    .ok_or_else(|| Error::Singular("forward chart Jacobian".into()))?;
                k.transpose() * form.value_at(x)? * k
            }
            MapDirection::Parametrization => {
                let image = map.apply(x)?;
                j.transpose() * form.value_at(&image)? * j
            }
        };
        Ok((v, det))
    };
    let (constant_matrix, _) = at(&base)?;
    let points = grid.points();
    let sweep: Vec<(f64, f64)> = points
        .par_iter()
        .map(|p| -> Result<(f64, f64)> {
            let (v, det) = at(p)?;
            Ok(((v - &constant_matrix).abs().max(), det))
        })
        .collect::<Result<_>>()?;
    let max_deviation = sweep.iter().map(|s| s.0).fold(0.0, f64::max);
    let min_abs_det = sweep.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let invertibility = InvertibilityCertificate {
        min_abs_det,
        resolution: grid.resolution().first().copied().unwrap_or(0),
    };
    Ok(VerifyReport {
        constant_matrix,
        max_deviation,
        invertibility,
    })
}

/// Re-runs certification for a finished result and checks that the stored
/// deviation is reproduced exactly (the self-certification invariant).
pub fn recertify(
    form: &dyn MatrixField,
    result: &FlatChartResult,
    grid: &Grid,
) -> Result<VerifyReport> {
    let report = verify_flat_chart(form, &result.map, result.direction, grid)?;
    if report.max_deviation != result.max_deviation {
        return Err(Error::Construction(format!(
            "self-certification mismatch: stored {} vs recomputed {}",
            result.max_deviation, report.max_deviation
        )));
    }
    Ok(report)
}
