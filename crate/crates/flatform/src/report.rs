//! Machine-readable reports with a stable schema: verdict, per-condition
//! residual table, construction summary and the echoed configuration.
//! Identical problems and seeds produce byte-identical reports modulo the
//! timestamp field.

use crate::analyze::{Analysis, CaseKind, ConditionRow, InconclusiveReason, Verdict};
use crate::config::Config;
use crate::constructor::{FlatChartResult, MapDirection};
use nalgebra::DMatrix;
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct RankSummary {
    pub sigma_tol: f64,
    pub grid_resolution: Vec<usize>,
    pub rank_g: usize,
    pub constant_rank_g: bool,
    pub rank_omega: usize,
    pub constant_rank_omega: bool,
    pub dim_intersection: usize,
    pub constant_rank_intersection: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvatureSummary {
    pub max_abs: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstructionSummary {
    /// "certified", "failed", "unsupported" or "skipped".
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<MapDirection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constant_matrix: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certified: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_abs_jacobian_det: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_shrink_count: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flat_rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
}

impl ConstructionSummary {
    pub fn skipped(message: impl Into<String>) -> Self {
        Self {
            status: "skipped".into(),
            message: Some(message.into()),
            direction: None,
            constant_matrix: None,
            max_deviation: None,
            tolerance: None,
            certified: None,
            min_abs_jacobian_det: None,
            box_shrink_count: None,
            flat_rank: None,
            epsilons: None,
        }
    }

    pub fn unsupported(message: impl Into<String>) -> Self {
        Self {
            status: "unsupported".into(),
            ..Self::skipped(message)
        }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        Self {
            status: "failed".into(),
            ..Self::skipped(message)
        }
    }

    pub fn from_result(result: &FlatChartResult, config: &Config) -> Self {
        let certified = result.max_deviation <= config.tol_construct
            && result.invertibility.passes(config.jac_min);
        Self {
            status: if certified {
                "certified".into()
            } else {
                "failed".into()
            },
            message: None,
            direction: Some(result.direction),
            constant_matrix: Some(matrix_rows(&result.constant_matrix)),
            max_deviation: Some(result.max_deviation),
            tolerance: Some(config.tol_construct),
            certified: Some(certified),
            min_abs_jacobian_det: Some(result.invertibility.min_abs_det),
            box_shrink_count: Some(result.shrink_count),
            flat_rank: result.flat_functions.as_ref().map(|f| f.rank),
            epsilons: result.flat_functions.as_ref().map(|f| f.epsilons.clone()),
        }
    }
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskResults {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constant_curvature_kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constant_curvature_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symmetric_space_residual: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: &'static str,
    /// Seconds since the epoch; the only nondeterministic field.
    pub timestamp: u64,
    pub command: String,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inconclusive_reason: Option<InconclusiveReason>,
    pub case: CaseKind,
    pub rank_profile: RankSummary,
    pub conditions: Vec<ConditionRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curvature: Option<CurvatureSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub construction: Option<ConstructionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskResults>,
    pub config: Config,
}

impl Report {
    pub fn from_analysis(command: &str, analysis: &Analysis, config: &Config) -> Report {
        Report {
            schema_version: SCHEMA_VERSION,
            tool_version: crate::VERSION,
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            command: command.to_string(),
            verdict: analysis.verdict,
            inconclusive_reason: analysis.inconclusive_reason,
            case: analysis.case,
            rank_profile: RankSummary {
                sigma_tol: analysis.rank_profile.sigma_tol,
                grid_resolution: analysis.rank_profile.grid_resolution.clone(),
                rank_g: analysis.rank_profile.g.rank,
                constant_rank_g: analysis.rank_profile.g.constant,
                rank_omega: analysis.rank_profile.omega.rank,
                constant_rank_omega: analysis.rank_profile.omega.constant,
                dim_intersection: analysis.rank_profile.intersection.rank,
                constant_rank_intersection: analysis.rank_profile.intersection.constant,
            },
            conditions: analysis.conditions.clone(),
            curvature: analysis.curvature_max.map(|max_abs| CurvatureSummary {
                max_abs,
                step: analysis.curvature_step.unwrap_or(0.0),
            }),
            witness: analysis.witness,
            construction: None,
            task: None,
            config: config.clone(),
        }
    }

    pub fn to_json(&self) -> crate::error::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
