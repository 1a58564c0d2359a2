//! The flatness decision procedure: rank profiles, stationarity and
//! closedness, connection solvability, curvature, and the mixed parallelism
//! conditions, dispatched by the rank/nondegeneracy profile of g and omega
//! and combined into a three-valued verdict.

use crate::chart::Grid;
use crate::config::Config;
use crate::connection::{
    stationarity_check, system_rank_constant, ChristoffelFirst, ConnectionField,
};
use crate::curvature::{curvature_grid, lowered_curvature_field};
use crate::error::Result;
use crate::forms::{exterior_derivative_2form, BilinearFormField, SymbolicMatrixField};
use crate::kernelrank::RankProfile;
use crate::skewpart::{jacobi_residual, parallel1_residual, parallel_pg_residual, InverseOmegaField};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "FLAT")]
    Flat,
    #[serde(rename = "NOT_FLAT")]
    NotFlat,
    #[serde(rename = "INCONCLUSIVE")]
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InconclusiveReason {
    #[serde(rename = "non-constant rank")]
    NonConstantRank,
    #[serde(rename = "tolerance margin")]
    ToleranceMargin,
}

/// Which theorem's hypotheses drive the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    /// B vanishes identically.
    ZeroForm,
    /// omega = 0: degenerate symmetric theory.
    SymmetricDegenerate,
    /// g = 0: closed form of constant rank.
    SkewOnly,
    /// omega nondegenerate, g flat: the mixed parallelism conditions.
    SymplecticPair,
    /// both parts present, omega degenerate: joint solvability + curvature.
    General,
}

/// One row of the condition table.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionRow {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// residual >= not_flat_factor * tolerance: decisively violated.
    pub decisive: bool,
}

impl ConditionRow {
    fn new(name: &'static str, residual: f64, tolerance: f64, factor: f64) -> Self {
        Self {
            name,
            residual,
            tolerance,
            pass: residual <= tolerance,
            decisive: residual >= factor * tolerance,
        }
    }
}

/// Full analysis output; the verdict is derivable from the table.
#[derive(Debug, Serialize)]
pub struct Analysis {
    pub case: CaseKind,
    pub verdict: Verdict,
    pub inconclusive_reason: Option<InconclusiveReason>,
    pub rank_profile: RankProfile,
    pub conditions: Vec<ConditionRow>,
    /// Max |R_ijkl| over the (interior) curvature grid, when computed.
    pub curvature_max: Option<f64>,
    pub curvature_step: Option<f64>,
    /// Witness value for NOT_FLAT reports: the largest decisive residual.
    pub witness: Option<f64>,
}

impl Analysis {
    pub fn is_flat(&self) -> bool {
        self.verdict == Verdict::Flat
    }
}

/// Max |B| over a grid, for zero-part detection.
fn max_abs_on_grid(m: &crate::forms::ExprMatrix, grid: &Grid) -> Result<f64> {
    let points = grid.points();
    let per: Vec<f64> = points
        .par_iter()
        .map(|p| -> Result<f64> { Ok(m.eval(p)?.abs().max()) })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().fold(0.0, f64::max))
}

/// The full pipeline: rank profile, stationarity/closedness, connection
/// solvability, curvature and (for the symplectic pair) the parallelism
/// conditions.
pub fn flatness_verdict(form: &BilinearFormField, config: &Config) -> Result<Analysis> {
    let chart = form.chart();
    let n = chart.dim();
    let grid = chart.grid(config.grid_res_for_dim(n));
    let g = form.g();
    let omega = form.omega();

    let rank_profile = RankProfile::compute(g, omega, &grid, config.sigma_tol)?;
    let scale_b = 1.0 + max_abs_on_grid(form.entries(), &grid)?;
    let g_zero = max_abs_on_grid(g, &grid)? <= 1e-12 * scale_b;
    let w_zero = max_abs_on_grid(omega, &grid)? <= 1e-12 * scale_b;

    let case = if g_zero && w_zero {
        CaseKind::ZeroForm
    } else if w_zero {
        CaseKind::SymmetricDegenerate
    } else if g_zero {
        CaseKind::SkewOnly
    } else if rank_profile.omega.constant && rank_profile.omega.rank == n {
        CaseKind::SymplecticPair
    } else {
        CaseKind::General
    };

    let mut conditions: Vec<ConditionRow> = Vec::new();
    let factor = config.not_flat_factor;
    let mut curvature_max = None;
    let mut curvature_step = None;

    // rank constancy requirements per case
    let ranks_ok = match case {
        CaseKind::ZeroForm => true,
        CaseKind::SymmetricDegenerate => rank_profile.g.constant,
        CaseKind::SkewOnly => rank_profile.omega.constant,
        CaseKind::SymplecticPair => rank_profile.g.constant && rank_profile.omega.constant,
        CaseKind::General => rank_profile.all_constant(),
    };
    if !ranks_ok {
        return Ok(Analysis {
            case,
            verdict: Verdict::Inconclusive,
            inconclusive_reason: Some(InconclusiveReason::NonConstantRank),
            rank_profile,
            conditions,
            curvature_max,
            curvature_step,
            witness: None,
        });
    }

    match case {
        CaseKind::ZeroForm => {
            conditions.push(ConditionRow::new("zero_form", 0.0, 1.0, factor));
        }
        CaseKind::SymmetricDegenerate | CaseKind::SymplecticPair | CaseKind::General => {
            // stationarity of g
            let gamma1 = ChristoffelFirst::compute(g);
            let stat = stationarity_check(g, &gamma1, &grid, config.sigma_tol, config.tol_stat)?;
            conditions.push(ConditionRow::new(
                "stationarity",
                stat.max_violation,
                stat.tolerance,
                factor,
            ));

            // closedness of omega (for the skew-involving cases)
            if case != CaseKind::SymmetricDegenerate {
                let d = exterior_derivative_2form(omega);
                let dmax = d.max_abs_on(&grid)?;
                conditions.push(ConditionRow::new(
                    "d_omega",
                    dmax,
                    config.tol_closed * scale_b,
                    factor,
                ));
            }

            // solvability of the parallelism system(s)
            let conn = match case {
                CaseKind::General => ConnectionField::joint(g.clone(), omega.clone(), config.sigma_tol),
                _ => ConnectionField::for_g(g.clone(), config.sigma_tol),
            };
            let points = grid.points();
            let sols: Vec<(f64, f64, Option<f64>, Option<f64>, usize)> = points
                .par_iter()
                .map(|p| -> Result<_> {
                    let sol = conn.solve_at(p)?;
                    Ok((
                        sol.residual_g.unwrap_or(0.0),
                        1.0 + sol.rhs_norm_g.unwrap_or(0.0),
                        sol.residual_omega,
                        sol.rhs_norm_omega.map(|r| 1.0 + r),
                        sol.system_rank,
                    ))
                })
                .collect::<Result<_>>()?;
            let g_rel = sols
                .iter()
                .map(|s| s.0 / s.1)
                .fold(0.0f64, f64::max);
            conditions.push(ConditionRow::new(
                "g_solvability",
                g_rel,
                config.tol_lin,
                factor,
            ));
            if case == CaseKind::General {
                let w_rel = sols
                    .iter()
                    .filter_map(|s| s.2.map(|r| r / s.3.unwrap_or(1.0)))
                    .fold(0.0f64, f64::max);
                conditions.push(ConditionRow::new(
                    "joint_feasibility",
                    w_rel.max(g_rel),
                    config.tol_lin,
                    factor,
                ));
                let first_rank = sols.first().map(|s| s.4).unwrap_or(0);
                let rank_const = sols.iter().all(|s| s.4 == first_rank);
                if !rank_const {
                    return Ok(Analysis {
                        case,
                        verdict: Verdict::Inconclusive,
                        inconclusive_reason: Some(InconclusiveReason::NonConstantRank),
                        rank_profile,
                        conditions,
                        curvature_max,
                        curvature_step,
                        witness: None,
                    });
                }
            } else {
                // system-rank constancy backs the smoothness of the
                // pointwise connection field
                let (rank_const, _) = system_rank_constant(&conn, &grid)?;
                if !rank_const {
                    return Ok(Analysis {
                        case,
                        verdict: Verdict::Inconclusive,
                        inconclusive_reason: Some(InconclusiveReason::NonConstantRank),
                        rank_profile,
                        conditions,
                        curvature_max,
                        curvature_step,
                        witness: None,
                    });
                }
            }

            // the symplectic-pair conditions
            if case == CaseKind::SymplecticPair {
                let omega_field = SymbolicMatrixField::new(omega.clone(), n);
                let p_dual = InverseOmegaField::new(&omega_field, config.cond_omega_max);
                let jac = jacobi_residual(&p_dual, &grid, config.h_jac_rel * chart.diameter())?;
                conditions.push(ConditionRow::new(
                    "jacobi",
                    jac,
                    config.tol_jacobi * scale_b,
                    factor,
                ));
                let p1 = parallel1_residual(g, &omega_field, &conn, &grid, config.cond_omega_max)?;
                conditions.push(ConditionRow::new(
                    "parallel1",
                    p1,
                    config.tol_parallel * scale_b,
                    factor,
                ));
                let gamma1_pg = ChristoffelFirst::compute(g);
                let pg = parallel_pg_residual(
                    g,
                    &gamma1_pg,
                    &p_dual,
                    &grid,
                    config.h_jac_rel * chart.diameter(),
                )?;
                conditions.push(ConditionRow::new(
                    "parallelPg",
                    pg,
                    config.tol_parallel * scale_b,
                    factor,
                ));
            }

            // curvature, only when the connection is usable
            let solvable_so_far = conditions
                .iter()
                .filter(|c| matches!(c.name, "stationarity" | "g_solvability" | "joint_feasibility" | "d_omega"))
                .all(|c| !c.decisive);
            if solvable_so_far {
                let h = config.h_curv_rel * chart.diameter();
                let cgrid = curvature_grid(chart, config.grid_res_for_dim(n), h);
                let field = lowered_curvature_field(g, &conn, &cgrid, h)?;
                curvature_max = Some(field.max_abs);
                curvature_step = Some(h);
                conditions.push(ConditionRow::new(
                    "curvature",
                    field.max_abs,
                    config.tol_flat,
                    factor,
                ));
            }
        }
        CaseKind::SkewOnly => {
            let d = exterior_derivative_2form(omega);
            let dmax = d.max_abs_on(&grid)?;
            conditions.push(ConditionRow::new(
                "d_omega",
                dmax,
                config.tol_closed * scale_b,
                factor,
            ));
            // the skew system alone is solvable iff d(omega) = 0; computing
            // both sides keeps the equivalence observable
            let conn = ConnectionField::for_omega(omega.clone(), config.sigma_tol);
            let points = grid.points();
            let rels: Vec<f64> = points
                .par_iter()
                .map(|p| -> Result<f64> {
                    let sol = conn.solve_at(p)?;
                    Ok(sol.residual_omega.unwrap_or(0.0)
                        / (1.0 + sol.rhs_norm_omega.unwrap_or(0.0)))
                })
                .collect::<Result<_>>()?;
            let w_rel = rels.into_iter().fold(0.0, f64::max);
            conditions.push(ConditionRow::new(
                "skew_solvability",
                w_rel,
                config.tol_lin,
                factor,
            ));
        }
    }

    // verdict from the table
    let decisive_fail = conditions.iter().find(|c| c.decisive);
    let all_pass = conditions.iter().all(|c| c.pass);
    let (verdict, reason, witness) = if let Some(row) = decisive_fail {
        (Verdict::NotFlat, None, Some(row.residual))
    } else if all_pass {
        (Verdict::Flat, None, None)
    } else {
        (
            Verdict::Inconclusive,
            Some(InconclusiveReason::ToleranceMargin),
            None,
        )
    };

    Ok(Analysis {
        case,
        verdict,
        inconclusive_reason: reason,
        rank_profile,
        conditions,
        curvature_max,
        curvature_step,
        witness,
    })
}
