//! Command implementations shared by the binary and the C ABI: analyze,
//! construct, verify and gen, all working on problem files and returning
//! reports.

use crate::analyze::{flatness_verdict, Analysis, CaseKind, Verdict};
use crate::chart::Grid;
use crate::config::Config;
use crate::connection::ConnectionField;
use crate::constructor::{
    darboux_degenerate, darboux_symplectic, flat_chart_symmetric, joint_flat_chart,
    verify_flat_chart, FlatChartResult, MapDirection,
};
use crate::curvature::{constant_curvature_residual, curvature_grid, symmetric_space_residual};
use crate::error::{Error, Result};
use crate::forms::{BilinearFormField, SymbolicMatrixField};
use crate::gen::{generate, GenSpec, Generated};
use crate::problem::{ChartMapFile, ProblemFile};
use crate::report::{
    matrix_rows, ConstructionSummary, Report, TaskResults, SCHEMA_VERSION,
};
use std::sync::Arc;

/// Runs the full condition table and wraps it into a report, including any
/// requested optional residuals.
pub fn analyze_problem(problem: &ProblemFile) -> Result<Report> {
    let (form, config) = problem.build()?;
    let analysis = flatness_verdict(&form, &config)?;
    let mut report = Report::from_analysis("analyze", &analysis, &config);
    report.task = task_results(problem, &form, &config, &analysis)?;
    Ok(report)
}

fn task_results(
    problem: &ProblemFile,
    form: &BilinearFormField,
    config: &Config,
    analysis: &Analysis,
) -> Result<Option<TaskResults>> {
    if problem.task.kappa.is_none() && !problem.task.symmetric_space {
        return Ok(None);
    }
    // both residuals need an evaluable connection
    let feasible = analysis
        .conditions
        .iter()
        .filter(|c| matches!(c.name, "stationarity" | "g_solvability"))
        .all(|c| !c.decisive);
    if !feasible {
        return Ok(Some(TaskResults {
            constant_curvature_kappa: problem.task.kappa,
            constant_curvature_residual: None,
            symmetric_space_residual: None,
        }));
    }
    let chart = form.chart();
    let conn = ConnectionField::for_g(form.g().clone(), config.sigma_tol);
    let h = config.h_curv_rel * chart.diameter();
    let res = config.grid_res_for_dim(chart.dim());
    let mut out = TaskResults {
        constant_curvature_kappa: problem.task.kappa,
        constant_curvature_residual: None,
        symmetric_space_residual: None,
    };
    if let Some(kappa) = problem.task.kappa {
        let grid = curvature_grid(&chart, res, h);
        out.constant_curvature_residual =
            Some(constant_curvature_residual(form.g(), &conn, kappa, &grid, h)?);
    }
    if problem.task.symmetric_space {
        let grid = chart.grid_with_margin(res, 2.2 * h);
        out.symmetric_space_residual =
            Some(symmetric_space_residual(form.g(), &conn, &grid, h)?);
    }
    Ok(Some(out))
}

/// Dispatches the constructor by the analyzed case. Returns the report and,
/// when a chart was built, its sampled export.
pub fn construct_problem(problem: &ProblemFile) -> Result<(Report, Option<ChartMapFile>)> {
    let (form, config) = problem.build()?;
    let analysis = flatness_verdict(&form, &config)?;
    let mut report = Report::from_analysis("construct", &analysis, &config);

    if analysis.verdict != Verdict::Flat {
        report.construction = Some(ConstructionSummary::skipped(format!(
            "analysis verdict is {:?}; construction requires FLAT",
            analysis.verdict
        )));
        return Ok((report, None));
    }

    let chart = form.chart().clone();
    let built: Result<FlatChartResult> = match analysis.case {
        CaseKind::ZeroForm | CaseKind::SymmetricDegenerate => {
            flat_chart_symmetric(&chart, form.g(), &config)
        }
        CaseKind::SkewOnly => {
            if analysis.rank_profile.omega.rank == chart.dim() {
                let field = Arc::new(SymbolicMatrixField::new(
                    form.omega().clone(),
                    chart.dim(),
                ));
                darboux_symplectic(field, &chart, &config)
            } else {
                darboux_degenerate(form.omega(), &chart, &config)
            }
        }
        CaseKind::SymplecticPair => joint_flat_chart(form.g(), form.omega(), &chart, &config),
        CaseKind::General => Err(Error::Unsupported("Theorem 3 general".into())),
    };

    match built {
        Ok(result) => {
            report.construction = Some(ConstructionSummary::from_result(&result, &config));
            let export = export_chart_map(&result, &config)?;
            Ok((report, Some(export)))
        }
        Err(Error::Unsupported(msg)) => {
            report.construction =
                Some(ConstructionSummary::unsupported(format!("unsupported case: {msg}")));
            Ok((report, None))
        }
        Err(other) => {
            report.construction = Some(ConstructionSummary::failed(other.to_string()));
            Ok((report, None))
        }
    }
}

/// Samples the constructed map on its source grid for export.
fn export_chart_map(result: &FlatChartResult, config: &Config) -> Result<ChartMapFile> {
    let source = result.map.source();
    let grid = source.grid(config.cert_grid_res_for_dim(source.dim()));
    let samples = result.map.sample_on(&grid)?;
    Ok(ChartMapFile {
        schema_version: SCHEMA_VERSION,
        kind: "sampled".into(),
        direction: match result.direction {
            MapDirection::Forward => "forward".into(),
            MapDirection::Parametrization => "parametrization".into(),
        },
        source_names: source.names().to_vec(),
        source_box: Some(source.intervals().iter().map(|(a, b)| [*a, *b]).collect()),
        source_base: Some(source.base().to_vec()),
        target_names: result.map.target().names().to_vec(),
        exprs: None,
        grid_axes: Some(grid.axes.clone()),
        samples: Some(samples),
        constant_matrix: Some(matrix_rows(&result.constant_matrix)),
        max_deviation: Some(result.max_deviation),
    })
}

/// Verifies a user-supplied closed-form chart against the problem form.
pub fn verify_problem(problem: &ProblemFile, chart_file: &ChartMapFile) -> Result<Report> {
    let (form, config) = problem.build()?;
    let analysis = flatness_verdict(&form, &config)?;
    let mut report = Report::from_analysis("verify", &analysis, &config);

    let chart = form.chart().clone();
    let (map, forward) = chart_file.to_chart_map(&chart)?;
    let direction = if forward {
        MapDirection::Forward
    } else {
        MapDirection::Parametrization
    };
    let grid: Grid = map
        .source()
        .grid(config.grid_res_for_dim(map.source().dim()));
    let b_field = SymbolicMatrixField::new(form.entries().clone(), chart.dim());
    let verify = verify_flat_chart(&b_field, &map, direction, &grid)?;
    let certified =
        verify.max_deviation <= config.tol_construct && verify.invertibility.passes(config.jac_min);
    report.construction = Some(ConstructionSummary {
        status: if certified { "certified" } else { "failed" }.into(),
        message: None,
        direction: Some(direction),
        constant_matrix: Some(matrix_rows(&verify.constant_matrix)),
        max_deviation: Some(verify.max_deviation),
        tolerance: Some(config.tol_construct),
        certified: Some(certified),
        min_abs_jacobian_det: Some(verify.invertibility.min_abs_det),
        box_shrink_count: None,
        flat_rank: None,
        epsilons: None,
    });
    Ok(report)
}

/// Generates a fixture problem and its ground-truth flat chart.
pub fn gen_problem(spec: &GenSpec) -> Result<(ProblemFile, ChartMapFile, Generated)> {
    let config = Config::default();
    let generated = generate(spec, &config)?;
    let problem = ProblemFile::from_form(&generated.form, config);
    let names = generated.chart.names().to_vec();
    let chart_file = ChartMapFile {
        schema_version: SCHEMA_VERSION,
        kind: "closed_form".into(),
        direction: "forward".into(),
        source_names: names.clone(),
        source_box: Some(
            generated
                .chart
                .intervals()
                .iter()
                .map(|(a, b)| [*a, *b])
                .collect(),
        ),
        source_base: Some(generated.chart.base().to_vec()),
        target_names: generated.flat_map.target().names().to_vec(),
        exprs: Some(
            generated
                .flat_exprs
                .iter()
                .map(|e| e.to_text(&names))
                .collect(),
        ),
        grid_axes: None,
        samples: None,
        constant_matrix: Some(matrix_rows(&generated.constant)),
        max_deviation: None,
    };
    Ok((problem, chart_file, generated))
}
