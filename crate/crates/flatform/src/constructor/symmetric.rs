//! Flat chart for a degenerate symmetric form: m parallel covectors from a
//! basis of the annihilator at the base point, their potentials as the
//! first m coordinates, completion by original coordinates chosen by
//! Jacobian pivoting, and a constant linear normalization bringing the
//! coefficient matrix to diag(+-1).

use super::pfaffian::{transport_for_metric, CovectorTransport, ParallelCovector};
use super::{FlatChartResult, FlatFunctions, MapDirection};
use crate::chart::Chart;
use crate::chartmap::{ChartMap, PointMap};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::forms::{ExprMatrix, SymbolicMatrixField};
use crate::ode::OdeOptions;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// The forward map (f^1..f^m, selected original coordinates), with the
/// exact Jacobian coming from the covectors themselves.
pub(crate) struct PotentialChart {
    pub covectors: Vec<Arc<ParallelCovector>>,
    /// Constant normalization applied to the potential block.
    pub normalization: DMatrix<f64>,
    /// Original axes appended to complete the chart.
    pub extra_axes: Vec<usize>,
    pub base: Vec<f64>,
}

impl PointMap for PotentialChart {
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.covectors.len();
        let mut f_raw = DVector::zeros(m);
        for (k, pc) in self.covectors.iter().enumerate() {
            f_raw[k] = pc.eval_f(x)?;
        }
        let f = &self.normalization * f_raw;
        let mut out: Vec<f64> = f.iter().copied().collect();
        for &j in &self.extra_axes {
            out.push(x[j] - self.base[j]);
        }
        Ok(out)
    }

    fn exact_jacobian(&self, x: &[f64]) -> Option<Result<DMatrix<f64>>> {
        Some((|| {
            let m = self.covectors.len();
            let n = self.base.len();
            let mut u_rows = DMatrix::zeros(m, n);
            for (k, pc) in self.covectors.iter().enumerate() {
                let u = match pc.eval_u(x) {
                    Ok(u) => u,
                    Err(e) => return Err(e),
                };
                u_rows.row_mut(k).copy_from(&u.transpose());
            }
            let top = &self.normalization * u_rows;
            let mut jac = DMatrix::zeros(n, n);
            jac.view_mut((0, 0), (m, n)).copy_from(&top);
            for (row, &j) in self.extra_axes.iter().enumerate() {
                jac[(m + row, j)] = 1.0;
            }
            Ok(jac)
        })())
    }
}

/// Greedy completion: append the original axes whose directions maximize
/// the volume of the stacked Jacobian at the base point.
pub(crate) fn completion_axes(rows: &DMatrix<f64>, n: usize) -> Vec<usize> {
    let m = rows.nrows();
    let mut span: Vec<DVector<f64>> = (0..m)
        .map(|i| rows.row(i).transpose().clone_owned())
        .collect();
    // orthonormalize the initial span
    let mut ortho: Vec<DVector<f64>> = Vec::new();
    for v in &span {
        let mut w = v.clone();
        for o in &ortho {
            let pr = w.dot(o);
            w -= o.scale(pr);
        }
        let norm = w.norm();
        if norm > 1e-13 {
            ortho.push(w.unscale(norm));
        }
    }
    span.clear();
    let mut chosen = Vec::new();
    while chosen.len() < n - m {
        let mut best = None;
        let mut best_norm = -1.0;
        for j in 0..n {
            if chosen.contains(&j) {
                continue;
            }
            let mut w = DVector::zeros(n);
            w[j] = 1.0;
            for o in &ortho {
                let pr = w.dot(o);
                w -= o.scale(pr);
            }
            let norm = w.norm();
            if norm > best_norm {
                best_norm = norm;
                best = Some((j, w));
            }
        }
        let (j, w) = best.expect("fewer candidate axes than needed");
        chosen.push(j);
        ortho.push(w.unscale(best_norm.max(1e-300)));
    }
    chosen
}

/// Builds the transport, covectors and the m potentials for a flat
/// degenerate metric; shared by the symmetric and joint constructors.
pub(crate) struct SymmetricPieces {
    pub transport: Arc<CovectorTransport>,
    pub covectors: Vec<Arc<ParallelCovector>>,
    /// Normalization with c_new = diag(eps).
    pub normalization: DMatrix<f64>,
    pub epsilons: Vec<f64>,
    pub c_raw: DMatrix<f64>,
}

pub(crate) fn build_symmetric_pieces(
    chart: &Chart,
    g: &ExprMatrix,
    config: &Config,
) -> Result<SymmetricPieces> {
    let ode = OdeOptions::new(config.ode_abs_tol, config.ode_rel_tol);
    let transport = transport_for_metric(chart, g, config.sigma_tol, config.cond_kernel_max, ode)?;
    let m = transport.rank();
    let n = chart.dim();

    let mut covectors = Vec::with_capacity(m);
    for k in 0..m {
        let mut init = DVector::zeros(m);
        init[k] = 1.0;
        covectors.push(Arc::new(ParallelCovector::new(transport.clone(), init)?));
    }

    // loop defects certify the compatibility conditions numerically
    let defect_grid = chart.grid(4.min(config.grid_res_for_dim(n)));
    for pc in &covectors {
        let defects = pc.loop_defects(&defect_grid)?;
        if defects.max() > config.tol_loop {
            return Err(Error::Construction(format!(
                "Pfaffian loop defect {:.3e} exceeds {:.1e}: curvature/tolerance inconsistency",
                defects.max(),
                config.tol_loop
            )));
        }
    }

    // coefficient matrix at the base point: g = U^T c U on the annihilator
    let mut u0 = DMatrix::zeros(m, n);
    for (k, pc) in covectors.iter().enumerate() {
        u0.row_mut(k).copy_from(&pc.initial_full()?.transpose());
    }
    let g0 = g.eval(chart.base())?;
    let gram = &u0 * u0.transpose();
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Construction("annihilator basis degenerate".into()))?;
    let c_raw = &gram_inv * &u0 * g0 * u0.transpose() * &gram_inv;
    let c_sym = (&c_raw + c_raw.transpose()) * 0.5;

    // normalization f -> L f with L = |Lambda|^(1/2) Q^T, so c becomes
    // diag(sign(lambda))
    let eig = c_sym.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let mut normalization = DMatrix::zeros(m, m);
    let mut epsilons = Vec::with_capacity(m);
    for (row, &idx) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[idx];
        if lambda.abs() < 1e-12 {
            return Err(Error::Construction(
                "coefficient matrix c is numerically singular".into(),
            ));
        }
        epsilons.push(lambda.signum());
        let scale = lambda.abs().sqrt();
        normalization
            .row_mut(row)
            .copy_from(&(eig.eigenvectors.column(idx).transpose() * scale));
    }

    Ok(SymmetricPieces {
        transport,
        covectors,
        normalization,
        epsilons,
        c_raw: c_sym,
    })
}

/// Builds a flat chart for a degenerate symmetric form whose analysis
/// verdict is FLAT: the first m coordinates are normalized potentials of
/// parallel covectors, the rest are original coordinates chosen by pivoting.
pub fn flat_chart_symmetric(
    chart: &Chart,
    g: &ExprMatrix,
    config: &Config,
) -> Result<FlatChartResult> {
    let n = chart.dim();
    let g_field = SymbolicMatrixField::new(g.clone(), n);
    let grid = chart.grid(config.grid_res_for_dim(n));

    // rank-zero metric: every chart is flat, use the identity
    let m_probe = transport_for_metric(
        chart,
        g,
        config.sigma_tol,
        config.cond_kernel_max,
        OdeOptions::new(config.ode_abs_tol, config.ode_rel_tol),
    )?
    .rank();
    if m_probe == 0 {
        let map = ChartMap::identity(chart.clone());
        let report = super::verify_flat_chart(&g_field, &map, MapDirection::Forward, &grid)?;
        return Ok(FlatChartResult {
            map,
            direction: MapDirection::Forward,
            constant_matrix: report.constant_matrix,
            max_deviation: report.max_deviation,
            invertibility: report.invertibility,
            flat_functions: Some(FlatFunctions {
                rank: 0,
                epsilons: Vec::new(),
                c_raw: DMatrix::zeros(0, 0),
            }),
            shrink_count: 0,
        });
    }

    let pieces = build_symmetric_pieces(chart, g, config)?;
    let m = pieces.covectors.len();

    // completion by original axes, pivoting on the normalized rows
    let mut u0 = DMatrix::zeros(m, n);
    for (k, pc) in pieces.covectors.iter().enumerate() {
        u0.row_mut(k).copy_from(&pc.initial_full()?.transpose());
    }
    let rows = &pieces.normalization * u0;
    let extra_axes = completion_axes(&rows, n);

    let point_map = PotentialChart {
        covectors: pieces.covectors.clone(),
        normalization: pieces.normalization.clone(),
        extra_axes,
        base: chart.base().to_vec(),
    };

    // the flat chart's box is the sampled image of the problem box
    let sample_grid = chart.grid(3);
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for p in sample_grid.points() {
        let y = point_map.apply(&p)?;
        for i in 0..n {
            lo[i] = lo[i].min(y[i]);
            hi[i] = hi[i].max(y[i]);
        }
    }
    let intervals: Vec<(f64, f64)> = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| {
            if b - a > 1e-9 {
                (*a, *b)
            } else {
                (a - 0.5, b + 0.5)
            }
        })
        .collect();
    let flat_chart = Chart::synthetic("y", intervals, vec![0.0; n])?;

    let map = ChartMap::custom(chart.clone(), flat_chart, Arc::new(point_map));
    let report = super::verify_flat_chart(&g_field, &map, MapDirection::Forward, &grid)?;

    Ok(FlatChartResult {
        map,
        direction: MapDirection::Forward,
        constant_matrix: report.constant_matrix,
        max_deviation: report.max_deviation,
        invertibility: report.invertibility,
        flat_functions: Some(FlatFunctions {
            rank: m,
            epsilons: pieces.epsilons,
            c_raw: pieces.c_raw,
        }),
        shrink_count: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Expr};

    #[test]
    fn constant_degenerate_metric_gets_identity_like_chart() {
        let c = Chart::centered(vec!["x".into(), "y".into()], vec![(-1.0, 1.0), (-1.0, 1.0)])
            .unwrap();
        let g = ExprMatrix::from_rows(vec![
            vec![Expr::one(), Expr::zero()],
            vec![Expr::zero(), Expr::zero()],
        ])
        .unwrap();
        let cfg = Config::default();
        let result = flat_chart_symmetric(&c, &g, &cfg).unwrap();
        assert!(result.max_deviation <= 1e-9, "{}", result.max_deviation);
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!((result.constant_matrix.clone() - expected).abs().max() < 1e-9);
        let ff = result.flat_functions.unwrap();
        assert_eq!(ff.rank, 1);
        assert_eq!(ff.epsilons, vec![1.0]);
    }

    #[test]
    fn polar_metric_flat_chart_certifies() {
        let c = Chart::new(
            vec!["r".into(), "theta".into()],
            vec![(1.0, 2.0), (-0.5, 0.5)],
            vec![1.5, 0.0],
        )
        .unwrap();
        let g = ExprMatrix::from_rows(vec![
            vec![Expr::one(), Expr::zero()],
            vec![Expr::zero(), parse("r^2", c.names()).unwrap()],
        ])
        .unwrap();
        let cfg = Config::default();
        let result = flat_chart_symmetric(&c, &g, &cfg).unwrap();
        assert!(
            result.max_deviation <= 1e-5,
            "polar flat chart deviation {}",
            result.max_deviation
        );
        assert!(result.invertibility.passes(cfg.jac_min));
        // both directions spacelike
        assert_eq!(result.flat_functions.unwrap().epsilons, vec![1.0, 1.0]);
    }

    #[test]
    fn example1_chart_has_rank_one_and_unit_coefficient() {
        let c = Chart::new(
            vec!["x".into(), "y".into()],
            vec![(1.0, 2.0), (1.0, 2.0)],
            vec![1.5, 1.5],
        )
        .unwrap();
        let g = ExprMatrix::from_rows(vec![
            vec![
                parse("4 * x^2", c.names()).unwrap(),
                parse("4 * x * y", c.names()).unwrap(),
            ],
            vec![
                parse("4 * x * y", c.names()).unwrap(),
                parse("4 * y * y", c.names()).unwrap(),
            ],
        ])
        .unwrap();
        let cfg = Config::default();
        let result = flat_chart_symmetric(&c, &g, &cfg).unwrap();
        assert!(
            result.max_deviation <= 1e-5,
            "deviation {}",
            result.max_deviation
        );
        let ff = result.flat_functions.as_ref().unwrap();
        assert_eq!(ff.rank, 1);
        assert_eq!(ff.epsilons, vec![1.0]);
        // C = diag(1, 0) after normalization
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(
            (result.constant_matrix.clone() - expected).abs().max() <= 1e-5,
            "constant matrix {}",
            result.constant_matrix
        );
        // the first flat function is proportional to x^2 + y^2 up to an
        // affine map: fit and measure the residual
        let mut samples = Vec::new();
        for p in c.grid(5).points() {
            let y = result.map.apply(&p).unwrap();
            samples.push((p[0] * p[0] + p[1] * p[1], y[0]));
        }
        let k = samples.len() as f64;
        let sx: f64 = samples.iter().map(|s| s.0).sum();
        let sy: f64 = samples.iter().map(|s| s.1).sum();
        let sxx: f64 = samples.iter().map(|s| s.0 * s.0).sum();
        let sxy: f64 = samples.iter().map(|s| s.0 * s.1).sum();
        let a = (k * sxy - sx * sy) / (k * sxx - sx * sx);
        let b = (sy - a * sx) / k;
        for (phi, f) in samples {
            assert!(
                (f - (a * phi + b)).abs() <= 1e-5,
                "level sets of f deviate from phi"
            );
        }
    }

    #[test]
    fn zero_metric_returns_identity() {
        let c = Chart::centered(vec!["x".into(), "y".into()], vec![(-1.0, 1.0), (-1.0, 1.0)])
            .unwrap();
        let g = ExprMatrix::zeros(2);
        let result = flat_chart_symmetric(&c, &g, &Config::default()).unwrap();
        assert_eq!(result.max_deviation, 0.0);
        assert_eq!(result.flat_functions.unwrap().rank, 0);
    }
}
