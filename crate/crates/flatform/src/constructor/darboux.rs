//! Darboux charts by the Moser trick: a radial-homotopy primitive computed
//! with Gauss-Legendre quadrature, the time-dependent Moser field solved
//! pointwise, and its time-one flow composed with a constant linear
//! symplectic normalization. The degenerate case first rectifies a frame of
//! the kernel and runs the symplectic construction on the reduced form.

use super::rectify::{max_commutation_defect, FrameEval, RectificationChart, RectifyMap};
use super::{FlatChartResult, MapDirection};
use crate::chart::Chart;
use crate::chartmap::{ChartMap, PointMap};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::forms::{ClosureMatrixField, ExprMatrix, MatrixField, SymbolicMatrixField};
use crate::kernelrank::{condition_number, kernel_data};
use crate::ode::{integrate, OdeOptions};
use nalgebra::{DMatrix, DVector};
use std::sync::{Arc, OnceLock};

/// 32-node Gauss-Legendre rule on [0, 1].
pub fn gauss_legendre_01() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = 32;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            // Newton iteration on the Legendre polynomial
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre(n, x);
            nodes[i] = 0.5 * (1.0 - x); // descending roots -> ascending nodes
            weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Radial-homotopy primitive of a closed 2-form beta around `center`:
/// sigma_j(x) = int_0^1 t sum_i (x-c)^i beta_ij(c + t(x-c)) dt, so that
/// d(sigma) = beta.
pub fn radial_primitive(
    beta: &dyn Fn(&[f64]) -> Result<DMatrix<f64>>,
    center: &[f64],
    x: &[f64],
) -> Result<DVector<f64>> {
    let n = x.len();
    let (nodes, weights) = gauss_legendre_01();
    let w: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
    let mut sigma = DVector::zeros(n);
    for (t, wt) in nodes.iter().zip(weights) {
        let y: Vec<f64> = center.iter().zip(&w).map(|(c, d)| c + t * d).collect();
        let b = beta(&y)?;
        for j in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += w[i] * b[(i, j)];
            }
            sigma[j] += wt * t * s;
        }
    }
    Ok(sigma)
}

/// Constant linear map A with A^T W A equal to the canonical symplectic
/// matrix, built by a symplectic Gram-Schmidt process. Canonical input
/// yields the identity.
pub fn symplectic_basis(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = w.nrows();
    if n % 2 != 0 {
        return Err(Error::InvalidInput(
            "symplectic basis needs even dimension".into(),
        ));
    }
    let k = n / 2;
    let mut candidates: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            e
        })
        .collect();
    let mut us: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut vs: Vec<DVector<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        // stable choice: first candidate with maximal norm
        let mut idx = 0;
        let mut best = -1.0;
        for (i, cand) in candidates.iter().enumerate() {
            let norm = cand.norm();
            if norm > best + 1e-12 {
                best = norm;
                idx = i;
            }
        }
        if best < 0.0 {
            return Err(Error::Singular(
                "symplectic basis ran out of candidates".into(),
            ));
        }
        let u = candidates.remove(idx);
        let norm = u.norm();
        if norm < 1e-12 {
            return Err(Error::Singular("degenerate symplectic pairing".into()));
        }
        let u = u.unscale(norm);
        let wu = w * &u;
        let wu_norm2 = wu.norm_squared();
        if wu_norm2 < 1e-24 {
            return Err(Error::Singular("skew form is degenerate".into()));
        }
        // omega(u, v) = u^T W v = 1 with v = -W u / |W u|^2
        let v = -&wu / wu_norm2;
        // symplectic projection of the remaining candidates
        for z in candidates.iter_mut() {
            let zu = (z.transpose() * w * &u)[(0, 0)];
            let zv = (z.transpose() * w * &v)[(0, 0)];
            *z = z.clone() - u.scale(zv) + v.scale(zu);
        }
        us.push(u);
        vs.push(v);
    }
    let mut a = DMatrix::zeros(n, n);
    for (i, u) in us.iter().enumerate() {
        a.column_mut(i).copy_from(u);
    }
    for (i, v) in vs.iter().enumerate() {
        a.column_mut(k + i).copy_from(v);
    }
    Ok(a)
}

/// The time-one Moser flow for the homotopy W0 + t (omega - W0).
struct MoserMap<F: MatrixField + Send> {
    omega: Arc<F>,
    w0: DMatrix<f64>,
    chart: Chart,
    ode: OdeOptions,
    pad_rel: f64,
}

impl<F: MatrixField + Send> MoserMap<F> {
    fn velocity(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if !self.chart.contains(x, self.pad_rel) {
            return Err(Error::Construction(format!(
                "Moser flow leaves the padded box at {x:?}"
            )));
        }
        let omega = self.omega.clone();
        let w0c = self.w0.clone();
        let beta = move |y: &[f64]| -> Result<DMatrix<f64>> { Ok(omega.value_at(y)? - &w0c) };
        let sigma = radial_primitive(&beta, self.chart.base(), x)?;
        let w_t = &self.w0 + (self.omega.value_at(x)? - &self.w0) * t;
        let v = w_t
            .lu()
            .solve(&sigma)
            .ok_or_else(|| Error::Singular("Moser interpolation degenerate".into()))?;
        Ok(v.iter().copied().collect())
    }
}

impl<F: MatrixField + Send> PointMap for MoserMap<F> {
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        integrate(
            |t, y| self.velocity(t, y),
            0.0,
            1.0,
            x,
            &self.ode,
        )
    }
}

/// Darboux chart for a symplectic (closed nondegenerate) form: first the
/// Moser flow toward the constant form omega(base), then one constant
/// linear change to the canonical block matrix. The box is halved toward
/// the base point (up to `max_box_shrink` times) if the interpolated form
/// degenerates; the shrink count is reported.
pub fn darboux_symplectic<F: MatrixField + Send + 'static>(
    omega: Arc<F>,
    chart: &Chart,
    config: &Config,
) -> Result<FlatChartResult> {
    let n = chart.dim();
    if n % 2 != 0 {
        return Err(Error::Unsupported(
            "symplectic construction needs even dimension".into(),
        ));
    }
    let w0 = omega.value_at(chart.base())?;
    if !(condition_number(&w0) <= config.cond_omega_max) {
        return Err(Error::Singular(
            "omega is numerically singular at the base point".into(),
        ));
    }

    // shrink until the whole homotopy stays nondegenerate on a sample grid
    let mut work_chart = chart.clone();
    let mut shrink_count = 0u32;
    'shrink: loop {
        let ok = (|| -> Result<bool> {
            for p in work_chart.grid(3).points() {
                let wp = omega.value_at(&p)?;
                for t in [0.25, 0.5, 0.75, 1.0] {
                    let wt = &w0 + (&wp - &w0) * t;
                    if !(condition_number(&wt) <= config.cond_omega_max) {
                        return Ok(false);
                    }
                }
            }
            Ok(true)
        })()?;
        if ok {
            break 'shrink;
        }
        if shrink_count >= config.max_box_shrink {
            return Err(Error::Construction(
                "Moser interpolation stays degenerate after maximum box shrinking".into(),
            ));
        }
        work_chart = work_chart.shrink(0.5);
        shrink_count += 1;
    }

    let moser = MoserMap {
        omega: omega.clone(),
        w0: w0.clone(),
        chart: work_chart.clone(),
        ode: OdeOptions::new(config.ode_abs_tol, config.ode_rel_tol),
        pad_rel: config.box_pad_rel,
    };

    // intermediate chart for the Moser source
    let m_chart = Chart::synthetic(
        "m",
        work_chart.intervals().to_vec(),
        work_chart.base().to_vec(),
    )?;
    let moser_map = ChartMap::custom(m_chart.clone(), chart.clone(), Arc::new(moser))
        .with_h_jac(config.h_jac_rel * chart.diameter());

    // constant linear normalization toward the canonical matrix
    let a = symplectic_basis(&w0)?;
    let row_sums: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)].abs()).sum())
        .collect();
    let radius = work_chart
        .intervals()
        .iter()
        .zip(work_chart.base())
        .enumerate()
        .map(|(i, ((lo, hi), b))| {
            let half = (hi - b).min(b - lo);
            half / row_sums[i].max(1e-12)
        })
        .fold(f64::INFINITY, f64::min)
        * 0.95;
    let y_chart = Chart::synthetic("y", vec![(-radius, radius); n], vec![0.0; n])?;
    let affine = ChartMap::affine(
        y_chart.clone(),
        m_chart,
        a,
        DVector::from_row_slice(work_chart.base()),
    );
    let map = affine.and_then(moser_map);

    let grid = y_chart.grid(config.cert_grid_res_for_dim(n));
    let report = super::verify_flat_chart(&*omega, &map, MapDirection::Parametrization, &grid)?;

    Ok(FlatChartResult {
        map,
        direction: MapDirection::Parametrization,
        constant_matrix: report.constant_matrix,
        max_deviation: report.max_deviation,
        invertibility: report.invertibility,
        flat_functions: None,
        shrink_count,
    })
}

/// Frame of the kernel of omega normalized so the pivot block is the
/// identity; for an involutive distribution this frame commutes.
struct KernelFrame {
    omega: SymbolicMatrixField,
    pivot_rows: Vec<usize>,
    sigma_tol: f64,
    cond_max: f64,
}

impl FrameEval for KernelFrame {
    fn dim(&self) -> usize {
        self.omega.dim()
    }

    fn count(&self) -> usize {
        self.pivot_rows.len()
    }

    fn frame_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let kd = kernel_data(
            &self.omega.value_at(x)?,
            self.sigma_tol,
            self.cond_max,
            Some(&self.pivot_rows),
        )?;
        let q = kd.kernel_dim();
        let mut pivot_block = DMatrix::zeros(q, q);
        for (r, &row) in self.pivot_rows.iter().enumerate() {
            pivot_block.row_mut(r).copy_from(&kd.basis.row(row));
        }
        let inv = pivot_block
            .try_inverse()
            .ok_or_else(|| Error::KernelPivot("kernel pivot block singular".into()))?;
        Ok(kd.basis * inv)
    }
}

/// Extends a p-dimensional chart map blockwise by q pass-through
/// coordinates.
struct BlockExtend {
    inner: ChartMap,
    pass: usize,
}

impl PointMap for BlockExtend {
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let p = v.len() - self.pass;
        let mut out = self.inner.apply(&v[..p])?;
        out.extend_from_slice(&v[p..]);
        Ok(out)
    }

    fn exact_jacobian(&self, v: &[f64]) -> Option<Result<DMatrix<f64>>> {
        let p = v.len() - self.pass;
        let j = match self.inner.jacobian(&v[..p]) {
            Ok(j) => j,
            Err(e) => return Some(Err(e)),
        };
        let n = v.len();
        let mut out = DMatrix::zeros(n, n);
        out.view_mut((0, 0), (p, p)).copy_from(&j);
        for i in 0..self.pass {
            out[(p + i, p + i)] = 1.0;
        }
        Some(Ok(out))
    }
}

/// Flat chart for a closed skew form of constant rank p < n: rectifies a
/// commuting frame of the kernel, checks that the reduced coefficients do
/// not depend on the kernel coordinates, and runs the symplectic
/// construction on the reduced p-dimensional form.
pub fn darboux_degenerate(
    omega: &ExprMatrix,
    chart: &Chart,
    config: &Config,
) -> Result<FlatChartResult> {
    let n = chart.dim();
    let omega_field = SymbolicMatrixField::new(omega.clone(), n);
    let kd = kernel_data(
        &omega.eval(chart.base())?,
        config.sigma_tol,
        config.cond_kernel_max,
        None,
    )?;
    let q = kd.kernel_dim();
    if q == 0 {
        return darboux_symplectic(Arc::new(omega_field), chart, config);
    }
    let p = n - q;

    let frame: Arc<dyn FrameEval> = Arc::new(KernelFrame {
        omega: omega_field.clone(),
        pivot_rows: kd.pivot_rows.clone(),
        sigma_tol: config.sigma_tol,
        cond_max: config.cond_kernel_max,
    });

    // integrability is a theorem when d(omega) = 0; a commutation defect
    // here signals an inconsistency upstream
    let defect_grid = chart.grid(3);
    let h = config.h_jac_rel * chart.diameter();
    let defect = max_commutation_defect(&frame, &defect_grid, h.max(1e-6))?;
    if defect > config.tol_loop {
        return Err(Error::Construction(format!(
            "kernel frame fails to commute (defect {defect:.3e}); \
             closedness or constant rank must have been violated"
        )));
    }

    let rect = Arc::new(RectificationChart::new(
        chart.clone(),
        frame,
        kd.pivot_rows.clone(),
        OdeOptions::new(config.ode_abs_tol, config.ode_rel_tol),
        false,
        config.box_pad_rel,
    )?);

    // reduced form on the transversal: omega restricted to the transversal
    // coordinate plane (the z-columns of the time-zero Jacobian are
    // coordinate directions, the w-columns are kernel vectors)
    let tr_axes = rect.transversal_axes.clone();
    let omega_for_reduced = omega_field.clone();
    let rect_for_reduced = rect.clone();
    let reduced = Arc::new(ClosureMatrixField {
        n: p,
        f: move |z: &[f64]| -> Result<DMatrix<f64>> {
            let x = rect_for_reduced.sigma(z);
            let full = omega_for_reduced.value_at(&x)?;
            let mut out = DMatrix::zeros(z.len(), z.len());
            for (i, &a) in tr_axes.iter().enumerate() {
                for (j, &b) in tr_axes.iter().enumerate() {
                    out[(i, j)] = full[(a, b)];
                }
            }
            Ok(out)
        },
    });

    // the reduced coefficients must not depend on the kernel coordinates:
    // compare the pulled-back z-block across w-slices
    let rect_map_probe = ChartMap::custom(
        Chart::synthetic(
            "q",
            {
                let mut iv: Vec<(f64, f64)> = rect
                    .transversal_axes
                    .iter()
                    .map(|&a| chart.intervals()[a])
                    .collect();
                for &a in &rect.constraint_axes {
                    let (lo, hi) = chart.intervals()[a];
                    let b = chart.base()[a];
                    iv.push(((lo - b) * 0.9, (hi - b) * 0.9));
                }
                iv
            },
            {
                let mut base: Vec<f64> = rect
                    .transversal_axes
                    .iter()
                    .map(|&a| chart.base()[a])
                    .collect();
                base.extend(std::iter::repeat(0.0).take(q));
                base
            },
        )?,
        chart.clone(),
        Arc::new(RectifyMap(rect.clone())),
    )
    .with_h_jac(config.h_jac_rel * chart.diameter());
    let probe_chart = rect_map_probe.source().clone();
    let mut w_dependence = 0.0f64;
    for zpt in probe_chart.grid(3).points() {
        let mut base_slice: Option<DMatrix<f64>> = None;
        for wslice in [-0.5, 0.0, 0.5] {
            let mut qpt = zpt.clone();
            for i in p..n {
                let (lo, hi) = probe_chart.intervals()[i];
                qpt[i] = 0.5 * (lo + hi) + wslice * 0.45 * (hi - lo);
            }
            let pulled = crate::chartmap::pullback_at(&omega_field, &rect_map_probe, &qpt)?;
            let zblock = pulled.view((0, 0), (p, p)).clone_owned();
            match &base_slice {
                None => base_slice = Some(zblock),
                Some(b) => w_dependence = w_dependence.max((zblock - b).abs().max()),
            }
        }
    }
    if w_dependence > 100.0 * config.tol_construct {
        return Err(Error::Construction(format!(
            "reduced coefficients vary along the kernel (max {w_dependence:.3e})"
        )));
    }

    // reduced chart over the transversal axes
    let reduced_chart = Chart::synthetic(
        "z",
        rect.transversal_axes
            .iter()
            .map(|&a| chart.intervals()[a])
            .collect(),
        rect.transversal_axes
            .iter()
            .map(|&a| chart.base()[a])
            .collect(),
    )?;
    let reduced_result = darboux_symplectic(reduced, &reduced_chart, config)?;

    // assemble (y, w) -> Phi(chi(y), w)
    let chi = reduced_result.map.clone();
    let mut intervals: Vec<(f64, f64)> = chi.source().intervals().to_vec();
    for &a in &rect.constraint_axes {
        let (lo, hi) = chart.intervals()[a];
        let b = chart.base()[a];
        intervals.push(((lo - b) * 0.9, (hi - b) * 0.9));
    }
    let mut base: Vec<f64> = chi.source().base().to_vec();
    base.extend(std::iter::repeat(0.0).take(q));
    let full_source = Chart::synthetic("y", intervals, base)?;

    let mid_chart = rect_map_probe.source().clone();
    let block = ChartMap::custom(
        full_source.clone(),
        mid_chart.clone(),
        Arc::new(BlockExtend {
            inner: chi,
            pass: q,
        }),
    );
    let rect_full = ChartMap::custom(mid_chart, chart.clone(), Arc::new(RectifyMap(rect)))
        .with_h_jac(config.h_jac_rel * chart.diameter());
    let map = block.and_then(rect_full);

    let grid = full_source.grid(config.cert_grid_res_for_dim(n));
    let report =
        super::verify_flat_chart(&omega_field, &map, MapDirection::Parametrization, &grid)?;

    Ok(FlatChartResult {
        map,
        direction: MapDirection::Parametrization,
        constant_matrix: report.constant_matrix,
        max_deviation: report.max_deviation,
        invertibility: report.invertibility,
        flat_functions: None,
        shrink_count: reduced_result.shrink_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Expr};
    use crate::skewpart::canonical_omega;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (nodes, weights) = gauss_legendre_01();
        // int_0^1 x^k dx = 1/(k+1), exact up to degree 63
        for k in [0usize, 1, 5, 20, 40, 63] {
            let s: f64 = nodes
                .iter()
                .zip(weights)
                .map(|(x, w)| w * x.powi(k as i32))
                .sum();
            assert_relative_eq!(s, 1.0 / (k as f64 + 1.0), epsilon = 1e-13);
        }
    }

    #[test]
    fn radial_primitive_differentiates_back() {
        // beta = (1 + x^2) dx ^ dy - const part, on a 2D box
        let c = Chart::centered(vec!["x".into(), "y".into()], vec![(-0.5, 0.5), (-0.5, 0.5)])
            .unwrap();
        let w = ExprMatrix::from_rows(vec![
            vec![Expr::zero(), parse("1 + x^2", c.names()).unwrap()],
            vec![parse("-(1 + x^2)", c.names()).unwrap(), Expr::zero()],
        ])
        .unwrap();
        let wf = SymbolicMatrixField::new(w, 2);
        let w0 = wf.value_at(c.base()).unwrap();
        let beta = |y: &[f64]| -> Result<DMatrix<f64>> { Ok(wf.value_at(y)? - &w0) };
        let center = c.base().to_vec();
        // d sigma = beta: check by central differences
        let h = 1e-6;
        for x in [[0.2, 0.3], [-0.4, 0.1], [0.25, -0.35]] {
            let d = |i: usize, j: usize| -> f64 {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                let sp = radial_primitive(&beta, &center, &xp).unwrap();
                let sm = radial_primitive(&beta, &center, &xm).unwrap();
                (sp[j] - sm[j]) / (2.0 * h)
            };
            let b = beta(&x).unwrap();
            let dsigma_01 = d(0, 1) - d(1, 0);
            assert_relative_eq!(dsigma_01, b[(0, 1)], epsilon = 1e-7);
        }
    }

    #[test]
    fn symplectic_basis_on_canonical_is_identity() {
        let w = canonical_omega(4);
        let a = symplectic_basis(&w).unwrap();
        assert!((a.clone() - DMatrix::identity(4, 4)).abs().max() < 1e-12);
    }

    #[test]
    fn symplectic_basis_normalizes_generic_form() {
        let mut w = canonical_omega(4);
        w[(0, 1)] = 0.3;
        w[(1, 0)] = -0.3;
        w[(0, 2)] = 1.2;
        w[(2, 0)] = -1.2;
        w[(2, 3)] = -0.7;
        w[(3, 2)] = 0.7;
        let a = symplectic_basis(&w).unwrap();
        let got = a.transpose() * &w * &a;
        assert!(
            (got - canonical_omega(4)).abs().max() < 1e-10,
            "basis failed to canonicalize"
        );
    }

    #[test]
    fn constant_canonical_form_gives_identity_chart() {
        let c = Chart::centered(
            vec!["x".into(), "y".into(), "z".into(), "w".into()],
            vec![(-0.5, 0.5); 4],
        )
        .unwrap();
        let mut rows = vec![vec![Expr::zero(); 4]; 4];
        rows[0][2] = Expr::one();
        rows[2][0] = Expr::integer(-1);
        rows[1][3] = Expr::one();
        rows[3][1] = Expr::integer(-1);
        let wf = Arc::new(SymbolicMatrixField::new(
            ExprMatrix::from_rows(rows).unwrap(),
            4,
        ));
        let cfg = Config::default();
        let result = darboux_symplectic(wf, &c, &cfg).unwrap();
        assert_eq!(result.shrink_count, 0);
        assert!(result.max_deviation <= 1e-9, "{}", result.max_deviation);
        // the chart map is the identity up to numeric noise
        for q in result.map.source().grid(3).points() {
            let x = result.map.apply(&q).unwrap();
            for i in 0..4 {
                assert!((x[i] - q[i]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn two_d_area_form_darboux() {
        let c = Chart::centered(vec!["x".into(), "y".into()], vec![(-0.5, 0.5), (-0.5, 0.5)])
            .unwrap();
        let w = ExprMatrix::from_rows(vec![
            vec![Expr::zero(), parse("1 + x^2", c.names()).unwrap()],
            vec![parse("-(1 + x^2)", c.names()).unwrap(), Expr::zero()],
        ])
        .unwrap();
        let wf = Arc::new(SymbolicMatrixField::new(w, 2));
        let cfg = Config::default();
        let result = darboux_symplectic(wf, &c, &cfg).unwrap();
        assert!(
            result.max_deviation <= 1e-6,
            "2D Darboux deviation {}",
            result.max_deviation
        );
        let expected = canonical_omega(2);
        assert!(
            (result.constant_matrix.clone() - expected).abs().max() <= 1e-9,
            "constant matrix {}",
            result.constant_matrix
        );
    }

    #[test]
    fn four_d_perturbed_form_darboux() {
        // omega0 + 0.1 z dx ^ dz on [-1/2, 1/2]^4
        let c = Chart::centered(
            vec!["x".into(), "y".into(), "z".into(), "w".into()],
            vec![(-0.5, 0.5); 4],
        )
        .unwrap();
        let eps = parse("1/10 * z", c.names()).unwrap();
        let mut rows = vec![vec![Expr::zero(); 4]; 4];
        rows[0][1] = Expr::one();
        rows[1][0] = Expr::integer(-1);
        rows[2][3] = Expr::one();
        rows[3][2] = Expr::integer(-1);
        rows[0][2] = eps.clone();
        rows[2][0] = Expr::neg(eps);
        let wf = Arc::new(SymbolicMatrixField::new(
            ExprMatrix::from_rows(rows).unwrap(),
            4,
        ));
        let cfg = Config::default();
        let result = darboux_symplectic(wf, &c, &cfg).unwrap();
        assert!(
            result.max_deviation <= 1e-5,
            "4D Darboux deviation {}",
            result.max_deviation
        );
    }

    #[test]
    fn degenerate_constant_form_in_three_d() {
        // omega = dx ^ dy in 3D: kernel d_z, reduced Darboux is the identity
        let c = Chart::centered(
            vec!["x".into(), "y".into(), "z".into()],
            vec![(-0.5, 0.5); 3],
        )
        .unwrap();
        let mut rows = vec![vec![Expr::zero(); 3]; 3];
        rows[0][1] = Expr::one();
        rows[1][0] = Expr::integer(-1);
        let w = ExprMatrix::from_rows(rows).unwrap();
        let cfg = Config::default();
        let result = darboux_degenerate(&w, &c, &cfg).unwrap();
        assert!(result.max_deviation <= 1e-9, "{}", result.max_deviation);
        // constant matrix is block(omega_can(2), 0)
        let cm = &result.constant_matrix;
        assert_relative_eq!(cm[(0, 1)], 1.0, epsilon = 1e-9);
        assert!(cm[(0, 2)].abs() < 1e-9 && cm[(1, 2)].abs() < 1e-9);
    }

    #[test]
    fn degenerate_variable_form_in_three_d() {
        // omega = (1 + x^2) dx ^ dy in 3D(x, y, z): rank 2 everywhere
        let c = Chart::centered(
            vec!["x".into(), "y".into(), "z".into()],
            vec![(-0.5, 0.5); 3],
        )
        .unwrap();
        let h = parse("1 + x^2", c.names()).unwrap();
        let mut rows = vec![vec![Expr::zero(); 3]; 3];
        rows[0][1] = h.clone();
        rows[1][0] = Expr::neg(h);
        let w = ExprMatrix::from_rows(rows).unwrap();
        let cfg = Config::default();
        let result = darboux_degenerate(&w, &c, &cfg).unwrap();
        assert!(
            result.max_deviation <= 1e-5,
            "degenerate Darboux deviation {}",
            result.max_deviation
        );
    }
}
