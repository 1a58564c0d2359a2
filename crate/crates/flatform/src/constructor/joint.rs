//! Joint flat chart for a flat degenerate metric g paired with a symplectic
//! form omega.
//!
//! The chart is assembled from one simultaneous rectification of the
//! Hamiltonian fields of the flat potentials f^1..f^m (whose pairwise
//! Poisson brackets are constant), after a constant linear change putting
//! the bracket matrix into its skew normal form with k' pairs and k''
//! Casimir functions. In the resulting coordinates the form decomposes into
//! constant blocks plus, depending on the case, a residual closed 2-form on
//! the Casimir block (removed by a radial primitive) or a residual
//! symplectic block on the leftover transversal coordinates (removed by the
//! Moser construction). Pullback certification runs on the final composite.

use super::darboux::{darboux_symplectic, radial_primitive};
use super::pfaffian::TransportState;
use super::symmetric::{build_symmetric_pieces, flat_chart_symmetric, SymmetricPieces};
use super::{FlatChartResult, MapDirection};
use crate::chart::Chart;
use crate::chartmap::{pullback_at, ChartMap, PointMap};
use crate::config::Config;
use crate::connection::ConnectionEval;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::forms::{ClosureMatrixField, ExprMatrix, MatrixField, SymbolicMatrixField};
use crate::interp::ChebMap;
use crate::kernelrank::numeric_rank;
use crate::ode::{integrate, OdeOptions};
use crate::skewpart::invert_omega;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Skew normal form: returns (M, k') with M beta M^T having +1 at
/// (i, k'+i), -1 at (k'+i, i) and zeros elsewhere; rows beyond 2k' span the
/// kernel of beta.
pub(crate) fn skew_normal_form(beta: &DMatrix<f64>, tol: f64) -> Result<(DMatrix<f64>, usize)> {
    let m = beta.nrows();
    let rank = numeric_rank(beta, tol);
    if rank % 2 != 0 {
        return Err(Error::Construction(format!(
            "bracket matrix has odd numeric rank {rank}"
        )));
    }
    let k_prime = rank / 2;
    let scale = beta.abs().max().max(1.0);
    let mut candidates: Vec<DVector<f64>> = (0..m)
        .map(|i| {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            e
        })
        .collect();
    let mut avec: Vec<DVector<f64>> = Vec::new();
    let mut bvec: Vec<DVector<f64>> = Vec::new();
    for _ in 0..k_prime {
        // candidate with the largest image under beta
        let mut idx = 0;
        let mut best = -1.0;
        for (i, cand) in candidates.iter().enumerate() {
            let norm = (beta * cand).norm();
            if norm > best + 1e-14 {
                best = norm;
                idx = i;
            }
        }
        if best <= tol * scale {
            return Err(Error::Construction(
                "bracket matrix rank collapsed during normalization".into(),
            ));
        }
        let a = candidates.remove(idx);
        let ba = beta * &a;
        let b = -&ba / ba.norm_squared();
        for z in candidates.iter_mut() {
            let zb = (z.transpose() * beta * &b)[(0, 0)];
            let za = (z.transpose() * beta * &a)[(0, 0)];
            *z = z.clone() - a.scale(zb) + b.scale(za);
        }
        avec.push(a);
        bvec.push(b);
    }
    // remaining candidates span the kernel; orthonormalize for stability
    let mut kernel: Vec<DVector<f64>> = Vec::new();
    for z in candidates {
        let mut w = z;
        for k in &kernel {
            let pr = w.dot(k);
            w -= k.scale(pr);
        }
        let norm = w.norm();
        if norm > 1e-10 {
            kernel.push(w.unscale(norm));
        }
    }
    if kernel.len() != m - 2 * k_prime {
        return Err(Error::Construction(
            "Casimir block extraction failed".into(),
        ));
    }
    let mut mmat = DMatrix::zeros(m, m);
    for (i, a) in avec.iter().enumerate() {
        mmat.row_mut(i).copy_from(&a.transpose());
    }
    for (i, b) in bvec.iter().enumerate() {
        mmat.row_mut(k_prime + i).copy_from(&b.transpose());
    }
    for (i, c) in kernel.iter().enumerate() {
        mmat.row_mut(2 * k_prime + i).copy_from(&c.transpose());
    }
    Ok((mmat, k_prime))
}

/// Index layout of the assembled chart: F-pairs, Casimir values, Casimir
/// flow times, leftover transversal coordinates.
#[derive(Debug, Clone)]
struct Layout {
    k_prime: usize,
    k_second: usize,
    m: usize,
    n: usize,
}

impl Layout {
    fn q(&self) -> usize {
        self.n - 2 * self.k_prime - 2 * self.k_second
    }

    fn c_slots(&self) -> std::ops::Range<usize> {
        2 * self.k_prime..self.m
    }

    fn d_slots(&self) -> std::ops::Range<usize> {
        self.m..self.m + self.k_second
    }

    fn w_slots(&self) -> std::ops::Range<usize> {
        self.m + self.k_second..self.n
    }
}

/// Shared data of the assembled parametrization.
struct JointCore {
    chart: Chart,
    pieces: SymmetricPieces,
    /// h = n_matrix . f_raw (combines the diag normalization and the skew
    /// normal form).
    n_matrix: DMatrix<f64>,
    layout: Layout,
    /// Transversal axes, split into the Newton-solved ones (matching the
    /// Casimir values) and the free ones (the W block).
    solved_axes: Vec<usize>,
    free_axes: Vec<usize>,
    /// Cache over the transversal: potentials f_raw (m) then free covector
    /// components (m x m, column-major).
    transversal: ChebMap,
    omega: SymbolicMatrixField,
    ode: OdeOptions,
    pad_rel: f64,
    cond_omega: f64,
}

impl JointCore {
    /// Transversal point from the (solved, free) coordinate values.
    fn sigma(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.chart.base().to_vec();
        for (i, &a) in self.solved_axes.iter().enumerate() {
            x[a] = z[i];
        }
        for (i, &a) in self.free_axes.iter().enumerate() {
            x[a] = z[self.solved_axes.len() + i];
        }
        x
    }

    /// Raw potentials and covector stack at a transversal point, from the
    /// cache: (f_raw, u_free as m x m).
    fn transversal_data(&self, z: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.layout.m;
        let vals = self.transversal.eval(z);
        let f_raw = DVector::from_row_slice(&vals[..m]);
        let u_free = DMatrix::from_column_slice(m, m, &vals[m..]);
        (f_raw, u_free)
    }

    /// h-values at a transversal point.
    fn h_on_transversal(&self, z: &[f64]) -> DVector<f64> {
        let (f_raw, _) = self.transversal_data(z);
        &self.n_matrix * f_raw
    }

    /// Jacobian of the Casimir h-values with respect to the solved axes.
    fn casimir_jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let (_, u_free) = self.transversal_data(z);
        let x = self.sigma(z);
        let full = self.pieces.transport.complete(&x, &u_free)?; // n x m columns
        let h_rows = &self.n_matrix * full.transpose(); // m x n
        let k2 = self.layout.k_second;
        let mut out = DMatrix::zeros(k2, k2);
        for (r, c_slot) in self.layout.c_slots().enumerate() {
            for (cidx, &axis) in self.solved_axes.iter().enumerate() {
                out[(r, cidx)] = h_rows[(c_slot, axis)];
            }
        }
        Ok(out)
    }

    /// Solves the transversal point whose Casimir h-values match `xi_c`,
    /// with the free axes pinned at `w_abs`.
    fn solve_transversal(&self, xi_c: &[f64], w_abs: &[f64]) -> Result<Vec<f64>> {
        let k2 = self.layout.k_second;
        let mut z: Vec<f64> = self
            .solved_axes
            .iter()
            .map(|&a| self.chart.base()[a])
            .collect();
        z.extend_from_slice(w_abs);
        if k2 == 0 {
            return Ok(z);
        }
        for _ in 0..50 {
            let h = self.h_on_transversal(&z);
            let err = DVector::from_iterator(
                k2,
                self.layout
                    .c_slots()
                    .enumerate()
                    .map(|(j, slot)| h[slot] - xi_c[j]),
            );
            if err.norm() <= 1e-12 {
                return Ok(z);
            }
            let jac = self.casimir_jacobian(&z)?;
            let delta = jac
                .lu()
                .solve(&err)
                .ok_or_else(|| Error::Singular("Casimir transversal solve".into()))?;
            for i in 0..k2 {
                z[i] -= delta[i];
            }
        }
        let h = self.h_on_transversal(&z);
        let resid: f64 = self
            .layout
            .c_slots()
            .enumerate()
            .map(|(j, slot)| (h[slot] - xi_c[j]).powi(2))
            .sum::<f64>()
            .sqrt();
        if resid <= 1e-9 {
            return Ok(z);
        }
        Err(Error::Construction(format!(
            "transversal solve did not converge (residual {resid:.3e})"
        )))
    }

    /// Flow through times t of the Hamiltonian fields of h^1..h^m, starting
    /// at the transversal point; the covector stack rides along in the
    /// state so the fields never re-integrate paths.
    fn flow(&self, z: &[f64], t: &DVector<f64>) -> Result<Vec<f64>> {
        let n = self.layout.n;
        let m = self.layout.m;
        if t.iter().all(|v| *v == 0.0) {
            return Ok(self.sigma(z));
        }
        let x0 = self.sigma(z);
        let (_, u_free0) = self.transversal_data(z);
        let mut state: Vec<f64> = x0;
        state.extend(u_free0.iter().copied());
        let free_count = u_free0.nrows();

        let result = integrate(
            |_s, y| {
                let x = &y[..n];
                if !self.chart.contains(x, self.pad_rel) {
                    return Err(Error::Construction(format!(
                        "Hamiltonian flow leaves the padded box at {x:?}"
                    )));
                }
                let u_free = DMatrix::from_column_slice(free_count, m, &y[n..]);
                let full = self.pieces.transport.complete(x, &u_free)?; // n x m
                let h_cov = &full * self.n_matrix.transpose(); // n x m, column i = u_{h^i}
                let p = invert_omega(&self.omega.value_at(x)?, self.cond_omega)?.matrix;
                // X_i = P^T u_{h^i}; combined field = P^T (h_cov t)
                let xdot = p.transpose() * (&h_cov * t);
                let gamma = self.pieces.transport.conn.gamma_at(x)?;
                let mut out: Vec<f64> = xdot.iter().copied().collect();
                for c in 0..m {
                    for (row, &i) in self.pieces.transport.free_rows.iter().enumerate() {
                        let mut sum = 0.0;
                        for s in 0..n {
                            let mut gs = 0.0;
                            for (a, xa) in xdot.iter().enumerate() {
                                gs += gamma.get(s, i, a) * xa;
                            }
                            sum += gs * full[(s, c)];
                            let _ = row;
                        }
                        out.push(sum);
                    }
                }
                Ok(out)
            },
            0.0,
            1.0,
            &state,
            &self.ode,
        )?;
        Ok(result[..n].to_vec())
    }

    /// The parametrization xi -> x.
    fn apply(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let l = &self.layout;
        let xi_c: Vec<f64> = l.c_slots().map(|s| xi[s]).collect();
        let w_abs: Vec<f64> = l
            .w_slots()
            .zip(&self.free_axes)
            .map(|(s, &a)| self.chart.base()[a] + xi[s])
            .collect();
        let z = self.solve_transversal(&xi_c, &w_abs)?;
        let h0 = self.h_on_transversal(&z);
        let mut t = DVector::zeros(l.m);
        for i in 0..l.k_prime {
            // xi^i = h_i(sigma) + t_{k'+i};  xi^{k'+i} = h_{k'+i}(sigma) - t_i
            t[l.k_prime + i] = xi[i] - h0[i];
            t[i] = h0[l.k_prime + i] - xi[l.k_prime + i];
        }
        for (j, slot) in l.d_slots().enumerate() {
            t[2 * l.k_prime + j] = xi[slot];
        }
        self.flow(&z, &t)
    }
}

struct JointMap {
    core: Arc<JointCore>,
}

impl PointMap for JointMap {
    fn apply(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.core.apply(xi)
    }
}

/// D-block shift by a primitive of the residual Casimir 2-form:
/// xi_old = xi_new except D_j += theta_j(xi_C).
struct CasimirShift {
    layout: Layout,
    /// theta as a function of the Casimir values (k''-dim Chebyshev cache).
    theta: ChebMap,
}

impl PointMap for CasimirShift {
    fn apply(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let l = &self.layout;
        let xi_c: Vec<f64> = l.c_slots().map(|s| xi[s]).collect();
        let theta = self.theta.eval(&xi_c);
        let mut out = xi.to_vec();
        for (j, slot) in l.d_slots().enumerate() {
            out[slot] += theta[j];
        }
        Ok(out)
    }

    fn exact_jacobian(&self, xi: &[f64]) -> Option<Result<DMatrix<f64>>> {
        let l = &self.layout;
        let n = l.n;
        let xi_c: Vec<f64> = l.c_slots().map(|s| xi[s]).collect();
        let mut jac = DMatrix::identity(n, n);
        for (cidx, c_slot) in l.c_slots().enumerate() {
            let d = self.theta.eval_deriv(&xi_c, cidx);
            for (j, d_slot) in l.d_slots().enumerate() {
                jac[(d_slot, c_slot)] += d[j];
            }
        }
        Some(Ok(jac))
    }
}

/// W-block extension: xi = (F/C/D fixed slots, chi(y)) where chi is the
/// reduced Darboux chart on the W block.
struct WBlockExtend {
    layout: Layout,
    chi: ChartMap,
}

impl PointMap for WBlockExtend {
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let l = &self.layout;
        let head = l.m + l.k_second;
        let mut out = v[..head].to_vec();
        out.extend(self.chi.apply(&v[head..])?);
        Ok(out)
    }

    fn exact_jacobian(&self, v: &[f64]) -> Option<Result<DMatrix<f64>>> {
        let l = &self.layout;
        let head = l.m + l.k_second;
        let j = match self.chi.jacobian(&v[head..]) {
            Ok(j) => j,
            Err(e) => return Some(Err(e)),
        };
        let n = l.n;
        let mut out = DMatrix::zeros(n, n);
        for i in 0..head {
            out[(i, i)] = 1.0;
        }
        out.view_mut((head, head), (l.q(), l.q())).copy_from(&j);
        Some(Ok(out))
    }
}

/// Builds a flat chart for g + omega with omega symplectic and g flat
/// (stationarity, curvature and the mixed parallelism condition are the
/// caller's preconditions; violations surface as certification failures).
pub fn joint_flat_chart(
    g: &ExprMatrix,
    omega: &ExprMatrix,
    chart: &Chart,
    config: &Config,
) -> Result<FlatChartResult> {
    let n = chart.dim();
    let b_total = ExprMatrix::from_fn(n, |i, j| {
        Expr::add(g.entry(i, j).clone(), omega.entry(i, j).clone())
    });
    let b_field = SymbolicMatrixField::new(b_total, n);
    let omega_field = SymbolicMatrixField::new(omega.clone(), n);
    let grid = chart.grid(config.grid_res_for_dim(n));

    // trivial metric: plain Darboux, recertified against g + omega
    let g_rank = numeric_rank(&g.eval(chart.base())?, config.sigma_tol);
    if g_rank == 0 {
        let result = darboux_symplectic(Arc::new(omega_field), chart, config)?;
        let cert_grid = result
            .map
            .source()
            .grid(config.cert_grid_res_for_dim(n));
        let report = super::verify_flat_chart(
            &b_field,
            &result.map,
            MapDirection::Parametrization,
            &cert_grid,
        )?;
        return Ok(FlatChartResult {
            map: result.map,
            direction: MapDirection::Parametrization,
            constant_matrix: report.constant_matrix,
            max_deviation: report.max_deviation,
            invertibility: report.invertibility,
            flat_functions: None,
            shrink_count: result.shrink_count,
        });
    }
    // nondegenerate metric: the potentials alone form the chart and omega
    // is constant in it because the brackets are
    if g_rank == n {
        let result = flat_chart_symmetric(chart, g, config)?;
        let report = super::verify_flat_chart(&b_field,
            &result.map,
            MapDirection::Forward, &grid)?;
        return Ok(FlatChartResult {
            map: result.map,
            direction: MapDirection::Forward,
            constant_matrix: report.constant_matrix,
            max_deviation: report.max_deviation,
            invertibility: report.invertibility,
            flat_functions: result.flat_functions,
            shrink_count: 0,
        });
    }

    let pieces = build_symmetric_pieces(chart, g, config)?;
    let m = pieces.covectors.len();

    // bracket matrix of the normalized potentials over a coarse grid
    let coarse = chart.grid(3);
    let mut beta_sum = DMatrix::zeros(m, m);
    let mut beta_samples: Vec<DMatrix<f64>> = Vec::new();
    for p in coarse.points() {
        let mut u_rows = DMatrix::zeros(m, n);
        for (k, pc) in pieces.covectors.iter().enumerate() {
            u_rows.row_mut(k).copy_from(&pc.eval_u(&p)?.transpose());
        }
        let primed = &pieces.normalization * u_rows;
        let pmat = invert_omega(&omega.eval(&p)?, config.cond_omega_max)?.matrix;
        let beta = &primed * pmat * primed.transpose();
        beta_sum += &beta;
        beta_samples.push(beta);
    }
    let beta_mean = beta_sum / beta_samples.len() as f64;
    let mut beta_var = 0.0f64;
    for b in &beta_samples {
        beta_var = beta_var.max((b - &beta_mean).abs().max().powi(2));
    }
    if beta_var > config.tol_bracket_var {
        return Err(Error::Construction(format!(
            "Poisson brackets of the flat potentials are not constant \
             (variance {beta_var:.3e}); the parallelism precondition fails"
        )));
    }

    let (mmat, k_prime) = skew_normal_form(&beta_mean, config.sigma_tol.max(1e-10))?;
    let k_second = m - 2 * k_prime;
    let layout = Layout {
        k_prime,
        k_second,
        m,
        n,
    };
    let q = layout.q();
    if k_second > 0 && q > 0 {
        return Err(Error::Unsupported(
            "joint case with both a Casimir block and a residual symplectic \
             block is outside the constructor scope"
                .into(),
        ));
    }
    let n_matrix = &mmat * &pieces.normalization;

    // choose the k'' solved axes: the Casimir differentials restricted to
    // candidate transversal axes must form a well-conditioned block
    let mut u0_rows = DMatrix::zeros(m, n);
    for (k, pc) in pieces.covectors.iter().enumerate() {
        u0_rows.row_mut(k).copy_from(&pc.initial_full()?.transpose());
    }
    let h_rows0 = &n_matrix * &u0_rows;
    // transversal = complement of the axes where the Hamiltonian frame has
    // its best block
    let p0 = invert_omega(&omega.eval(chart.base())?, config.cond_omega_max)?.matrix;
    let x_frame0 = p0.transpose() * h_rows0.transpose(); // n x m, column i = X_i
    let flow_axes = best_axes(&x_frame0.transpose(), m, n)?;
    let transversal_axes: Vec<usize> = (0..n).filter(|a| !flow_axes.contains(a)).collect();
    // among the transversal axes pick k'' for the Casimir Newton solve
    let mut cas_block = DMatrix::zeros(k_second, transversal_axes.len());
    for (r, slot) in layout.c_slots().enumerate() {
        for (c, &axis) in transversal_axes.iter().enumerate() {
            cas_block[(r, c)] = h_rows0[(slot, axis)];
        }
    }
    let solved_local = best_axes(&cas_block, k_second, transversal_axes.len())?;
    let solved_axes: Vec<usize> = solved_local.iter().map(|&i| transversal_axes[i]).collect();
    let free_axes: Vec<usize> = transversal_axes
        .iter()
        .copied()
        .filter(|a| !solved_axes.contains(a))
        .collect();

    // cache potentials and covector stacks over the transversal plane
    let t_intervals: Vec<(f64, f64)> = solved_axes
        .iter()
        .chain(&free_axes)
        .map(|&a| chart.intervals()[a])
        .collect();
    let transport = pieces.transport.clone();
    let t_dim = t_intervals.len();
    let solved_for_cache = solved_axes.clone();
    let free_for_cache = free_axes.clone();
    let base_for_cache = chart.base().to_vec();
    let nodes = if t_dim <= 2 { 17 } else { 11 };
    let transversal = ChebMap::fit(
        t_intervals,
        nodes,
        m + m * m,
        move |z: &[f64]| -> Result<Vec<f64>> {
            let mut target = base_for_cache.clone();
            for (i, &a) in solved_for_cache.iter().enumerate() {
                target[a] = z[i];
            }
            for (i, &a) in free_for_cache.iter().enumerate() {
                target[a] = z[solved_for_cache.len() + i];
            }
            let m_rank = transport.rank();
            let init = TransportState {
                u_free: DMatrix::identity(m_rank, m_rank),
                f: DVector::zeros(m_rank),
            };
            // path restricted to the transversal axes
            let order: Vec<usize> = solved_for_cache
                .iter()
                .chain(&free_for_cache)
                .copied()
                .collect();
            let (_, state) = transport.transport_from_base(&target, &init, &order)?;
            let mut out: Vec<f64> = state.f.iter().copied().collect();
            out.extend(state.u_free.iter().copied());
            Ok(out)
        },
    )?;

    let core = Arc::new(JointCore {
        chart: chart.clone(),
        pieces,
        n_matrix,
        layout: layout.clone(),
        solved_axes,
        free_axes,
        transversal,
        omega: omega_field,
        ode: OdeOptions::new(config.ode_abs_tol, config.ode_rel_tol),
        pad_rel: config.box_pad_rel,
        cond_omega: config.cond_omega_max,
    });

    // xi box: h-ranges sampled over the problem grid, flow times bounded by
    // the box crossing time of the fields, W from the free axes
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for p in coarse.points() {
        let mut f_raw = DVector::zeros(m);
        for (k, pc) in core.pieces.covectors.iter().enumerate() {
            f_raw[k] = pc.eval_f(&p)?;
        }
        let h = &core.n_matrix * f_raw;
        for i in 0..m {
            lo[i] = lo[i].min(h[i]);
            hi[i] = hi[i].max(h[i]);
        }
    }
    let mut xi_intervals = Vec::with_capacity(n);
    for i in 0..m {
        let pad = 0.05 * (hi[i] - lo[i]).max(1e-6);
        xi_intervals.push((lo[i] * 0.9 - pad, hi[i] * 0.9 + pad));
    }
    // flow-time radius per Casimir field from the sampled field magnitude
    for (j, _slot) in layout.d_slots().enumerate() {
        let mut max_speed = 0.0f64;
        for p in coarse.points() {
            let mut u_rows = DMatrix::zeros(m, n);
            for (k, pc) in core.pieces.covectors.iter().enumerate() {
                u_rows.row_mut(k).copy_from(&pc.eval_u(&p)?.transpose());
            }
            let h_rows = &core.n_matrix * u_rows;
            let pmat = invert_omega(&omega.eval(&p)?, config.cond_omega_max)?.matrix;
            let x_field =
                pmat.transpose() * h_rows.row(2 * k_prime + j).transpose();
            max_speed = max_speed.max(x_field.abs().max());
        }
        let min_span = chart
            .intervals()
            .iter()
            .map(|(a, b)| b - a)
            .fold(f64::INFINITY, f64::min);
        let r = 0.35 * min_span / max_speed.max(1e-9);
        xi_intervals.push((-r, r));
    }
    for &a in &core.free_axes {
        let (lo_a, hi_a) = chart.intervals()[a];
        let b = chart.base()[a];
        xi_intervals.push(((lo_a - b) * 0.9, (hi_a - b) * 0.9));
    }
    let xi_chart = Chart::synthetic("q", xi_intervals, vec![0.0; n])?;

    let psi0 = ChartMap::custom(
        xi_chart.clone(),
        chart.clone(),
        Arc::new(JointMap { core: core.clone() }),
    )
    .with_h_jac(config.h_jac_rel * chart.diameter());

    // residual fixes on the xi chart
    let final_map = if k_second >= 2 {
        // Casimir 2-form u_ij(xi_C) from the pullback, cached over the C box
        let c_intervals: Vec<(f64, f64)> = layout.c_slots().map(|s| xi_chart.intervals()[s]).collect();
        let layout_u = layout.clone();
        let psi0_for_u = psi0.clone();
        let omega_for_u = SymbolicMatrixField::new(omega.clone(), n);
        let c_base: Vec<f64> = vec![0.0; n];
        let u_cache = ChebMap::fit(
            c_intervals.clone(),
            13,
            k_second * k_second,
            move |xi_c: &[f64]| -> Result<Vec<f64>> {
                let mut xi = c_base.clone();
                for (j, slot) in layout_u.c_slots().enumerate() {
                    xi[slot] = xi_c[j];
                }
                let pulled = pullback_at(&omega_for_u, &psi0_for_u, &xi)?;
                let mut out = Vec::with_capacity(k_second * k_second);
                for si in layout_u.c_slots() {
                    for sj in layout_u.c_slots() {
                        out.push(pulled[(si, sj)]);
                    }
                }
                Ok(out)
            },
        )?;
        // pairing coefficients alpha_j = omega~(C_j, D_j) at the base
        let pulled0 = pullback_at(
            &SymbolicMatrixField::new(omega.clone(), n),
            &psi0,
            &vec![0.0; n],
        )?;
        let alphas: Vec<f64> = layout
            .c_slots()
            .zip(layout.d_slots())
            .map(|(c, d)| pulled0[(c, d)])
            .collect();
        for a in &alphas {
            if a.abs() < 1e-6 {
                return Err(Error::Construction(
                    "degenerate Casimir pairing in the assembled chart".into(),
                ));
            }
        }
        // theta_j = -eta_j / alpha_j with d(eta) = -u
        let u_for_theta = u_cache.clone();
        let k2 = k_second;
        let c_center = vec![0.0; k2];
        let theta_fn = move |xi_c: &[f64]| -> Result<Vec<f64>> {
            let beta = |y: &[f64]| -> Result<DMatrix<f64>> {
                let vals = u_for_theta.eval(y);
                let mut mat = DMatrix::zeros(k2, k2);
                for i in 0..k2 {
                    for j in 0..k2 {
                        mat[(i, j)] = -vals[i * k2 + j];
                    }
                }
                Ok(mat)
            };
            let eta = radial_primitive(&beta, &c_center, xi_c)?;
            Ok((0..k2).map(|j| -eta[j] / alphas[j]).collect())
        };
        let theta = ChebMap::fit(c_intervals, 13, k_second, theta_fn)?;
        let shift_chart = Chart::synthetic(
            "y",
            xi_chart.intervals().to_vec(),
            vec![0.0; n],
        )?;
        let shift = ChartMap::custom(
            shift_chart,
            xi_chart.clone(),
            Arc::new(CasimirShift {
                layout: layout.clone(),
                theta,
            }),
        );
        shift.and_then(psi0)
    } else if q > 0 {
        // leftover symplectic block: Moser on the W slice of the pullback
        let w_intervals: Vec<(f64, f64)> = layout.w_slots().map(|s| xi_chart.intervals()[s]).collect();
        let layout_w = layout.clone();
        let psi0_for_w = psi0.clone();
        let omega_for_w = SymbolicMatrixField::new(omega.clone(), n);
        let w_base: Vec<f64> = vec![0.0; n];
        let w_cache = ChebMap::fit(
            w_intervals.clone(),
            13,
            q * q,
            move |w: &[f64]| -> Result<Vec<f64>> {
                let mut xi = w_base.clone();
                for (j, slot) in layout_w.w_slots().enumerate() {
                    xi[slot] = w[j];
                }
                let pulled = pullback_at(&omega_for_w, &psi0_for_w, &xi)?;
                let mut out = Vec::with_capacity(q * q);
                for si in layout_w.w_slots() {
                    for sj in layout_w.w_slots() {
                        out.push(pulled[(si, sj)]);
                    }
                }
                Ok(out)
            },
        )?;
        let w_field = Arc::new(ClosureMatrixField {
            n: q,
            f: move |w: &[f64]| -> Result<DMatrix<f64>> {
                let vals = w_cache.eval(w);
                Ok(DMatrix::from_row_slice(q, q, &vals))
            },
        });
        let w_chart = Chart::synthetic("w", w_intervals, vec![0.0; q])?;
        let chi = darboux_symplectic(w_field, &w_chart, config)?;
        let mut y_intervals: Vec<(f64, f64)> = xi_chart.intervals()[..layout.m + layout.k_second].to_vec();
        y_intervals.extend(chi.map.source().intervals().iter().copied());
        let y_chart = Chart::synthetic("y", y_intervals, vec![0.0; n])?;
        let extend = ChartMap::custom(
            y_chart,
            xi_chart.clone(),
            Arc::new(WBlockExtend {
                layout: layout.clone(),
                chi: chi.map,
            }),
        );
        extend.and_then(psi0)
    } else {
        psi0
    };

    let cert_grid = final_map
        .source()
        .grid(config.cert_grid_res_for_dim(n));
    let report = super::verify_flat_chart(
        &b_field,
        &final_map,
        MapDirection::Parametrization,
        &cert_grid,
    )?;
    Ok(FlatChartResult {
        map: final_map,
        direction: MapDirection::Parametrization,
        constant_matrix: report.constant_matrix,
        max_deviation: report.max_deviation,
        invertibility: report.invertibility,
        flat_functions: None,
        shrink_count: 0,
    })
}

/// Index subset of size k maximizing |det| of the chosen columns of an
/// k x c matrix (exhaustive; dimensions are desk-scale).
fn best_axes(rows: &DMatrix<f64>, k: usize, c: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        let mut sub = DMatrix::zeros(k, k);
        for (j, &col) in combo.iter().enumerate() {
            for i in 0..k {
                sub[(i, j)] = rows[(i, col)];
            }
        }
        let det = sub.determinant().abs();
        if best.as_ref().map(|(d, _)| det > *d).unwrap_or(true) {
            best = Some((det, combo.clone()));
        }
        // next combination
        let mut i = k;
        loop {
            if i == 0 {
                let (det, axes) = best.unwrap();
                if det < 1e-12 {
                    return Err(Error::Construction(
                        "no well-conditioned axis subset found".into(),
                    ));
                }
                return Ok(axes);
            }
            i -= 1;
            if combo[i] != i + c - k {
                combo[i] += 1;
                for j in (i + 1)..k {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}
