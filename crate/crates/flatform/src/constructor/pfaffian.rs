//! Parallel covectors by Pfaffian integration: the reduced first-order
//! system on the free components is integrated along axis-parallel paths
//! from the base point, the remaining components are completed through the
//! annihilator matrix F, and path independence is checked on grid
//! rectangles rather than assumed.

use crate::chart::{Chart, Grid};
use crate::connection::{ConnectionEval, ConnectionField};
use crate::error::{Error, Result};
use crate::forms::ExprMatrix;
use crate::kernelrank::{kernel_data, KernelData};
use crate::ode::{integrate, OdeOptions};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::Arc;

/// Transport state for a stack of covectors sharing one kernel pivot:
/// free components column-per-covector plus the accumulated potentials.
#[derive(Debug, Clone)]
pub struct TransportState {
    /// m x count free components.
    pub u_free: DMatrix<f64>,
    /// count potentials (line integrals of each covector).
    pub f: DVector<f64>,
}

impl TransportState {
    pub fn count(&self) -> usize {
        self.u_free.ncols()
    }

    fn pack(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.u_free.iter().copied().collect();
        out.extend(self.f.iter().copied());
        out
    }

    fn unpack(m: usize, count: usize, data: &[f64]) -> Self {
        let u_free = DMatrix::from_column_slice(m, count, &data[..m * count]);
        let f = DVector::from_row_slice(&data[m * count..]);
        Self { u_free, f }
    }
}

/// Shared machinery transporting covector stacks along axis segments.
pub struct CovectorTransport {
    pub chart: Chart,
    pub g: Arc<ExprMatrix>,
    pub conn: Arc<ConnectionField>,
    pub pivot_rows: Vec<usize>,
    pub free_rows: Vec<usize>,
    pub sigma_tol: f64,
    pub cond_max: f64,
    pub ode: OdeOptions,
}

impl CovectorTransport {
    pub fn new(
        chart: Chart,
        g: Arc<ExprMatrix>,
        conn: Arc<ConnectionField>,
        sigma_tol: f64,
        cond_max: f64,
        ode: OdeOptions,
    ) -> Result<Self> {
        let base_g = g.eval(chart.base())?;
        let kd = kernel_data(&base_g, sigma_tol, cond_max, None)?;
        Ok(Self {
            chart,
            g,
            conn,
            pivot_rows: kd.pivot_rows,
            free_rows: kd.free_rows,
            sigma_tol,
            cond_max,
            ode,
        })
    }

    pub fn rank(&self) -> usize {
        self.free_rows.len()
    }

    pub fn kernel_at(&self, x: &[f64]) -> Result<KernelData> {
        kernel_data(
            &self.g.eval(x)?,
            self.sigma_tol,
            self.cond_max,
            Some(&self.pivot_rows),
        )
    }

    /// Full covectors at a point from the free components.
    pub fn complete(&self, x: &[f64], u_free: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let kd = self.kernel_at(x)?;
        let n = self.chart.dim();
        let mut out = DMatrix::zeros(n, u_free.ncols());
        for c in 0..u_free.ncols() {
            let u = kd.annihilator(u_free.column(c).as_slice());
            out.column_mut(c).copy_from(&u);
        }
        Ok(out)
    }

    /// Integrates the Pfaffian system along one axis segment. The state
    /// carries free components and potentials for the whole stack.
    pub fn integrate_segment(
        &self,
        start: &[f64],
        axis: usize,
        target: f64,
        state: &TransportState,
    ) -> Result<TransportState> {
        let m = self.rank();
        let count = state.count();
        if (target - start[axis]).abs() == 0.0 {
            return Ok(state.clone());
        }
        let packed = state.pack();
        let rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
            let mut x = start.to_vec();
            x[axis] = t;
            let st = TransportState::unpack(m, count, y);
            let u_full = self.complete(&x, &st.u_free)?;
            let gamma = self.conn.gamma_at(&x)?;
            let mut du = DMatrix::zeros(m, count);
            for c in 0..count {
                for (row, &i) in self.free_rows.iter().enumerate() {
                    let mut sum = 0.0;
                    for s in 0..self.chart.dim() {
                        sum += gamma.get(s, i, axis) * u_full[(s, c)];
                    }
                    du[(row, c)] = sum;
                }
            }
            let mut out: Vec<f64> = du.iter().copied().collect();
            // potential: df along this axis is the covector's axis component
            for c in 0..count {
                out.push(u_full[(axis, c)]);
            }
            Ok(out)
        };
        let result = integrate(rhs, start[axis], target, &packed, &self.ode)?;
        Ok(TransportState::unpack(m, count, &result))
    }

    /// Transports a stack from the base point to `q` along axis-parallel
    /// segments in the given axis order.
    pub fn transport_from_base(
        &self,
        q: &[f64],
        init: &TransportState,
        order: &[usize],
    ) -> Result<(Vec<f64>, TransportState)> {
        let mut x = self.chart.base().to_vec();
        let mut state = init.clone();
        for &axis in order {
            state = self.integrate_segment(&x, axis, q[axis], &state)?;
            x[axis] = q[axis];
        }
        Ok((x, state))
    }
}

/// A single parallel covector field u with its potential f (df = u,
/// f(base) = 0), evaluable anywhere in the box by path integration.
pub struct ParallelCovector {
    transport: Arc<CovectorTransport>,
    u_free_init: DVector<f64>,
}

impl ParallelCovector {
    /// Builds the covector with initial free components `u_free_init` at the
    /// base point (the full initial value is the annihilator extension).
    pub fn new(transport: Arc<CovectorTransport>, u_free_init: DVector<f64>) -> Result<Self> {
        if u_free_init.len() != transport.rank() {
            return Err(Error::InvalidInput(format!(
                "initial data has {} components, rank is {}",
                u_free_init.len(),
                transport.rank()
            )));
        }
        Ok(Self {
            transport,
            u_free_init,
        })
    }

    pub fn transport(&self) -> &CovectorTransport {
        &self.transport
    }

    pub fn initial_state(&self) -> TransportState {
        TransportState {
            u_free: DMatrix::from_column_slice(
                self.u_free_init.len(),
                1,
                self.u_free_init.as_slice(),
            ),
            f: DVector::zeros(1),
        }
    }

    /// Full covector at the base point.
    pub fn initial_full(&self) -> Result<DVector<f64>> {
        let full = self
            .transport
            .complete(self.transport.chart.base(), &self.initial_state().u_free)?;
        Ok(full.column(0).clone_owned())
    }

    /// (u(q), f(q)) along the default axis order.
    pub fn eval(&self, q: &[f64]) -> Result<(DVector<f64>, f64)> {
        let order: Vec<usize> = (0..self.transport.chart.dim()).collect();
        self.eval_with_order(q, &order)
    }

    pub fn eval_with_order(&self, q: &[f64], order: &[usize]) -> Result<(DVector<f64>, f64)> {
        let (x, state) = self
            .transport
            .transport_from_base(q, &self.initial_state(), order)?;
        let full = self.transport.complete(&x, &state.u_free)?;
        Ok((full.column(0).clone_owned(), state.f[0]))
    }

    pub fn eval_u(&self, q: &[f64]) -> Result<DVector<f64>> {
        Ok(self.eval(q)?.0)
    }

    /// The potential f with df = u and f(base) = 0.
    pub fn eval_f(&self, q: &[f64]) -> Result<f64> {
        Ok(self.eval(q)?.1)
    }

    /// Annihilator containment max_{v in ker g} |<v, u>| over the grid.
    pub fn annihilator_defect(&self, grid: &Grid) -> Result<f64> {
        let mut max = 0.0f64;
        for p in grid.points() {
            let (u, _) = self.eval(&p)?;
            let kd = self.transport.kernel_at(&p)?;
            if kd.kernel_dim() > 0 {
                let res = (u.transpose() * &kd.basis).abs().max();
                max = max.max(res);
            }
        }
        Ok(max)
    }

    /// Path-independence check: integrates the Pfaffian system around every
    /// elementary grid rectangle in every axis pair and returns the largest
    /// state defect (covector components) and potential defect (the loop
    /// integral of the 1-form u).
    pub fn loop_defects(&self, grid: &Grid) -> Result<LoopDefects> {
        let n = grid.dim();
        let mut rects: Vec<(Vec<f64>, usize, f64, usize, f64)> = Vec::new();
        for j in 0..n {
            for k in (j + 1)..n {
                for flat in 0..grid.len() {
                    let corner = grid.point(flat);
                    let aj = grid.axes[j].iter().position(|v| *v == corner[j]).unwrap();
                    let ak = grid.axes[k].iter().position(|v| *v == corner[k]).unwrap();
                    if aj + 1 >= grid.axes[j].len() || ak + 1 >= grid.axes[k].len() {
                        continue;
                    }
                    rects.push((
                        corner,
                        j,
                        grid.axes[j][aj + 1],
                        k,
                        grid.axes[k][ak + 1],
                    ));
                }
            }
        }
        let defects: Vec<(f64, f64)> = rects
            .par_iter()
            .map(|(corner, j, jhi, k, khi)| -> Result<(f64, f64)> {
                let (_, start) = self.transport.transport_from_base(
                    corner,
                    &self.initial_state(),
                    &(0..n).collect::<Vec<_>>(),
                )?;
                let mut x = corner.clone();
                let mut st = start.clone();
                // corner -> j+ -> k+ -> j- -> k-
                st = self.transport.integrate_segment(&x, *j, *jhi, &st)?;
                x[*j] = *jhi;
                st = self.transport.integrate_segment(&x, *k, *khi, &st)?;
                x[*k] = *khi;
                st = self.transport.integrate_segment(&x, *j, corner[*j], &st)?;
                x[*j] = corner[*j];
                st = self.transport.integrate_segment(&x, *k, corner[*k], &st)?;
                let u_defect = (&st.u_free - &start.u_free).abs().max();
                let f_defect = (st.f[0] - start.f[0]).abs();
                Ok((u_defect, f_defect))
            })
            .collect::<Result<_>>()?;
        let max_u = defects.iter().map(|d| d.0).fold(0.0, f64::max);
        let max_f = defects.iter().map(|d| d.1).fold(0.0, f64::max);
        Ok(LoopDefects { max_u, max_f })
    }

    /// Max disagreement of u between two path orders over the grid.
    pub fn reorder_disagreement(&self, grid: &Grid, other_order: &[usize]) -> Result<f64> {
        let n = grid.dim();
        let default: Vec<usize> = (0..n).collect();
        let points = grid.points();
        let per: Vec<f64> = points
            .par_iter()
            .map(|p| -> Result<f64> {
                let (u1, _) = self.eval_with_order(p, &default)?;
                let (u2, _) = self.eval_with_order(p, other_order)?;
                Ok((u1 - u2).abs().max())
            })
            .collect::<Result<_>>()?;
        Ok(per.into_iter().fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoopDefects {
    /// Largest holonomy defect of the covector components.
    pub max_u: f64,
    /// Largest loop integral of the 1-form (closedness defect).
    pub max_f: f64,
}

impl LoopDefects {
    pub fn max(&self) -> f64 {
        self.max_u.max(self.max_f)
    }
}

/// Convenience constructor: transport machinery for the metric `g` with its
/// least-norm connection.
pub fn transport_for_metric(
    chart: &Chart,
    g: &ExprMatrix,
    sigma_tol: f64,
    cond_max: f64,
    ode: OdeOptions,
) -> Result<Arc<CovectorTransport>> {
    let conn = Arc::new(ConnectionField::for_g(g.clone(), sigma_tol));
    Ok(Arc::new(CovectorTransport::new(
        chart.clone(),
        Arc::new(g.clone()),
        conn,
        sigma_tol,
        cond_max,
        ode,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Expr};
    use approx::assert_relative_eq;

    fn polar_chart() -> Chart {
        Chart::new(
            vec!["r".into(), "theta".into()],
            vec![(1.0, 2.0), (-0.5, 0.5)],
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    fn polar_metric(c: &Chart) -> ExprMatrix {
        ExprMatrix::from_rows(vec![
            vec![Expr::one(), Expr::zero()],
            vec![Expr::zero(), parse("r^2", c.names()).unwrap()],
        ])
        .unwrap()
    }

    fn example1_chart() -> Chart {
        Chart::new(
            vec!["x".into(), "y".into()],
            vec![(1.0, 2.0), (1.0, 2.0)],
            vec![1.5, 1.5],
        )
        .unwrap()
    }

    fn example1_metric(c: &Chart) -> ExprMatrix {
        ExprMatrix::from_rows(vec![
            vec![
                parse("4 * x^2", c.names()).unwrap(),
                parse("4 * x * y", c.names()).unwrap(),
            ],
            vec![
                parse("4 * x * y", c.names()).unwrap(),
                parse("4 * y^2", c.names()).unwrap(),
            ],
        ])
        .unwrap()
    }

    fn ode() -> OdeOptions {
        OdeOptions::new(1e-12, 1e-10)
    }

    #[test]
    fn constant_degenerate_metric_transports_constantly() {
        let c = Chart::centered(vec!["x".into(), "y".into()], vec![(-1.0, 1.0), (-1.0, 1.0)])
            .unwrap();
        let g = ExprMatrix::from_rows(vec![
            vec![Expr::one(), Expr::zero()],
            vec![Expr::zero(), Expr::zero()],
        ])
        .unwrap();
        let tr = transport_for_metric(&c, &g, 1e-8, 1e6, ode()).unwrap();
        let pc = ParallelCovector::new(tr, DVector::from_row_slice(&[1.0])).unwrap();
        for p in c.grid(4).points() {
            let (u, f) = pc.eval(&p).unwrap();
            assert_relative_eq!(u[0], 1.0, epsilon = 1e-12);
            assert!(u[1].abs() < 1e-12);
            // f = x - x_base
            assert_relative_eq!(f, p[0], epsilon = 1e-10);
        }
    }

    #[test]
    fn polar_parallel_covector_is_differential_of_r_cos_theta() {
        let c = polar_chart();
        let g = polar_metric(&c);
        let tr = transport_for_metric(&c, &g, 1e-8, 1e6, ode()).unwrap();
        // u(base) = (1, 0) = d(r cos theta) at (1, 0)
        let pc = ParallelCovector::new(tr, DVector::from_row_slice(&[1.0, 0.0])).unwrap();
        for p in c.grid(4).points() {
            let (u, f) = pc.eval(&p).unwrap();
            let (r, th) = (p[0], p[1]);
            assert!((u[0] - th.cos()).abs() <= 1e-6, "u_r at {p:?}: {}", u[0]);
            assert!((u[1] + r * th.sin()).abs() <= 1e-6, "u_th at {p:?}: {}", u[1]);
            assert!((f - (r * th.cos() - 1.0)).abs() <= 1e-6, "f at {p:?}: {f}");
        }
    }

    #[test]
    fn example1_recovers_phi_up_to_affine_map() {
        let c = example1_chart();
        let g = example1_metric(&c);
        let tr = transport_for_metric(&c, &g, 1e-8, 1e6, ode()).unwrap();
        assert_eq!(tr.rank(), 1);
        let pc = ParallelCovector::new(tr, DVector::from_row_slice(&[1.0])).unwrap();
        // u must be proportional to d(x^2 + y^2) = (2x, 2y); the potential
        // then matches a * (x^2 + y^2) + b
        let mut ratio: Option<f64> = None;
        for p in c.grid(4).points() {
            let (u, f) = pc.eval(&p).unwrap();
            let d = [2.0 * p[0], 2.0 * p[1]];
            let r = u[0] / d[0];
            assert_relative_eq!(u[1], r * d[1], epsilon = 1e-6);
            match ratio {
                None => ratio = Some(r),
                Some(r0) => assert_relative_eq!(r, r0, epsilon = 1e-6),
            }
            let phi = p[0] * p[0] + p[1] * p[1];
            let phi0 = 1.5f64 * 1.5 + 1.5 * 1.5;
            assert!(
                (f - r * (phi - phi0)).abs() <= 1e-6,
                "potential not affine in phi at {p:?}"
            );
        }
    }

    #[test]
    fn annihilator_containment_along_grid() {
        let c = example1_chart();
        let g = example1_metric(&c);
        let tr = transport_for_metric(&c, &g, 1e-8, 1e6, ode()).unwrap();
        let pc = ParallelCovector::new(tr, DVector::from_row_slice(&[1.0])).unwrap();
        let defect = pc.annihilator_defect(&c.grid(4)).unwrap();
        assert!(defect <= 1e-7, "annihilator defect {defect}");
    }

    #[test]
    fn loop_defects_small_on_flat_fixture() {
        let c = polar_chart();
        let g = polar_metric(&c);
        let tr = transport_for_metric(&c, &g, 1e-8, 1e6, ode()).unwrap();
        let pc = ParallelCovector::new(tr, DVector::from_row_slice(&[1.0, 0.0])).unwrap();
        let defects = pc.loop_defects(&c.grid(4)).unwrap();
        assert!(defects.max_u <= 1e-6, "loop u defect {}", defects.max_u);
        assert!(defects.max_f <= 1e-6, "loop f defect {}", defects.max_f);
    }

    #[test]
    fn path_reordering_agrees() {
        let c = example1_chart();
        let g = example1_metric(&c);
        let tr = transport_for_metric(&c, &g, 1e-8, 1e6, ode()).unwrap();
        let pc = ParallelCovector::new(tr, DVector::from_row_slice(&[1.0])).unwrap();
        let d = pc.reorder_disagreement(&c.grid(4), &[1, 0]).unwrap();
        assert!(d <= 1e-6, "reorder disagreement {d}");
    }

    #[test]
    fn zero_initial_data_stays_zero() {
        let c = example1_chart();
        let g = example1_metric(&c);
        let tr = transport_for_metric(&c, &g, 1e-8, 1e6, ode()).unwrap();
        let pc = ParallelCovector::new(tr, DVector::from_row_slice(&[0.0])).unwrap();
        for p in c.grid(3).points() {
            let (u, f) = pc.eval(&p).unwrap();
            assert!(u.abs().max() <= 1e-9);
            assert!(f.abs() <= 1e-9);
        }
    }
}
