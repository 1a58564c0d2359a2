//! Rectification of commuting frames: the chart map (t, z) -> flow through
//! times t of the frame fields, starting from an affine transversal
//! parametrized by z. Inversion solves for the times by Newton iteration
//! with the exact flow derivative.

use crate::chart::{Chart, Grid};
use crate::chartmap::PointMap;
use crate::error::{Error, Result};
use crate::forms::{numeric_bracket, VectorFieldEval};
use crate::ode::{integrate, OdeOptions};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// A commuting k-frame evaluated as the columns of an n x k matrix.
pub trait FrameEval: Sync + Send {
    fn dim(&self) -> usize;
    fn count(&self) -> usize;
    fn frame_at(&self, x: &[f64]) -> Result<DMatrix<f64>>;
}

/// One column of a frame as a vector field.
pub struct FrameColumn {
    pub frame: Arc<dyn FrameEval>,
    pub col: usize,
}

impl VectorFieldEval for FrameColumn {
    fn dim(&self) -> usize {
        self.frame.dim()
    }

    fn value_at(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.frame.frame_at(x)?.column(self.col).clone_owned())
    }
}

/// Largest commutator norm among frame pairs over a grid.
pub fn max_commutation_defect(
    frame: &Arc<dyn FrameEval>,
    grid: &Grid,
    h: f64,
) -> Result<f64> {
    let k = frame.count();
    let mut max = 0.0f64;
    for a in 0..k {
        for b in (a + 1)..k {
            let fa = FrameColumn {
                frame: frame.clone(),
                col: a,
            };
            let fb = FrameColumn {
                frame: frame.clone(),
                col: b,
            };
            for p in grid.points() {
                let br = numeric_bracket(&fa, &fb, &p, h)?;
                max = max.max(br.abs().max());
            }
        }
    }
    Ok(max)
}

/// Rectification data: flows of the frame from the affine transversal
/// { x : x[constraint_axes] = base[constraint_axes] }, parametrized by the
/// absolute values z of the remaining axes.
pub struct RectificationChart {
    pub target: Chart,
    pub frame: Arc<dyn FrameEval>,
    /// Axes pinned on the transversal and solved for during inversion.
    pub constraint_axes: Vec<usize>,
    /// Complementary axes; their values parametrize the transversal.
    pub transversal_axes: Vec<usize>,
    pub ode: OdeOptions,
    /// Whether new coordinates are ordered (times, z) or (z, times).
    pub times_first: bool,
    /// Relative box padding tolerated during flows.
    pub pad_rel: f64,
}

impl RectificationChart {
    pub fn new(
        target: Chart,
        frame: Arc<dyn FrameEval>,
        constraint_axes: Vec<usize>,
        ode: OdeOptions,
        times_first: bool,
        pad_rel: f64,
    ) -> Result<Self> {
        let n = target.dim();
        let k = frame.count();
        if constraint_axes.len() != k {
            return Err(Error::InvalidInput(format!(
                "{} constraint axes for a frame of {} fields",
                constraint_axes.len(),
                k
            )));
        }
        let transversal_axes: Vec<usize> =
            (0..n).filter(|i| !constraint_axes.contains(i)).collect();
        Ok(Self {
            target,
            frame,
            constraint_axes,
            transversal_axes,
            ode,
            times_first,
            pad_rel,
        })
    }

    /// Point of the transversal with the given absolute z-values.
    pub fn sigma(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.target.base().to_vec();
        for (i, &axis) in self.transversal_axes.iter().enumerate() {
            x[axis] = z[i];
        }
        x
    }

    fn split<'a>(&self, q: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let k = self.frame.count();
        if self.times_first {
            (&q[..k], &q[k..])
        } else {
            let p = q.len() - k;
            (&q[p..], &q[..p])
        }
    }

    /// Flow through times `t` starting at `x0`.
    pub fn flow(&self, x0: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        if t.iter().all(|v| *v == 0.0) {
            return Ok(x0.to_vec());
        }
        let tvec = DVector::from_row_slice(t);
        integrate(
            |_s, x| {
                if !self.target.contains(x, self.pad_rel) {
                    return Err(Error::Construction(format!(
                        "flow leaves the padded box at {x:?}"
                    )));
                }
                let fr = self.frame.frame_at(x)?;
                Ok((fr * &tvec).iter().copied().collect())
            },
            0.0,
            1.0,
            x0,
            &self.ode,
        )
    }

    /// New coordinates -> old chart point.
    pub fn apply(&self, q: &[f64]) -> Result<Vec<f64>> {
        let (t, z) = self.split(q);
        let x0 = self.sigma(z);
        self.flow(&x0, t)
    }

    /// Old chart point -> (times, absolute z), by Newton on the times with
    /// the exact flow derivative (commuting frame).
    pub fn coords_of(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let k = self.frame.count();
        let target: Vec<f64> = self
            .constraint_axes
            .iter()
            .map(|&a| self.target.base()[a])
            .collect();
        // seed from the linearized frame at x
        let fr0 = self.frame.frame_at(x)?;
        let m0 = select_rows(&fr0, &self.constraint_axes);
        let rhs0 = DVector::from_iterator(
            k,
            self.constraint_axes
                .iter()
                .map(|&a| x[a] - self.target.base()[a]),
        );
        let mut t: DVector<f64> = m0
            .clone()
            .lu()
            .solve(&rhs0)
            .unwrap_or_else(|| DVector::zeros(k));

        let mut best_err = f64::INFINITY;
        for _ in 0..50 {
            let neg_t: Vec<f64> = t.iter().map(|v| -v).collect();
            let end = self.flow(x, &neg_t)?;
            let err = DVector::from_iterator(
                k,
                self.constraint_axes
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| end[a] - target[i]),
            );
            let en = err.norm();
            if en <= 1e-12 * (1.0 + t.norm()) {
                let z: Vec<f64> = self.transversal_axes.iter().map(|&a| end[a]).collect();
                return Ok((t.iter().copied().collect(), z));
            }
            if en >= best_err && en > 1e-9 {
                break;
            }
            best_err = en;
            // d end / d t_i = -V_i(end)
            let fr = self.frame.frame_at(&end)?;
            let j = -select_rows(&fr, &self.constraint_axes);
            let delta = j
                .lu()
                .solve(&err)
                .ok_or_else(|| Error::Singular("rectification Newton step".into()))?;
            t -= delta;
        }
        // final acceptance at a looser tolerance
        let neg_t: Vec<f64> = t.iter().map(|v| -v).collect();
        let end = self.flow(x, &neg_t)?;
        let en: f64 = self
            .constraint_axes
            .iter()
            .enumerate()
            .map(|(i, &a)| (end[a] - target[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        if en <= 1e-9 * (1.0 + t.norm()) {
            let z: Vec<f64> = self.transversal_axes.iter().map(|&a| end[a]).collect();
            return Ok((t.iter().copied().collect(), z));
        }
        Err(Error::Construction(format!(
            "rectification inversion did not converge at {x:?} (residual {en:.3e})"
        )))
    }
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), m.ncols());
    for (k, r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from(&m.row(*r));
    }
    out
}

/// The rectification as a chart map source (new) -> target (old).
pub struct RectifyMap(pub Arc<RectificationChart>);

impl PointMap for RectifyMap {
    fn apply(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.0.apply(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::VectorField;
    use crate::expr::{parse, Expr};

    struct SymbolicFrame {
        fields: Vec<VectorField>,
        n: usize,
    }

    impl FrameEval for SymbolicFrame {
        fn dim(&self) -> usize {
            self.n
        }

        fn count(&self) -> usize {
            self.fields.len()
        }

        fn frame_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
            let mut out = DMatrix::zeros(self.n, self.fields.len());
            for (c, f) in self.fields.iter().enumerate() {
                let v = f.value_at(x)?;
                out.column_mut(c).copy_from(&v);
            }
            Ok(out)
        }
    }

    #[test]
    fn rectifies_a_sheared_constant_frame() {
        // field (1, 1/2) in the plane: flow lines are diagonal
        let c = Chart::centered(vec!["x".into(), "y".into()], vec![(-2.0, 2.0), (-2.0, 2.0)])
            .unwrap();
        let frame: Arc<dyn FrameEval> = Arc::new(SymbolicFrame {
            fields: vec![VectorField::new(vec![Expr::one(), Expr::rational(1, 2)])],
            n: 2,
        });
        let rect = RectificationChart::new(
            c,
            frame,
            vec![0],
            OdeOptions::new(1e-12, 1e-10),
            true,
            0.5,
        )
        .unwrap();
        // apply (t, z): start (0, z), flow t
        let x = rect.apply(&[0.8, -0.3]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-10);
        assert!((x[1] - (-0.3 + 0.4)).abs() < 1e-10);
        // invert
        let (t, z) = rect.coords_of(&x).unwrap();
        assert!((t[0] - 0.8).abs() < 1e-9);
        assert!((z[0] - (-0.3)).abs() < 1e-9);
    }

    #[test]
    fn rectifies_position_dependent_commuting_fields() {
        // X1 = (0, -1/(1+x^2)): flows keep x fixed; used in reverse order
        let c = Chart::centered(vec!["x".into(), "y".into()], vec![(-0.5, 0.5), (-0.5, 0.5)])
            .unwrap();
        let frame: Arc<dyn FrameEval> = Arc::new(SymbolicFrame {
            fields: vec![VectorField::new(vec![
                Expr::zero(),
                parse("-1 / (1 + x^2)", c.names()).unwrap(),
            ])],
            n: 2,
        });
        let rect = RectificationChart::new(
            c,
            frame.clone(),
            vec![1],
            OdeOptions::new(1e-12, 1e-10),
            false,
            0.5,
        )
        .unwrap();
        assert_eq!(max_commutation_defect(&frame, &rect.target.grid(3), 1e-5).unwrap(), 0.0);
        // (z, t) ordering: z = absolute x, t = time
        let x = rect.apply(&[0.3, 0.5]).unwrap();
        // flow from (0.3, 0): y moves by -t/(1+0.09)
        assert!((x[0] - 0.3).abs() < 1e-12);
        assert!((x[1] + 0.5 / 1.09).abs() < 1e-9, "{}", x[1]);
        let (t, z) = rect.coords_of(&x).unwrap();
        assert!((t[0] - 0.5).abs() < 1e-9);
        assert!((z[0] - 0.3).abs() < 1e-9);
    }
}
