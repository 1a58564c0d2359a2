//! Coordinate maps between charts: closed-form expression maps, affine maps,
//! flow compositions (through the `PointMap` trait), numeric inversion, and
//! the pullback of bilinear forms.
//!
//! A `ChartMap` always sends points of its source chart to points of its
//! target chart. Constructors produce maps in whichever direction is natural
//! (potential charts run old -> new, Moser/rectification charts new -> old);
//! verification handles both.

use crate::chart::{Chart, Grid};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::forms::MatrixField;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Pointwise-evaluable map; implementations may expose an exact Jacobian.
pub trait PointMap: Sync + Send {
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Exact Jacobian rows d(out_i)/d(x_k), if the representation has one.
    fn exact_jacobian(&self, _x: &[f64]) -> Option<Result<DMatrix<f64>>> {
        None
    }
}

#[derive(Clone)]
enum MapRepr {
    ClosedForm {
        exprs: Vec<Expr>,
        jac: Vec<Vec<Expr>>,
    },
    Affine {
        a: DMatrix<f64>,
        b: DVector<f64>,
    },
    Custom(Arc<dyn PointMap>),
    Composition(Vec<ChartMap>),
    NumericInverse(Box<ChartMap>),
}

/// An evaluable coordinate map with a numeric-Jacobian evaluator and an
/// invertibility certificate on the source box.
#[derive(Clone)]
pub struct ChartMap {
    source: Chart,
    target: Chart,
    repr: MapRepr,
    h_jac: f64,
}

impl std::fmt::Debug for ChartMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.repr {
            MapRepr::ClosedForm { .. } => "closed-form",
            MapRepr::Affine { .. } => "affine",
            MapRepr::Custom(_) => "custom",
            MapRepr::Composition(_) => "composition",
            MapRepr::NumericInverse(_) => "numeric-inverse",
        };
        write!(
            f,
            "ChartMap[{kind}: {} -> {}]",
            self.source.dim(),
            self.target.dim()
        )
    }
}

impl ChartMap {
    /// Closed-form map whose components are expressions over the source
    /// chart variables; the Jacobian is symbolic.
    pub fn closed_form(source: Chart, target: Chart, exprs: Vec<Expr>) -> Result<Self> {
        if exprs.len() != target.dim() {
            return Err(Error::InvalidInput(format!(
                "map has {} components, target chart has dimension {}",
                exprs.len(),
                target.dim()
            )));
        }
        for e in &exprs {
            if let Some(v) = e.max_var() {
                if v >= source.dim() {
                    return Err(Error::InvalidInput(
                        "map component references a variable outside the source chart".into(),
                    ));
                }
            }
        }
        let jac = exprs
            .iter()
            .map(|e| (0..source.dim()).map(|k| e.differentiate(k)).collect())
            .collect();
        let h_jac = default_h_jac(&source);
        Ok(Self {
            source,
            target,
            repr: MapRepr::ClosedForm { exprs, jac },
            h_jac,
        })
    }

    pub fn identity(chart: Chart) -> Self {
        let n = chart.dim();
        let h_jac = default_h_jac(&chart);
        Self {
            source: chart.clone(),
            target: chart,
            repr: MapRepr::Affine {
                a: DMatrix::identity(n, n),
                b: DVector::zeros(n),
            },
            h_jac,
        }
    }

    /// x -> A x + b.
    pub fn affine(source: Chart, target: Chart, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let h_jac = default_h_jac(&source);
        Self {
            source,
            target,
            repr: MapRepr::Affine { a, b },
            h_jac,
        }
    }

    /// Map backed by an arbitrary pointwise evaluator (flows, potentials).
    pub fn custom(source: Chart, target: Chart, map: Arc<dyn PointMap>) -> Self {
        let h_jac = default_h_jac(&source);
        Self {
            source,
            target,
            repr: MapRepr::Custom(map),
            h_jac,
        }
    }

    /// `self` followed by `then` (so `then.source` must be `self.target`).
    pub fn and_then(self, then: ChartMap) -> ChartMap {
        let source = self.source.clone();
        let target = then.target.clone();
        let h_jac = self.h_jac;
        let mut stages = match self.repr {
            MapRepr::Composition(v) => v,
            _ => vec![self],
        };
        match then.repr {
            MapRepr::Composition(v) => stages.extend(v),
            _ => stages.push(then),
        }
        ChartMap {
            source,
            target,
            repr: MapRepr::Composition(stages),
            h_jac,
        }
    }

    /// Numeric inverse via Newton iteration on `self`.
    pub fn inverse(&self) -> ChartMap {
        match &self.repr {
            MapRepr::Affine { a, b } => {
                let a_inv = a
                    .clone()
                    .try_inverse()
                    .expect("affine chart map with singular matrix");
                let b_inv = -&a_inv * b;
                ChartMap::affine(self.target.clone(), self.source.clone(), a_inv, b_inv)
            }
            _ => ChartMap {
                source: self.target.clone(),
                target: self.source.clone(),
                repr: MapRepr::NumericInverse(Box::new(self.clone())),
                h_jac: default_h_jac(&self.target),
            },
        }
    }

    pub fn source(&self) -> &Chart {
        &self.source
    }

    pub fn target(&self) -> &Chart {
        &self.target
    }

    pub fn with_h_jac(mut self, h: f64) -> Self {
        self.h_jac = h;
        self
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.repr {
            MapRepr::ClosedForm { exprs, .. } => {
                exprs.iter().map(|e| Ok(e.eval(x)?)).collect()
            }
            MapRepr::Affine { a, b } => {
                let v = a * DVector::from_row_slice(x) + b;
                Ok(v.iter().copied().collect())
            }
            MapRepr::Custom(map) => map.apply(x),
            MapRepr::Composition(stages) => {
                let mut cur = x.to_vec();
                for stage in stages {
                    cur = stage.apply(&cur)?;
                }
                Ok(cur)
            }
            MapRepr::NumericInverse(inner) => inner.invert_at(x, None),
        }
    }

    /// Jacobian d(map_i)/d(x_k): symbolic for closed forms, exact for affine
    /// maps and point maps that provide one, chain rule for compositions, and
    /// central differences with step `h_jac` otherwise.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        match &self.repr {
            MapRepr::ClosedForm { jac, .. } => {
                let m = jac.len();
                let n = self.source.dim();
                let mut out = DMatrix::zeros(m, n);
                for (i, row) in jac.iter().enumerate() {
                    for (k, e) in row.iter().enumerate() {
                        out[(i, k)] = e.eval(x)?;
                    }
                }
                Ok(out)
            }
            MapRepr::Affine { a, .. } => Ok(a.clone()),
            MapRepr::Custom(map) => match map.exact_jacobian(x) {
                Some(j) => j,
                None => self.jacobian_central(x),
            },
            MapRepr::Composition(stages) => {
                let mut point = x.to_vec();
                let mut total: Option<DMatrix<f64>> = None;
                for stage in stages {
                    let j = stage.jacobian(&point)?;
                    total = Some(match total {
                        None => j.clone(),
                        Some(t) => &j * t,
                    });
                    point = stage.apply(&point)?;
                }
                Ok(total.expect("empty composition"))
            }
            MapRepr::NumericInverse(inner) => {
                let pre = inner.invert_at(x, None)?;
                let j = inner.jacobian(&pre)?;
                j.try_inverse()
                    .ok_or_else(|| Error::Singular("Jacobian of inverse map".into()))
            }
        }
    }

    fn jacobian_central(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.source.dim();
        let m = self.target.dim();
        let h = self.h_jac;
        let mut out = DMatrix::zeros(m, n);
        for k in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let fp = self.apply(&xp)?;
            let fm = self.apply(&xm)?;
            for i in 0..m {
                out[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        Ok(out)
    }

    /// Solves map(x) = y by damped Newton iteration.
    pub fn invert_at(&self, y: &[f64], seed: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut x = match seed {
            Some(s) => s.to_vec(),
            None => {
                // seed from the target value when the map is near-identity,
                // else from the source base point
                if self.source.dim() == self.target.dim() && self.source.contains(y, 0.5) {
                    y.to_vec()
                } else {
                    self.source.base().to_vec()
                }
            }
        };
        let scale = 1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let tol = 1e-13 * scale;
        let mut residual = sub(&self.apply(&x)?, y);
        let mut rnorm = norm(&residual);
        for _ in 0..60 {
            if rnorm <= tol {
                return Ok(x);
            }
            let j = self.jacobian(&x)?;
            let delta = j
                .lu()
                .solve(&DVector::from_row_slice(&residual))
                .ok_or_else(|| Error::Singular("Newton step for map inversion".into()))?;
            let mut damping = 1.0;
            let mut improved = false;
            for _ in 0..25 {
                let cand: Vec<f64> = x
                    .iter()
                    .zip(delta.iter())
                    .map(|(xi, di)| xi - damping * di)
                    .collect();
                if let Ok(fc) = self.apply(&cand) {
                    let r = sub(&fc, y);
                    let rn = norm(&r);
                    if rn < rnorm {
                        x = cand;
                        residual = r;
                        rnorm = rn;
                        improved = true;
                        break;
                    }
                }
                damping *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if rnorm <= 1e-9 * scale {
            return Ok(x);
        }
        Err(Error::Construction(format!(
            "Newton inversion did not converge (residual {rnorm:.3e} at target {y:?})"
        )))
    }

    /// Invertibility certificate: min |det J| over an axis-uniform sample
    /// grid of the source box.
    pub fn invertibility_certificate(&self, res: usize) -> Result<InvertibilityCertificate> {
        let grid = self.source.grid(res);
        let mut min_abs_det = f64::INFINITY;
        for p in grid.points() {
            let j = self.jacobian(&p)?;
            min_abs_det = min_abs_det.min(j.determinant().abs());
        }
        Ok(InvertibilityCertificate {
            min_abs_det,
            resolution: res,
        })
    }

    /// Samples the map over a grid of the source box (for export).
    pub fn sample_on(&self, grid: &Grid) -> Result<Vec<Vec<f64>>> {
        grid.points().iter().map(|p| self.apply(p)).collect()
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct InvertibilityCertificate {
    pub min_abs_det: f64,
    pub resolution: usize,
}

impl InvertibilityCertificate {
    pub fn passes(&self, jac_min: f64) -> bool {
        self.min_abs_det >= jac_min
    }
}

fn default_h_jac(chart: &Chart) -> f64 {
    1e-5 * chart.diameter()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Pullback of a form living on the map's target: J^T B(phi(q)) J evaluated
/// at a source point q.
pub fn pullback_at(form: &dyn MatrixField, map: &ChartMap, q: &[f64]) -> Result<DMatrix<f64>> {
    let j = map.jacobian(q)?;
    let image = map.apply(q)?;
    let b = form.value_at(&image)?;
    Ok(j.transpose() * b * j)
}

/// Components in map coordinates of a form living on the map's source:
/// K^T B(x) K with K = J(x)^{-1}, evaluated at a source point x. This is the
/// pullback under the (unformed) inverse of a forward map.
pub fn components_via_forward(
    form: &dyn MatrixField,
    map: &ChartMap,
    x: &[f64],
) -> Result<DMatrix<f64>> {
    let j = map.jacobian(x)?;
    let k = j
        .try_inverse()
        .ok_or_else(|| Error::Singular("forward chart Jacobian".into()))?;
    let b = form.value_at(x)?;
    Ok(k.transpose() * b * k)
}
