//! Tensor-field data model: expression matrices, symmetric/skew splitting,
//! exterior derivative of 2-forms, Lie brackets of vector fields.

use crate::chart::{Chart, Grid};
use crate::error::{Error, Result};
use crate::expr::Expr;
use nalgebra::DMatrix;

/// Square matrix of expressions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprMatrix {
    n: usize,
    entries: Vec<Expr>,
}

impl ExprMatrix {
    pub fn from_rows(rows: Vec<Vec<Expr>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("expression matrix must be square".into()));
        }
        Ok(Self {
            n,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: (0..n * n).map(|_| Expr::zero()).collect(),
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Expr) -> Self {
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(f(i, j));
            }
        }
        Self { n, entries }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.n + j]
    }

    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out[(i, j)] = self.entry(i, j).eval(x)?;
            }
        }
        Ok(out)
    }

    /// Entry-wise partial derivative along axis `k`.
    pub fn deriv_axis(&self, k: usize) -> ExprMatrix {
        ExprMatrix::from_fn(self.n, |i, j| self.entry(i, j).differentiate(k))
    }

    pub fn transpose(&self) -> ExprMatrix {
        ExprMatrix::from_fn(self.n, |i, j| self.entry(j, i).clone())
    }

    pub fn max_var(&self) -> Option<usize> {
        self.entries.iter().filter_map(Expr::max_var).max()
    }

    /// Largest |entry| over the grid.
    pub fn max_abs_on(&self, grid: &Grid) -> Result<f64> {
        let mut max = 0.0f64;
        for p in grid.points() {
            let m = self.eval(&p)?;
            max = max.max(m.abs().max());
        }
        Ok(max)
    }
}

/// General bilinear form over a chart, with its symmetric and skew views.
#[derive(Debug, Clone)]
pub struct BilinearFormField {
    chart: Chart,
    entries: ExprMatrix,
    sym: ExprMatrix,
    skew: ExprMatrix,
}

/// g = (B + Bt)/2, omega = (B - Bt)/2.
pub fn split(b: &ExprMatrix) -> (ExprMatrix, ExprMatrix) {
    let half = Expr::rational(1, 2);
    let g = ExprMatrix::from_fn(b.dim(), |i, j| {
        Expr::mul(
            half.clone(),
            Expr::add(b.entry(i, j).clone(), b.entry(j, i).clone()),
        )
    });
    let w = ExprMatrix::from_fn(b.dim(), |i, j| {
        Expr::mul(
            half.clone(),
            Expr::sub(b.entry(i, j).clone(), b.entry(j, i).clone()),
        )
    });
    (g, w)
}

impl BilinearFormField {
    pub fn new(chart: Chart, entries: ExprMatrix) -> Result<Self> {
        if entries.dim() != chart.dim() {
            return Err(Error::InvalidInput(format!(
                "form is {}x{} but chart has dimension {}",
                entries.dim(),
                entries.dim(),
                chart.dim()
            )));
        }
        if let Some(v) = entries.max_var() {
            if v >= chart.dim() {
                return Err(Error::InvalidInput(
                    "form entries reference variables outside the chart".into(),
                ));
            }
        }
        let (sym, skew) = split(&entries);
        Ok(Self {
            chart,
            entries,
            sym,
            skew,
        })
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn entries(&self) -> &ExprMatrix {
        &self.entries
    }

    /// Symmetric part g.
    pub fn g(&self) -> &ExprMatrix {
        &self.sym
    }

    /// Skew part omega.
    pub fn omega(&self) -> &ExprMatrix {
        &self.skew
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }
}

/// Vector field with expression components v^i.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<Expr>,
}

impl VectorField {
    pub fn new(components: Vec<Expr>) -> Self {
        Self { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, i: usize) -> &Expr {
        &self.components[i]
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.components.iter().map(|c| Ok(c.eval(x)?)).collect()
    }
}

/// Covector field: symbolic components or pointwise samples on a grid.
#[derive(Debug, Clone)]
pub enum CovectorField {
    Symbolic(Vec<Expr>),
    Sampled { grid: Grid, values: Vec<Vec<f64>> },
}

impl CovectorField {
    pub fn dim(&self) -> usize {
        match self {
            CovectorField::Symbolic(c) => c.len(),
            CovectorField::Sampled { grid, .. } => grid.dim(),
        }
    }
}

/// [u,v]^i = sum_s (u^s dv^i/dx^s - v^s du^i/dx^s).
pub fn lie_bracket(u: &VectorField, v: &VectorField) -> VectorField {
    let n = u.dim();
    assert_eq!(n, v.dim(), "lie bracket of fields over different charts");
    let components = (0..n)
        .map(|i| {
            let mut terms = Vec::with_capacity(2 * n);
            for s in 0..n {
                terms.push(Expr::mul(
                    u.component(s).clone(),
                    v.component(i).differentiate(s),
                ));
                terms.push(Expr::neg(Expr::mul(
                    v.component(s).clone(),
                    u.component(i).differentiate(s),
                )));
            }
            Expr::sum(terms)
        })
        .collect();
    VectorField::new(components)
}

/// (d theta)_{ij} = d_i theta_j - d_j theta_i for a symbolic 1-form.
pub fn d_one_form(theta: &[Expr]) -> ExprMatrix {
    let n = theta.len();
    ExprMatrix::from_fn(n, |i, j| {
        Expr::sub(theta[j].differentiate(i), theta[i].differentiate(j))
    })
}

/// Coefficients of d(omega) over all index triples i < j < k.
#[derive(Debug, Clone)]
pub struct TwoFormDerivative {
    pub triples: Vec<(usize, usize, usize, Expr)>,
}

/// Cyclic sum d_k w_ij + d_i w_jk + d_j w_ki for every triple i<j<k.
pub fn exterior_derivative_2form(omega: &ExprMatrix) -> TwoFormDerivative {
    let n = omega.dim();
    let mut triples = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let coeff = Expr::sum(vec![
                    omega.entry(i, j).differentiate(k),
                    omega.entry(j, k).differentiate(i),
                    omega.entry(k, i).differentiate(j),
                ]);
                triples.push((i, j, k, coeff));
            }
        }
    }
    TwoFormDerivative { triples }
}

impl TwoFormDerivative {
    /// Largest |coefficient| over the grid; vacuously zero when n < 3.
    pub fn max_abs_on(&self, grid: &Grid) -> Result<f64> {
        let mut max = 0.0f64;
        for p in grid.points() {
            for (_, _, _, coeff) in &self.triples {
                max = max.max(coeff.eval(&p)?.abs());
            }
        }
        Ok(max)
    }

    pub fn is_closed_on(&self, grid: &Grid, tol: f64) -> Result<bool> {
        Ok(self.max_abs_on(grid)? <= tol)
    }
}

/// Pointwise-evaluable square-matrix field. Symbolic fields override the
/// derivative with the exact one; numeric fields fall back to central
/// differences.
pub trait MatrixField: Sync {
    fn dim(&self) -> usize;
    fn value_at(&self, x: &[f64]) -> Result<DMatrix<f64>>;

    fn deriv_at(&self, x: &[f64], axis: usize, h: f64) -> Result<DMatrix<f64>> {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[axis] += h;
        xm[axis] -= h;
        let vp = self.value_at(&xp)?;
        let vm = self.value_at(&xm)?;
        Ok((vp - vm) / (2.0 * h))
    }
}

/// Pointwise-evaluable vector field (numeric frames, Hamiltonian fields).
pub trait VectorFieldEval: Sync + Send {
    fn dim(&self) -> usize;
    fn value_at(&self, x: &[f64]) -> Result<nalgebra::DVector<f64>>;
}

impl VectorFieldEval for VectorField {
    fn dim(&self) -> usize {
        self.components.len()
    }

    fn value_at(&self, x: &[f64]) -> Result<nalgebra::DVector<f64>> {
        Ok(nalgebra::DVector::from_vec(self.eval(x)?))
    }
}

/// Commutator [u, v] of two pointwise fields by central differences.
pub fn numeric_bracket(
    u: &dyn VectorFieldEval,
    v: &dyn VectorFieldEval,
    x: &[f64],
    h: f64,
) -> Result<nalgebra::DVector<f64>> {
    let n = u.dim();
    let uv = u.value_at(x)?;
    let vv = v.value_at(x)?;
    let mut out = nalgebra::DVector::zeros(n);
    for s in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[s] += h;
        xm[s] -= h;
        let dv = (v.value_at(&xp)? - v.value_at(&xm)?) / (2.0 * h);
        let du = (u.value_at(&xp)? - u.value_at(&xm)?) / (2.0 * h);
        out += dv * uv[s] - du * vv[s];
    }
    Ok(out)
}

/// Constant matrix as a field.
#[derive(Debug, Clone)]
pub struct ConstantMatrixField(pub DMatrix<f64>);

impl MatrixField for ConstantMatrixField {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn value_at(&self, _x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.0.clone())
    }

    fn deriv_at(&self, _x: &[f64], _axis: usize, _h: f64) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(self.0.nrows(), self.0.ncols()))
    }
}

/// Matrix field backed by a closure (numeric pullbacks, reduced forms).
pub struct ClosureMatrixField<F>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>> + Sync,
{
    pub n: usize,
    pub f: F,
}

impl<F> MatrixField for ClosureMatrixField<F>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>> + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }

    fn value_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        (self.f)(x)
    }
}

/// Symbolic matrix field with precomputed exact derivatives.
#[derive(Debug, Clone)]
pub struct SymbolicMatrixField {
    matrix: ExprMatrix,
    derivs: Vec<ExprMatrix>,
}

impl SymbolicMatrixField {
    pub fn new(matrix: ExprMatrix, n_vars: usize) -> Self {
        let derivs = (0..n_vars).map(|k| matrix.deriv_axis(k)).collect();
        Self { matrix, derivs }
    }

    pub fn matrix(&self) -> &ExprMatrix {
        &self.matrix
    }

    pub fn exact_deriv(&self, x: &[f64], axis: usize) -> Result<DMatrix<f64>> {
        self.derivs[axis].eval(x)
    }
}

impl MatrixField for SymbolicMatrixField {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn value_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.matrix.eval(x)
    }

    fn deriv_at(&self, x: &[f64], axis: usize, _h: f64) -> Result<DMatrix<f64>> {
        self.exact_deriv(x, axis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn chart2() -> Chart {
        Chart::new(
            vec!["x".into(), "y".into()],
            vec![(-1.0, 1.0), (-1.0, 1.0)],
            vec![0.0, 0.0],
        )
        .unwrap()
    }

    fn chart3() -> Chart {
        Chart::new(
            vec!["x".into(), "y".into(), "z".into()],
            vec![(-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
            vec![0.0, 0.0, 0.0],
        )
        .unwrap()
    }

    fn em(chart: &Chart, rows: &[&[&str]]) -> ExprMatrix {
        ExprMatrix::from_rows(
            rows.iter()
                .map(|r| {
                    r.iter()
                        .map(|s| parse(s, chart.names()).unwrap())
                        .collect()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn split_constant_form() {
        let c = chart2();
        let b = em(&c, &[&["1", "1"], &["-1", "0"]]);
        let (g, w) = split(&b);
        let gm = g.eval(&[0.3, 0.4]).unwrap();
        let wm = w.eval(&[0.3, 0.4]).unwrap();
        assert_eq!(gm, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(wm, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
    }

    #[test]
    fn split_recomposes_exactly() {
        let c = chart2();
        let b = em(&c, &[&["x^2", "x * y + 1"], &["y - x", "sin(x)"]]);
        let (g, w) = split(&b);
        for p in c.grid(5).points() {
            let bm = b.eval(&p).unwrap();
            let gm = g.eval(&p).unwrap();
            let wm = w.eval(&p).unwrap();
            let diff = (&gm + &wm) - bm;
            assert!(diff.abs().max() < 1e-15);
            // symmetry / antisymmetry
            assert!((&gm - gm.transpose()).abs().max() < 1e-15);
            assert!((&wm + wm.transpose()).abs().max() < 1e-15);
        }
    }

    #[test]
    fn symmetric_input_has_zero_skew() {
        let c = chart2();
        let b = em(&c, &[&["x^2", "x * y"], &["x * y", "y^2"]]);
        let (_, w) = split(&b);
        assert_eq!(w.max_abs_on(&c.grid(5)).unwrap(), 0.0);
    }

    #[test]
    fn example_fixture_splits_into_metric_and_area_form() {
        // B = [[1, h(x)], [-h(x), 0]] with h = 1 + x^2
        let c = chart2();
        let b = em(&c, &[&["1", "1 + x^2"], &["-(1 + x^2)", "0"]]);
        let (g, w) = split(&b);
        let p = [0.5, -0.25];
        let gm = g.eval(&p).unwrap();
        let wm = w.eval(&p).unwrap();
        assert_eq!(gm, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let h = 1.25;
        assert_eq!(wm, DMatrix::from_row_slice(2, 2, &[0.0, h, -h, 0.0]));
    }

    #[test]
    fn d_omega_vanishes_for_constant_form() {
        let c = chart3();
        let w = em(&c, &[&["0", "2", "-1"], &["-2", "0", "3"], &["1", "-3", "0"]]);
        let d = exterior_derivative_2form(&w);
        assert_eq!(d.max_abs_on(&c.grid(3)).unwrap(), 0.0);
    }

    #[test]
    fn two_d_form_is_vacuously_closed() {
        let c = chart2();
        let w = em(&c, &[&["0", "1 + x^2"], &["-(1 + x^2)", "0"]]);
        let d = exterior_derivative_2form(&w);
        assert!(d.triples.is_empty());
        assert!(d.is_closed_on(&c.grid(3), 0.0).unwrap());
    }

    #[test]
    fn d_omega_detects_non_closed_form() {
        // omega = x dz ^ dy: w_32 = x, w_23 = -x; cyclic sum on (1,2,3) = -1
        let c = chart3();
        let w = em(&c, &[&["0", "0", "0"], &["0", "0", "-x"], &["0", "x", "0"]]);
        let d = exterior_derivative_2form(&w);
        assert_eq!(d.triples.len(), 1);
        let val = d.triples[0].3.eval(&[0.3, 0.1, -0.2]).unwrap();
        assert!((val - (-1.0)).abs() < 1e-15);
    }

    #[test]
    fn lie_bracket_of_coordinate_fields_vanishes() {
        let dx = VectorField::new(vec![Expr::one(), Expr::zero()]);
        let dy = VectorField::new(vec![Expr::zero(), Expr::one()]);
        let br = lie_bracket(&dx, &dy);
        assert!(br.components().iter().all(Expr::is_zero));
    }

    #[test]
    fn lie_bracket_hand_example() {
        // [x d_y, y d_x] = x d_x - y d_y
        let c = chart2();
        let u = VectorField::new(vec![
            Expr::zero(),
            parse("x", c.names()).unwrap(),
        ]);
        let v = VectorField::new(vec![
            parse("y", c.names()).unwrap(),
            Expr::zero(),
        ]);
        let br = lie_bracket(&u, &v);
        for p in c.grid(4).points() {
            let got = br.eval(&p).unwrap();
            assert!((got[0] - p[0]).abs() < 1e-15);
            assert!((got[1] + p[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn dd_is_zero_for_random_one_forms() {
        let c = chart3();
        let theta = vec![
            parse("x * y + sin(z)", c.names()).unwrap(),
            parse("exp(x) - y^2 * z", c.names()).unwrap(),
            parse("cos(x * y) + z^3", c.names()).unwrap(),
        ];
        let dtheta = d_one_form(&theta);
        let dd = exterior_derivative_2form(&dtheta);
        let max = dd.max_abs_on(&c.grid(4)).unwrap();
        assert!(max <= 1e-9, "d(d theta) = {max}");
    }
}
