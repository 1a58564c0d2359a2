//! Skew-part analysis: inversion of symplectic forms into Poisson bivectors,
//! the Jacobi identity residual, Poisson brackets, Hamiltonian vector fields,
//! and the two equivalent parallelism conditions coupling g and omega.

use crate::chart::Grid;
use crate::connection::{ChristoffelFirst, ConnectionEval};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::forms::{ExprMatrix, MatrixField, SymbolicMatrixField, VectorField};
use crate::kernelrank::condition_number;
use nalgebra::{DMatrix, DVector};

/// Canonical symplectic matrix [[0, I], [-I, 0]] in even dimension n.
pub fn canonical_omega(n: usize) -> DMatrix<f64> {
    assert!(n % 2 == 0, "canonical symplectic form needs even dimension");
    let k = n / 2;
    let mut w = DMatrix::zeros(n, n);
    for i in 0..k {
        w[(i, k + i)] = 1.0;
        w[(k + i, i)] = -1.0;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BivectorProvenance {
    InverseOfOmega,
    UserSupplied,
}

/// Pointwise Poisson bivector value.
#[derive(Debug, Clone)]
pub struct Bivector {
    pub matrix: DMatrix<f64>,
    pub provenance: BivectorProvenance,
}

/// Inverts omega at a point; the result is skew-symmetrized to kill
/// roundoff. Fails when the condition number exceeds `cond_max`.
pub fn invert_omega(omega: &DMatrix<f64>, cond_max: f64) -> Result<Bivector> {
    let cond = condition_number(omega);
    if !(cond <= cond_max) {
        return Err(Error::Singular(format!(
            "omega is numerically singular (condition {cond:.3e})"
        )));
    }
    let inv = omega
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("omega not invertible".into()))?;
    let skew = (&inv - inv.transpose()) * 0.5;
    Ok(Bivector {
        matrix: skew,
        provenance: BivectorProvenance::InverseOfOmega,
    })
}

/// The dual bivector P(x) = omega(x)^{-1} as a matrix field; its derivative
/// is exact through d_k P = -P (d_k omega) P.
pub struct InverseOmegaField<'a> {
    omega: &'a SymbolicMatrixField,
    cond_max: f64,
}

impl<'a> InverseOmegaField<'a> {
    pub fn new(omega: &'a SymbolicMatrixField, cond_max: f64) -> Self {
        Self { omega, cond_max }
    }
}

impl<'a> MatrixField for InverseOmegaField<'a> {
    fn dim(&self) -> usize {
        self.omega.dim()
    }

    fn value_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(invert_omega(&self.omega.value_at(x)?, self.cond_max)?.matrix)
    }

    fn deriv_at(&self, x: &[f64], axis: usize, _h: f64) -> Result<DMatrix<f64>> {
        let p = self.value_at(x)?;
        let dw = self.omega.exact_deriv(x, axis)?;
        Ok(-(&p * dw * &p))
    }
}

/// Jacobi residual: max over index triples i<j<k and grid points of
/// |sum_s (P^sk d_s P^ij + P^si d_s P^jk + P^sj d_s P^ki)|.
pub fn jacobi_residual(p_field: &dyn MatrixField, grid: &Grid, h: f64) -> Result<f64> {
    let n = p_field.dim();
    let mut max = 0.0f64;
    for pt in grid.points() {
        let p = p_field.value_at(&pt)?;
        let dp: Vec<DMatrix<f64>> = (0..n)
            .map(|s| p_field.deriv_at(&pt, s, h))
            .collect::<Result<_>>()?;
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    let mut sum = 0.0;
                    for s in 0..n {
                        sum += p[(s, k)] * dp[s][(i, j)]
                            + p[(s, i)] * dp[s][(j, k)]
                            + p[(s, j)] * dp[s][(k, i)];
                    }
                    max = max.max(sum.abs());
                }
            }
        }
    }
    Ok(max)
}

/// {f, h} = sum_ij d_i f d_j h P^ij at a point.
pub fn poisson_bracket(f: &Expr, h: &Expr, p: &DMatrix<f64>, x: &[f64]) -> Result<f64> {
    let n = p.nrows();
    let mut df = DVector::zeros(n);
    let mut dh = DVector::zeros(n);
    for i in 0..n {
        df[i] = f.differentiate(i).eval(x)?;
        dh[i] = h.differentiate(i).eval(x)?;
    }
    Ok((df.transpose() * p * dh)[(0, 0)])
}

/// Hamiltonian vector field of f: X_f^i = sum_s P^si d_s f.
#[derive(Debug, Clone)]
pub struct HamiltonianField {
    pub f: Expr,
    grad: Vec<Expr>,
}

impl HamiltonianField {
    pub fn new(f: Expr, n: usize) -> Self {
        let grad = (0..n).map(|i| f.differentiate(i)).collect();
        Self { f, grad }
    }

    pub fn gradient_at(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.grad.len());
        for (i, e) in self.grad.iter().enumerate() {
            out[i] = e.eval(x)?;
        }
        Ok(out)
    }

    /// Components against a pointwise bivector value.
    pub fn components_at(&self, p: &DMatrix<f64>, x: &[f64]) -> Result<DVector<f64>> {
        let df = self.gradient_at(x)?;
        Ok(p.transpose() * df)
    }

    /// Symbolic components when the bivector itself is symbolic.
    pub fn symbolic_components(&self, p: &ExprMatrix) -> VectorField {
        let n = p.dim();
        VectorField::new(
            (0..n)
                .map(|i| {
                    Expr::sum(
                        (0..n)
                            .map(|s| Expr::mul(p.entry(s, i).clone(), self.grad[s].clone()))
                            .collect(),
                    )
                })
                .collect(),
        )
    }
}

/// Residual of the first mixed parallelism condition:
/// max |(g P (nabla_k omega) P g)_ij| over the grid, with
/// nabla_k omega_bc = d_k omega_bc - Gamma^s_{bk} omega_sc - Gamma^s_{ck} omega_bs
/// and Gamma the least-norm connection for g.
pub fn parallel1_residual(
    g: &ExprMatrix,
    omega: &SymbolicMatrixField,
    conn: &dyn ConnectionEval,
    grid: &Grid,
    cond_max: f64,
) -> Result<f64> {
    let n = g.dim();
    let mut max = 0.0f64;
    for x in grid.points() {
        let gm = g.eval(&x)?;
        let wm = omega.value_at(&x)?;
        let p = invert_omega(&wm, cond_max)?.matrix;
        let gamma = conn.gamma_at(&x)?;
        for k in 0..n {
            let dw = omega.exact_deriv(&x, k)?;
            let mut nabla = DMatrix::zeros(n, n);
            for b in 0..n {
                for c in 0..n {
                    let mut corr = 0.0;
                    for s in 0..n {
                        corr += gamma.get(s, b, k) * wm[(s, c)] + gamma.get(s, c, k) * wm[(b, s)];
                    }
                    nabla[(b, c)] = dw[(b, c)] - corr;
                }
            }
            let res = &gm * &p * nabla * &p * &gm;
            max = max.max(res.abs().max());
        }
    }
    Ok(max)
}

/// Residual of the second mixed parallelism condition:
/// max |(g (d_k P) g)_ij + sum_s ((gP)_is Gamma_{ks,j} + (Pg)_sj Gamma_{ks,i})|.
/// Only first-kind Christoffel symbols enter.
pub fn parallel_pg_residual(
    g: &ExprMatrix,
    gamma1: &ChristoffelFirst,
    p_field: &dyn MatrixField,
    grid: &Grid,
    h: f64,
) -> Result<f64> {
    let n = g.dim();
    let mut max = 0.0f64;
    for x in grid.points() {
        let gm = g.eval(&x)?;
        let p = p_field.value_at(&x)?;
        let gp = &gm * &p; // (gP)_i^s
        let pg = &p * &gm; // (Pg)^s_j
        let g1 = gamma1.eval(&x)?;
        let gamma = |k: usize, s: usize, j: usize| -> f64 {
            g1[crate::connection::pair_index(n, k, s) * n + j]
        };
        for k in 0..n {
            let dp = p_field.deriv_at(&x, k, h)?;
            let first = &gm * dp * &gm;
            for i in 0..n {
                for j in 0..n {
                    let mut second = 0.0;
                    for s in 0..n {
                        second += gp[(i, s)] * gamma(k, s, j) + pg[(s, j)] * gamma(k, s, i);
                    }
                    max = max.max((first[(i, j)] + second).abs());
                }
            }
        }
    }
    Ok(max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::Chart;
    use crate::connection::ConnectionField;
    use crate::expr::parse;
    use crate::forms::lie_bracket;
    use approx::assert_relative_eq;

    fn ex2_chart() -> Chart {
        Chart::centered(
            vec!["x".into(), "y".into()],
            vec![(-0.5, 0.5), (-0.5, 0.5)],
        )
        .unwrap()
    }

    /// g = dx^2, omega = (1 + x^2) dx ^ dy.
    fn ex2_forms(c: &Chart) -> (ExprMatrix, ExprMatrix) {
        let g = ExprMatrix::from_rows(vec![
            vec![Expr::one(), Expr::zero()],
            vec![Expr::zero(), Expr::zero()],
        ])
        .unwrap();
        let w = ExprMatrix::from_rows(vec![
            vec![Expr::zero(), parse("1 + x^2", c.names()).unwrap()],
            vec![parse("-(1 + x^2)", c.names()).unwrap(), Expr::zero()],
        ])
        .unwrap();
        (g, w)
    }

    #[test]
    fn canonical_inverse_sign_convention() {
        let w = canonical_omega(4);
        let p = invert_omega(&w, 1e8).unwrap().matrix;
        // P = [[0, -I], [I, 0]]
        let mut expected = DMatrix::zeros(4, 4);
        expected[(0, 2)] = -1.0;
        expected[(1, 3)] = -1.0;
        expected[(2, 0)] = 1.0;
        expected[(3, 1)] = 1.0;
        assert!((p - expected).abs().max() < 1e-14);
    }

    #[test]
    fn two_d_inverse_value() {
        // omega = h dx ^ dy with h = 1 + x^2 at x = 2: P^12 = -1/5
        let h = 5.0;
        let w = DMatrix::from_row_slice(2, 2, &[0.0, h, -h, 0.0]);
        let p = invert_omega(&w, 1e8).unwrap().matrix;
        assert_relative_eq!(p[(0, 1)], -0.2);
        assert_relative_eq!(p[(1, 0)], 0.2);
    }

    #[test]
    fn singular_omega_rejected() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        assert!(invert_omega(&w, 1e8).is_err());
    }

    /// The staircase bivector with k' = 1, k'' = 2, n = 8 and entries
    /// P56 = 1, P57 = 2, P58 = 3, P67 = 4, P68 = 5, P78 = 6.
    pub(crate) fn staircase_p8() -> DMatrix<f64> {
        let mut p = DMatrix::zeros(8, 8);
        let mut set = |i: usize, j: usize, v: f64| {
            p[(i - 1, j - 1)] = v;
            p[(j - 1, i - 1)] = -v;
        };
        set(1, 2, -1.0);
        set(3, 5, -1.0);
        set(4, 6, -1.0);
        set(5, 6, 1.0);
        set(5, 7, 2.0);
        set(5, 8, 3.0);
        set(6, 7, 4.0);
        set(6, 8, 5.0);
        set(7, 8, 6.0);
        p
    }

    #[test]
    fn staircase_inverse_matches_expected_zero_pattern() {
        let p = staircase_p8();
        let w = invert_omega(&p, 1e8).unwrap().matrix;
        // expected nonzero positions (1-based, upper triangle) of the inverse:
        // (1,2), (3,4), (3,5), (3,7), (3,8), (4,6), (4,7), (4,8), (7,8)
        let nonzero: &[(usize, usize)] = &[
            (1, 2),
            (3, 4),
            (3, 5),
            (3, 7),
            (3, 8),
            (4, 6),
            (4, 7),
            (4, 8),
            (7, 8),
        ];
        for i in 1..=8 {
            for j in (i + 1)..=8 {
                let v = w[(i - 1, j - 1)];
                if nonzero.contains(&(i, j)) {
                    continue;
                }
                assert!(
                    v.abs() < 1e-9,
                    "expected zero at ({i},{j}), got {v}"
                );
            }
        }
        // the canonical pairings carry fixed values
        assert_relative_eq!(w[(0, 1)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(w[(2, 4)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(w[(3, 5)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobi_zero_for_constant_bivector() {
        let c = Chart::centered(
            vec!["x".into(), "y".into(), "z".into()],
            vec![(-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
        )
        .unwrap();
        let p = SymbolicMatrixField::new(
            ExprMatrix::from_rows(vec![
                vec![Expr::zero(), Expr::one(), Expr::integer(2)],
                vec![Expr::integer(-1), Expr::zero(), Expr::integer(3)],
                vec![Expr::integer(-2), Expr::integer(-3), Expr::zero()],
            ])
            .unwrap(),
            3,
        );
        assert_eq!(jacobi_residual(&p, &c.grid(3), 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn jacobi_detects_broken_bivector() {
        // P12 = 1, P13 = 0, P23 = f: Poisson iff df/dx2 = 0
        let c = Chart::centered(
            vec!["x1".into(), "x2".into(), "x3".into()],
            vec![(-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
        )
        .unwrap();
        let mk = |f: &str| {
            SymbolicMatrixField::new(
                ExprMatrix::from_rows(vec![
                    vec![Expr::zero(), Expr::one(), Expr::zero()],
                    vec![Expr::integer(-1), Expr::zero(), parse(f, c.names()).unwrap()],
                    vec![Expr::zero(), parse(&format!("-({f})"), c.names()).unwrap(), Expr::zero()],
                ])
                .unwrap(),
                3,
            )
        };
        let good = mk("x1");
        assert!(jacobi_residual(&good, &c.grid(3), 1e-5).unwrap() <= 1e-12);
        let broken = mk("x2");
        let res = jacobi_residual(&broken, &c.grid(3), 1e-5).unwrap();
        assert_relative_eq!(res, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn jacobi_of_dual_of_closed_form() {
        // omega = omega0 + 0.1 z dx ^ dz on a 4D box is closed, so its dual
        // is a Poisson structure
        let c = Chart::centered(
            vec!["x".into(), "y".into(), "z".into(), "w".into()],
            vec![(-0.5, 0.5), (-0.5, 0.5), (-0.5, 0.5), (-0.5, 0.5)],
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
        let omega = SymbolicMatrixField::new(ExprMatrix::from_rows(rows).unwrap(), 4);
        let p = InverseOmegaField::new(&omega, 1e8);
        let res = jacobi_residual(&p, &c.grid(3), 1e-5).unwrap();
        assert!(res <= 1e-6, "jacobi of symplectic dual: {res}");
    }

    #[test]
    fn bracket_values() {
        let c = ex2_chart();
        let p0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let f = parse("x", c.names()).unwrap();
        let h = parse("y", c.names()).unwrap();
        assert_relative_eq!(
            poisson_bracket(&f, &h, &p0, &[0.2, -0.1]).unwrap(),
            1.0
        );
        // {f, f} = 0 by skew symmetry
        let any = parse("sin(x * y) + x^2", c.names()).unwrap();
        assert_eq!(
            poisson_bracket(&any, &any, &p0, &[0.3, 0.4]).unwrap(),
            0.0
        );
    }

    #[test]
    fn delta_identity_of_inverse() {
        let c = ex2_chart();
        let (_, w) = ex2_forms(&c);
        let wf = SymbolicMatrixField::new(w, 2);
        for x in c.grid(4).points() {
            let wm = wf.value_at(&x).unwrap();
            let p = invert_omega(&wm, 1e8).unwrap().matrix;
            let delta = &p * &wm - DMatrix::identity(2, 2);
            assert!(delta.abs().max() <= 1e-9);
            // exactly skew after symmetrization
            let sym = (&p + p.transpose()).abs().max();
            assert_eq!(sym, 0.0);
        }
    }

    #[test]
    fn parallel1_holds_on_example_pair() {
        let c = ex2_chart();
        let (g, w) = ex2_forms(&c);
        let wf = SymbolicMatrixField::new(w, 2);
        let conn = ConnectionField::for_g(g.clone(), 1e-8);
        let res = parallel1_residual(&g, &wf, &conn, &c.grid(5), 1e8).unwrap();
        assert!(res <= 1e-7, "parallel1 residual {res}");
    }

    #[test]
    fn parallel_pg_holds_on_example_pair() {
        let c = ex2_chart();
        let (g, w) = ex2_forms(&c);
        let wf = SymbolicMatrixField::new(w, 2);
        let p = InverseOmegaField::new(&wf, 1e8);
        let gamma1 = ChristoffelFirst::compute(&g);
        let res = parallel_pg_residual(&g, &gamma1, &p, &c.grid(5), 1e-5).unwrap();
        assert!(res <= 1e-7, "parallelPg residual {res}");
    }

    #[test]
    fn parallel_conditions_agree_even_when_nabla_omega_is_nonzero() {
        // g = dx^2 with omega = (1 + y^2) dx ^ dy: nabla omega does not
        // vanish, but both contracted conditions do (rank-one g annihilates
        // the relevant components), and indeed (x, y + y^3/3) flattens the
        // pair.
        let c = ex2_chart();
        let g = ExprMatrix::from_rows(vec![
            vec![Expr::one(), Expr::zero()],
            vec![Expr::zero(), Expr::zero()],
        ])
        .unwrap();
        let w = ExprMatrix::from_rows(vec![
            vec![Expr::zero(), parse("1 + y^2", c.names()).unwrap()],
            vec![parse("-(1 + y^2)", c.names()).unwrap(), Expr::zero()],
        ])
        .unwrap();
        let wf = SymbolicMatrixField::new(w, 2);
        let conn = ConnectionField::for_g(g.clone(), 1e-8);
        // nabla_2 omega_12 = 2y != 0 with the least-norm (zero) connection
        let gamma = conn.gamma_at(&[0.0, 0.3]).unwrap();
        assert_eq!(gamma.max_abs(), 0.0);
        let dw = wf.exact_deriv(&[0.0, 0.3], 1).unwrap();
        assert_relative_eq!(dw[(0, 1)], 0.6);
        // yet both parallelism residuals vanish
        let res1 = parallel1_residual(&g, &wf, &conn, &c.grid(5), 1e8).unwrap();
        assert!(res1 <= 1e-12, "parallel1 {res1}");
        let gamma1 = ChristoffelFirst::compute(&g);
        let p = InverseOmegaField::new(&wf, 1e8);
        let res2 = parallel_pg_residual(&g, &gamma1, &p, &c.grid(5), 1e-5).unwrap();
        assert!(res2 <= 1e-12, "parallelPg {res2}");
    }

    #[test]
    fn hamiltonian_fields_of_constant_bracket_functions_commute() {
        // On the example pair, f1 = x and f2 = -y h(x) have constant
        // brackets; their Hamiltonian fields must commute.
        let c = ex2_chart();
        let (_, w) = ex2_forms(&c);
        // symbolic P = [[0, -1/h], [1/h, 0]]
        let pm = ExprMatrix::from_rows(vec![
            vec![
                Expr::zero(),
                parse("-1 / (1 + x^2)", c.names()).unwrap(),
            ],
            vec![parse("1 / (1 + x^2)", c.names()).unwrap(), Expr::zero()],
        ])
        .unwrap();
        // sanity: P really is the inverse of omega
        let wf = SymbolicMatrixField::new(w, 2);
        for x in c.grid(3).points() {
            let prod = pm.eval(&x).unwrap() * wf.value_at(&x).unwrap();
            assert!((prod - DMatrix::identity(2, 2)).abs().max() <= 1e-12);
        }
        let f1 = HamiltonianField::new(parse("x", c.names()).unwrap(), 2);
        let f2 = HamiltonianField::new(
            parse("-y * (1 + x^2)", c.names()).unwrap(),
            2,
        );
        // brackets are constant on the grid
        let mut brackets = Vec::new();
        for x in c.grid(4).points() {
            let p = pm.eval(&x).unwrap();
            brackets.push(poisson_bracket(&f1.f, &f2.f, &p, &x).unwrap());
        }
        let mean = brackets.iter().sum::<f64>() / brackets.len() as f64;
        let var = brackets
            .iter()
            .map(|b| (b - mean).powi(2))
            .sum::<f64>()
            / brackets.len() as f64;
        assert!(var <= 1e-10, "bracket variance {var}");
        // symbolic commutator vanishes on the grid
        let x1 = f1.symbolic_components(&pm);
        let x2 = f2.symbolic_components(&pm);
        let br = lie_bracket(&x1, &x2);
        for x in c.grid(4).points() {
            let v = br.eval(&x).unwrap();
            let norm = v.iter().map(|t| t.abs()).fold(0.0, f64::max);
            assert!(norm <= 1e-7, "commutator norm {norm}");
        }
    }

    #[test]
    fn hamiltonian_component_identity() {
        let c = ex2_chart();
        let (_, w) = ex2_forms(&c);
        let wf = SymbolicMatrixField::new(w, 2);
        let f = HamiltonianField::new(parse("x^2 - y", c.names()).unwrap(), 2);
        for x in c.grid(3).points() {
            let p = invert_omega(&wf.value_at(&x).unwrap(), 1e8).unwrap().matrix;
            let comp = f.components_at(&p, &x).unwrap();
            // X^i = sum_s P^si df_s
            let df = f.gradient_at(&x).unwrap();
            for i in 0..2 {
                let expected: f64 = (0..2).map(|s| p[(s, i)] * df[s]).sum();
                assert_relative_eq!(comp[i], expected, epsilon = 1e-12);
            }
        }
    }
}
