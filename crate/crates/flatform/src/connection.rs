//! Christoffel symbols of the first kind, the stationarity condition, and
//! minimum-norm solutions of the parallelism systems for g, for omega, and
//! for both jointly.
//!
//! The unknown vector is indexed by (upper index, unordered lower pair), so
//! torsion-freeness is structural rather than a constraint. Solvability is a
//! reported verdict: the least-squares residual against tol_lin * (1 + |rhs|).

use crate::chart::Grid;
use crate::error::Result;
use crate::expr::Expr;
use crate::forms::{ExprMatrix, MatrixField, VectorField};
use crate::kernelrank::kernel_basis_matrix;
use crate::linalg::jacobi_svd;
use nalgebra::{DMatrix, DVector};

/// Number of unordered index pairs (j <= k) in dimension n.
pub fn pair_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Index of the unordered pair {j, k} in the triangular enumeration.
pub fn pair_index(n: usize, j: usize, k: usize) -> usize {
    let (a, b) = if j <= k { (j, k) } else { (k, j) };
    a * n - a * (a + 1) / 2 + b
}

/// Christoffel symbols of the second kind at a point, symmetric in the two
/// lower indices by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Gamma2 {
    n: usize,
    data: Vec<f64>,
}

impl Gamma2 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * pair_count(n)],
        }
    }

    pub fn from_flat(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * pair_count(n));
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[i * pair_count(self.n) + pair_index(self.n, j, k)]
    }

    pub fn add(&mut self, i: usize, j: usize, k: usize, value: f64) {
        self.data[i * pair_count(self.n) + pair_index(self.n, j, k)] += value;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }
}

/// First-kind symbols Gamma_{ij,s} = (d_i g_js + d_j g_is - d_s g_ij) / 2,
/// stored symbolically and symmetric in i <-> j structurally.
#[derive(Debug, Clone)]
pub struct ChristoffelFirst {
    n: usize,
    /// entries[pair(i,j) * n + s]
    entries: Vec<Expr>,
}

impl ChristoffelFirst {
    pub fn compute(g: &ExprMatrix) -> Self {
        let n = g.dim();
        let half = Expr::rational(1, 2);
        let mut entries = Vec::with_capacity(pair_count(n) * n);
        for i in 0..n {
            for j in i..n {
                for s in 0..n {
                    let e = Expr::mul(
                        half.clone(),
                        Expr::sum(vec![
                            g.entry(j, s).differentiate(i),
                            g.entry(i, s).differentiate(j),
                            Expr::neg(g.entry(i, j).differentiate(s)),
                        ]),
                    );
                    entries.push(e);
                }
            }
        }
        Self { n, entries }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize, s: usize) -> &Expr {
        &self.entries[pair_index(self.n, i, j) * self.n + s]
    }

    /// All values at a point, as [pair(i,j)][s].
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.entries.iter().map(|e| Ok(e.eval(x)?)).collect()
    }

    pub fn max_abs_on(&self, grid: &Grid) -> Result<f64> {
        let mut max = 0.0f64;
        for p in grid.points() {
            for v in self.eval(&p)? {
                max = max.max(v.abs());
            }
        }
        Ok(max)
    }
}

/// Result of the stationarity condition: Gamma_{ij,s} v^s = 0 for all kernel
/// vectors v of g.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StationarityReport {
    pub holds: bool,
    pub max_violation: f64,
    pub tolerance: f64,
    pub scale: f64,
}

/// Checks stationarity over the grid. Vacuously holds when the kernel is
/// empty. The tolerance is tol_stat * scale with scale = 1 + max |Gamma1|.
pub fn stationarity_check(
    g: &ExprMatrix,
    gamma1: &ChristoffelFirst,
    grid: &Grid,
    sigma_tol: f64,
    tol_stat: f64,
) -> Result<StationarityReport> {
    let n = g.dim();
    let mut max_violation = 0.0f64;
    let mut scale = 1.0f64;
    for p in grid.points() {
        let g1 = gamma1.eval(&p)?;
        for v in &g1 {
            scale = scale.max(v.abs());
        }
        let gm = g.eval(&p)?;
        let kernel = kernel_basis_matrix(&gm, sigma_tol);
        for col in 0..kernel.ncols() {
            for i in 0..n {
                for j in i..n {
                    let mut sum = 0.0;
                    for s in 0..n {
                        sum += g1[pair_index(n, i, j) * n + s] * kernel[(s, col)];
                    }
                    max_violation = max_violation.max(sum.abs());
                }
            }
        }
    }
    let tolerance = tol_stat * scale;
    Ok(StationarityReport {
        holds: max_violation <= tolerance,
        max_violation,
        tolerance,
        scale,
    })
}

/// Which parallelism constraints a connection solve imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ImposedSystem {
    GOnly,
    OmegaOnly,
    Joint,
}

/// Minimum-norm solve of the parallelism system(s) at one point.
#[derive(Debug, Clone)]
pub struct ConnectionSolution {
    pub gamma: Gamma2,
    pub imposed: ImposedSystem,
    pub residual_g: Option<f64>,
    pub rhs_norm_g: Option<f64>,
    pub residual_omega: Option<f64>,
    pub rhs_norm_omega: Option<f64>,
    /// Numeric rank of the stacked coefficient matrix.
    pub system_rank: usize,
}

impl ConnectionSolution {
    pub fn solvable_g(&self, tol_lin: f64) -> Option<bool> {
        self.residual_g
            .map(|r| r <= tol_lin * (1.0 + self.rhs_norm_g.unwrap_or(0.0)))
    }

    pub fn solvable_omega(&self, tol_lin: f64) -> Option<bool> {
        self.residual_omega
            .map(|r| r <= tol_lin * (1.0 + self.rhs_norm_omega.unwrap_or(0.0)))
    }

    pub fn solvable(&self, tol_lin: f64) -> bool {
        self.solvable_g(tol_lin).unwrap_or(true) && self.solvable_omega(tol_lin).unwrap_or(true)
    }
}

/// Pointwise evaluator of a symmetric connection satisfying the imposed
/// parallelism constraints in the least-norm sense.
pub trait ConnectionEval: Sync {
    fn dim(&self) -> usize;
    fn gamma_at(&self, x: &[f64]) -> Result<Gamma2>;
}

/// Connection field defined by minimum-norm solves of the stacked linear
/// systems. Pure and safe to call from concurrent grid sweeps.
pub struct ConnectionField {
    n: usize,
    g: Option<ExprMatrix>,
    gamma1: Option<ChristoffelFirst>,
    omega: Option<ExprMatrix>,
    omega_derivs: Vec<ExprMatrix>,
    sigma_tol: f64,
}

impl ConnectionField {
    pub fn for_g(g: ExprMatrix, sigma_tol: f64) -> Self {
        let gamma1 = ChristoffelFirst::compute(&g);
        Self {
            n: g.dim(),
            g: Some(g),
            gamma1: Some(gamma1),
            omega: None,
            omega_derivs: Vec::new(),
            sigma_tol,
        }
    }

    pub fn for_omega(omega: ExprMatrix, sigma_tol: f64) -> Self {
        let n = omega.dim();
        let derivs = (0..n).map(|k| omega.deriv_axis(k)).collect();
        Self {
            n,
            g: None,
            gamma1: None,
            omega: Some(omega),
            omega_derivs: derivs,
            sigma_tol,
        }
    }

    pub fn joint(g: ExprMatrix, omega: ExprMatrix, sigma_tol: f64) -> Self {
        let n = g.dim();
        let gamma1 = ChristoffelFirst::compute(&g);
        let derivs = (0..n).map(|k| omega.deriv_axis(k)).collect();
        Self {
            n,
            g: Some(g),
            gamma1: Some(gamma1),
            omega: Some(omega),
            omega_derivs: derivs,
            sigma_tol,
        }
    }

    pub fn imposed(&self) -> ImposedSystem {
        match (&self.g, &self.omega) {
            (Some(_), Some(_)) => ImposedSystem::Joint,
            (Some(_), None) => ImposedSystem::GOnly,
            (None, Some(_)) => ImposedSystem::OmegaOnly,
            (None, None) => unreachable!("connection without constraints"),
        }
    }

    pub fn gamma1(&self) -> Option<&ChristoffelFirst> {
        self.gamma1.as_ref()
    }

    /// Builds and solves the stacked system at `x`.
    pub fn solve_at(&self, x: &[f64]) -> Result<ConnectionSolution> {
        let n = self.n;
        let t = pair_count(n);
        let unknowns = n * t;
        let rows_g = if self.g.is_some() { t * n } else { 0 };
        let rows_w = if self.omega.is_some() { n * (n - 1) / 2 * n } else { 0 };
        let mut a = DMatrix::zeros(rows_g + rows_w, unknowns);
        let mut b = DVector::zeros(rows_g + rows_w);

        if let (Some(g), Some(gamma1)) = (&self.g, &self.gamma1) {
            let gm = g.eval(x)?;
            let g1 = gamma1.eval(x)?;
            let mut row = 0;
            for i in 0..n {
                for j in i..n {
                    for k in 0..n {
                        // sum_s g_sk Gamma^s_(ij) = Gamma_{ij,k}
                        for s in 0..n {
                            a[(row, s * t + pair_index(n, i, j))] += gm[(s, k)];
                        }
                        b[row] = g1[pair_index(n, i, j) * n + k];
                        row += 1;
                    }
                }
            }
        }
        if let Some(omega) = &self.omega {
            let wm = omega.eval(x)?;
            let dw: Vec<DMatrix<f64>> = self
                .omega_derivs
                .iter()
                .map(|d| d.eval(x))
                .collect::<Result<_>>()?;
            let mut row = rows_g;
            for i in 0..n {
                for j in (i + 1)..n {
                    for k in 0..n {
                        // sum_s (omega_sj Gamma^s_(ik) + omega_is Gamma^s_(jk)) = d_k omega_ij
                        for s in 0..n {
                            a[(row, s * t + pair_index(n, i, k))] += wm[(s, j)];
                            a[(row, s * t + pair_index(n, j, k))] += wm[(i, s)];
                        }
                        b[row] = dw[k][(i, j)];
                        row += 1;
                    }
                }
            }
        }

        let svd = jacobi_svd(&a);
        let system_rank = svd.rank(self.sigma_tol);
        let solution = svd.min_norm_solve(&b, self.sigma_tol);
        let residual = &a * &solution - &b;

        let slice_norm = |from: usize, len: usize| -> f64 {
            residual.rows(from, len).norm()
        };
        let rhs_slice_norm = |from: usize, len: usize| -> f64 { b.rows(from, len).norm() };

        Ok(ConnectionSolution {
            gamma: Gamma2::from_flat(n, solution.iter().copied().collect()),
            imposed: self.imposed(),
            residual_g: (rows_g > 0).then(|| slice_norm(0, rows_g)),
            rhs_norm_g: (rows_g > 0).then(|| rhs_slice_norm(0, rows_g)),
            residual_omega: (rows_w > 0).then(|| slice_norm(rows_g, rows_w)),
            rhs_norm_omega: (rows_w > 0).then(|| rhs_slice_norm(rows_g, rows_w)),
            system_rank,
        })
    }
}

impl ConnectionEval for ConnectionField {
    fn dim(&self) -> usize {
        self.n
    }

    fn gamma_at(&self, x: &[f64]) -> Result<Gamma2> {
        Ok(self.solve_at(x)?.gamma)
    }
}

/// The gauge freedom v^i T_{jk}: v is realized as the smooth projection of a
/// fixed seed vector onto the kernel of g, T is a symmetric expression matrix.
pub struct FreedomTerm {
    pub v_seed: DVector<f64>,
    pub t: ExprMatrix,
}

/// A connection perturbed by a freedom term; downstream curvature must not
/// see the difference.
pub struct PerturbedConnection<'a> {
    pub base: &'a dyn ConnectionEval,
    pub g: &'a ExprMatrix,
    pub freedom: FreedomTerm,
    pub sigma_tol: f64,
}

impl<'a> PerturbedConnection<'a> {
    /// v(x) = B(x) B(x)^T v_seed, which lies in ker g(x) and varies smoothly
    /// under constant rank.
    pub fn kernel_vector(&self, x: &[f64]) -> Result<DVector<f64>> {
        let gm = self.g.eval(x)?;
        let basis = kernel_basis_matrix(&gm, self.sigma_tol);
        Ok(&basis * (basis.transpose() * &self.freedom.v_seed))
    }
}

impl<'a> ConnectionEval for PerturbedConnection<'a> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn gamma_at(&self, x: &[f64]) -> Result<Gamma2> {
        let mut gamma = self.base.gamma_at(x)?;
        let v = self.kernel_vector(x)?;
        let tm = self.freedom.t.eval(x)?;
        let n = gamma.dim();
        for i in 0..n {
            if v[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                for k in j..n {
                    gamma.add(i, j, k, v[i] * tm[(j, k)]);
                }
            }
        }
        Ok(gamma)
    }
}

/// Covariant derivative of a covector field: (nabla u)[i][j] = d_j u_i -
/// sum_s Gamma^s_{ij} u_s. Derivatives of sampled fields use central
/// differences with step `h`.
pub fn covariant_derivative_cov1(
    value: &dyn Fn(&[f64]) -> Result<DVector<f64>>,
    gamma: &Gamma2,
    x: &[f64],
    h: f64,
) -> Result<DMatrix<f64>> {
    let n = gamma.dim();
    let u = value(x)?;
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let up = value(&xp)?;
        let um = value(&xm)?;
        for i in 0..n {
            let du = (up[i] - um[i]) / (2.0 * h);
            let mut corr = 0.0;
            for s in 0..n {
                corr += gamma.get(s, i, j) * u[s];
            }
            out[(i, j)] = du - corr;
        }
    }
    Ok(out)
}

/// nabla_k T_ij for a (0,2) field: d_k T_ij - Gamma^s_{ik} T_sj - Gamma^s_{jk} T_is.
pub fn covariant_derivative_cov2(
    field: &dyn MatrixField,
    gamma: &Gamma2,
    x: &[f64],
    h: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let n = gamma.dim();
    let t = field.value_at(x)?;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let dt = field.deriv_at(x, k, h)?;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut corr = 0.0;
                for s in 0..n {
                    corr += gamma.get(s, i, k) * t[(s, j)] + gamma.get(s, j, k) * t[(i, s)];
                }
                m[(i, j)] = dt[(i, j)] - corr;
            }
        }
        out.push(m);
    }
    Ok(out)
}

/// nabla_k P^ij for a (2,0) field: d_k P^ij + Gamma^i_{sk} P^sj + Gamma^j_{sk} P^is.
pub fn covariant_derivative_con2(
    field: &dyn MatrixField,
    gamma: &Gamma2,
    x: &[f64],
    h: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let n = gamma.dim();
    let p = field.value_at(x)?;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let dp = field.deriv_at(x, k, h)?;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut corr = 0.0;
                for s in 0..n {
                    corr += gamma.get(i, s, k) * p[(s, j)] + gamma.get(j, s, k) * p[(i, s)];
                }
                m[(i, j)] = dp[(i, j)] + corr;
            }
        }
        out.push(m);
    }
    Ok(out)
}

/// nabla_k M^i_j for a (1,1) field: d_k M^i_j + Gamma^i_{sk} M^s_j - Gamma^s_{jk} M^i_s.
pub fn covariant_derivative_mixed11(
    field: &dyn MatrixField,
    gamma: &Gamma2,
    x: &[f64],
    h: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let n = gamma.dim();
    let mval = field.value_at(x)?;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let dm = field.deriv_at(x, k, h)?;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut corr = 0.0;
                for s in 0..n {
                    corr += gamma.get(i, s, k) * mval[(s, j)] - gamma.get(s, j, k) * mval[(i, s)];
                }
                m[(i, j)] = dm[(i, j)] + corr;
            }
        }
        out.push(m);
    }
    Ok(out)
}

/// (L_v g)_ij = sum_s (v^s d_s g_ij + g_is d_j v^s + g_js d_i v^s).
pub fn lie_derivative_metric(v: &VectorField, g: &ExprMatrix) -> ExprMatrix {
    let n = g.dim();
    ExprMatrix::from_fn(n, |i, j| {
        let mut terms = Vec::with_capacity(3 * n);
        for s in 0..n {
            terms.push(Expr::mul(
                v.component(s).clone(),
                g.entry(i, j).differentiate(s),
            ));
            terms.push(Expr::mul(
                g.entry(i, s).clone(),
                v.component(s).differentiate(j),
            ));
            terms.push(Expr::mul(
                g.entry(j, s).clone(),
                v.component(s).differentiate(i),
            ));
        }
        Expr::sum(terms)
    })
}

/// Rank constancy of the stacked system over a grid; the pointwise Gamma
/// field is smooth only under constant rank.
pub fn system_rank_constant(field: &ConnectionField, grid: &Grid) -> Result<(bool, usize)> {
    let mut first: Option<usize> = None;
    let mut constant = true;
    for p in grid.points() {
        let sol = field.solve_at(&p)?;
        match first {
            None => first = Some(sol.system_rank),
            Some(r) => {
                if sol.system_rank != r {
                    constant = false;
                }
            }
        }
    }
    Ok((constant, first.unwrap_or(0)))
}
