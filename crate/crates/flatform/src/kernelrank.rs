//! Pointwise rank and kernel analysis: numeric rank by singular-value
//! threshold, constant-rank certification over grids, orthonormal kernel
//! bases with row pivoting, and the completion matrix F parametrizing the
//! annihilator.

use crate::chart::Grid;
use crate::error::{Error, Result};
use crate::forms::ExprMatrix;
use crate::linalg::jacobi_svd;
use nalgebra::{DMatrix, DVector};

/// Numeric rank: number of singular values above `sigma_tol * sigma_max`.
pub fn numeric_rank(m: &DMatrix<f64>, sigma_tol: f64) -> usize {
    jacobi_svd(m).rank(sigma_tol)
}

/// Orthonormal basis of the null space (columns), via the right singular
/// vectors whose singular values fall at or below the threshold.
pub fn kernel_basis_matrix(m: &DMatrix<f64>, sigma_tol: f64) -> DMatrix<f64> {
    jacobi_svd(m).null_space(sigma_tol)
}

/// Rank statistics of one matrix field over a grid.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SingleRankProfile {
    pub ranks: Vec<usize>,
    pub constant: bool,
    /// The common rank when `constant`, else the rank at the first grid point.
    pub rank: usize,
}

impl SingleRankProfile {
    fn from_ranks(ranks: Vec<usize>) -> Self {
        let rank = ranks.first().copied().unwrap_or(0);
        let constant = ranks.iter().all(|r| *r == rank);
        Self {
            ranks,
            constant,
            rank,
        }
    }
}

/// Per-grid-point ranks of a symbolic matrix field.
pub fn rank_profile(m: &ExprMatrix, grid: &Grid, sigma_tol: f64) -> Result<SingleRankProfile> {
    let mut ranks = Vec::with_capacity(grid.len());
    for p in grid.points() {
        ranks.push(numeric_rank(&m.eval(&p)?, sigma_tol));
    }
    Ok(SingleRankProfile::from_ranks(ranks))
}

/// Joint profile of g, omega and their kernel intersection.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RankProfile {
    pub sigma_tol: f64,
    pub grid_resolution: Vec<usize>,
    pub g: SingleRankProfile,
    pub omega: SingleRankProfile,
    /// Dimensions of R_g intersect R_omega per grid point.
    pub intersection: SingleRankProfile,
}

impl RankProfile {
    pub fn compute(
        g: &ExprMatrix,
        omega: &ExprMatrix,
        grid: &Grid,
        sigma_tol: f64,
    ) -> Result<Self> {
        let n = g.dim();
        let mut ranks_g = Vec::with_capacity(grid.len());
        let mut ranks_w = Vec::with_capacity(grid.len());
        let mut dims_int = Vec::with_capacity(grid.len());
        for p in grid.points() {
            let gm = g.eval(&p)?;
            let wm = omega.eval(&p)?;
            ranks_g.push(numeric_rank(&gm, sigma_tol));
            ranks_w.push(numeric_rank(&wm, sigma_tol));
            let stacked = stack(&gm, &wm);
            dims_int.push(n - numeric_rank(&stacked, sigma_tol));
        }
        Ok(Self {
            sigma_tol,
            grid_resolution: grid.resolution(),
            g: SingleRankProfile::from_ranks(ranks_g),
            omega: SingleRankProfile::from_ranks(ranks_w),
            intersection: SingleRankProfile::from_ranks(dims_int),
        })
    }

    pub fn all_constant(&self) -> bool {
        self.g.constant && self.omega.constant && self.intersection.constant
    }
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), n);
    out.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    out.view_mut((a.nrows(), 0), (b.nrows(), n)).copy_from(b);
    out
}

/// Basis of R_g intersect R_omega at a point: null space of the stacked
/// matrix [g; omega].
pub fn intersection_kernel(
    g: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    sigma_tol: f64,
) -> DMatrix<f64> {
    kernel_basis_matrix(&stack(g, omega), sigma_tol)
}

/// Kernel basis at a point together with the row pivoting and the completion
/// matrix F = -B'(B'')^{-1} parametrizing the annihilator of the kernel.
#[derive(Debug, Clone)]
pub struct KernelData {
    /// Orthonormal kernel basis columns, n x q.
    pub basis: DMatrix<f64>,
    /// q row indices whose restriction of the basis (B'') is invertible.
    pub pivot_rows: Vec<usize>,
    /// The remaining m = n - q row indices, ascending.
    pub free_rows: Vec<usize>,
    /// F, m x q: pivot components of an annihilator covector from free ones.
    pub completion: DMatrix<f64>,
    /// Condition number of the pivot block B''.
    pub cond_pivot: f64,
}

impl KernelData {
    pub fn kernel_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn rank(&self) -> usize {
        self.free_rows.len()
    }

    /// Full annihilator covector with the given free components: the pivot
    /// components are u'' = u' F, so that u . B = 0.
    pub fn annihilator(&self, u_free: &[f64]) -> DVector<f64> {
        let n = self.basis.nrows();
        let uf = nalgebra::RowDVector::from_row_slice(u_free);
        let up = &uf * &self.completion;
        let mut u = DVector::zeros(n);
        for (i, row) in self.free_rows.iter().enumerate() {
            u[*row] = uf[i];
        }
        for (j, row) in self.pivot_rows.iter().enumerate() {
            u[*row] = up[j];
        }
        u
    }
}

/// Computes kernel data at a point. When `pivot_rows` is given (path
/// continuity requires a fixed pivot), only validates its conditioning.
pub fn kernel_data(
    m: &DMatrix<f64>,
    sigma_tol: f64,
    cond_max: f64,
    pivot_rows: Option<&[usize]>,
) -> Result<KernelData> {
    let n = m.nrows();
    let basis = kernel_basis_matrix(m, sigma_tol);
    let q = basis.ncols();
    let pivots: Vec<usize> = match pivot_rows {
        Some(p) => {
            if p.len() != q {
                return Err(Error::KernelPivot(format!(
                    "pivot set has {} rows, kernel has dimension {q}",
                    p.len()
                )));
            }
            p.to_vec()
        }
        None => pivot_rows_by_factorization(&basis),
    };
    let free: Vec<usize> = (0..n).filter(|i| !pivots.contains(i)).collect();
    let b_pivot = select_rows(&basis, &pivots);
    let cond = condition_number(&b_pivot);
    if q > 0 && !(cond <= cond_max) {
        return Err(Error::KernelPivot(format!(
            "no pivot block with condition <= {cond_max:.1e} (got {cond:.3e})"
        )));
    }
    let b_free = select_rows(&basis, &free);
    let completion = if q == 0 {
        DMatrix::zeros(free.len(), 0)
    } else {
        let inv = b_pivot
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::KernelPivot("pivot block not invertible".into()))?;
        -b_free * inv
    };
    Ok(KernelData {
        basis,
        pivot_rows: pivots,
        free_rows: free,
        completion,
        cond_pivot: cond,
    })
}

/// Row pivots chosen by column-pivoted Gram-Schmidt on B^T: repeatedly take
/// the row of B with the largest remaining norm and deflate the rest.
fn pivot_rows_by_factorization(basis: &DMatrix<f64>) -> Vec<usize> {
    let n = basis.nrows();
    let q = basis.ncols();
    let mut rows: Vec<DVector<f64>> = (0..n)
        .map(|i| basis.row(i).transpose().clone_owned())
        .collect();
    let mut available: Vec<usize> = (0..n).collect();
    let mut chosen = Vec::with_capacity(q);
    for _ in 0..q {
        let (pos, _) = available
            .iter()
            .enumerate()
            .map(|(pos, i)| (pos, rows[*i].norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("kernel dimension exceeds matrix size");
        let row_idx = available.remove(pos);
        chosen.push(row_idx);
        let pivot = rows[row_idx].clone();
        let pn2 = pivot.norm_squared();
        if pn2 > 0.0 {
            for i in &available {
                let proj = rows[*i].dot(&pivot) / pn2;
                rows[*i] -= pivot.scale(proj);
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), m.ncols());
    for (k, r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from(&m.row(*r));
    }
    out
}

/// sigma_max / sigma_min; infinity for singular, 1 for empty.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 1.0;
    }
    let svd = jacobi_svd(m);
    let smax = svd.sigma_max();
    let smin = svd.sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Aligns a kernel basis against a reference basis of the same subspace by
/// greedy column matching and sign fixing, so that sweeps over neighboring
/// grid points produce continuous bases.
pub fn align_to_reference(basis: &DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
    let q = basis.ncols();
    if q == 0 || reference.ncols() != q {
        return basis.clone();
    }
    let overlap = reference.transpose() * basis; // (ref col i) . (basis col j)
    let mut used = vec![false; q];
    let mut out = DMatrix::zeros(basis.nrows(), q);
    for i in 0..q {
        let mut best = None;
        let mut best_abs = -1.0;
        for j in 0..q {
            if used[j] {
                continue;
            }
            let v = overlap[(i, j)].abs();
            if v > best_abs {
                best_abs = v;
                best = Some(j);
            }
        }
        let j = best.expect("column available");
        used[j] = true;
        let sign = if overlap[(i, j)] < 0.0 { -1.0 } else { 1.0 };
        out.column_mut(i).copy_from(&(basis.column(j) * sign));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::Chart;
    use crate::expr::parse;

    fn chart2(lo: f64, hi: f64) -> Chart {
        Chart::centered(vec!["x".into(), "y".into()], vec![(lo, hi), (lo, hi)]).unwrap()
    }

    fn example1_metric(chart: &Chart) -> ExprMatrix {
        // g = d(phi)^2 with phi = x^2 + y^2
        ExprMatrix::from_rows(vec![
            vec![
                parse("4 * x^2", chart.names()).unwrap(),
                parse("4 * x * y", chart.names()).unwrap(),
            ],
            vec![
                parse("4 * x * y", chart.names()).unwrap(),
                parse("4 * y^2", chart.names()).unwrap(),
            ],
        ])
        .unwrap()
    }

    #[test]
    fn euclidean_rank_is_constant() {
        let c = chart2(-1.0, 1.0);
        let g = ExprMatrix::from_rows(vec![
            vec![crate::expr::Expr::one(), crate::expr::Expr::zero()],
            vec![crate::expr::Expr::zero(), crate::expr::Expr::one()],
        ])
        .unwrap();
        let prof = rank_profile(&g, &c.grid(5), 1e-8).unwrap();
        assert!(prof.constant);
        assert_eq!(prof.rank, 2);
    }

    #[test]
    fn rank_drop_detected_at_origin() {
        let c = chart2(-1.0, 1.0);
        let g = example1_metric(&c);
        let prof = rank_profile(&g, &c.grid(5), 1e-8).unwrap();
        assert!(!prof.constant, "rank falls to zero at the origin");
        assert!(prof.ranks.contains(&0));
        assert!(prof.ranks.contains(&1));
    }

    #[test]
    fn constant_rank_away_from_origin() {
        let c = Chart::centered(vec!["x".into(), "y".into()], vec![(1.0, 2.0), (1.0, 2.0)])
            .unwrap();
        let g = example1_metric(&c);
        let prof = rank_profile(&g, &c.grid(5), 1e-8).unwrap();
        assert!(prof.constant);
        assert_eq!(prof.rank, 1);
    }

    #[test]
    fn kernel_of_diag_one_zero() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let kd = kernel_data(&m, 1e-8, 1e6, None).unwrap();
        assert_eq!(kd.kernel_dim(), 1);
        assert!((kd.basis[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert!(kd.basis[(0, 0)].abs() < 1e-14);
        assert_eq!(kd.completion.nrows(), 1);
        assert_eq!(kd.completion.ncols(), 1);
        assert!(kd.completion[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn example1_kernel_direction() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 4.0, 4.0, 4.0]);
        let kd = kernel_data(&m, 1e-8, 1e6, None).unwrap();
        assert_eq!(kd.kernel_dim(), 1);
        let v = kd.basis.column(0);
        let s = 1.0 / 2.0f64.sqrt();
        assert!((v[0].abs() - s).abs() < 1e-12);
        assert!((v[0] + v[1]).abs() < 1e-12, "kernel must be span (1,-1)");
    }

    #[test]
    fn canonical_symplectic_has_empty_kernel() {
        let mut w = DMatrix::zeros(4, 4);
        w[(0, 2)] = 1.0;
        w[(1, 3)] = 1.0;
        w[(2, 0)] = -1.0;
        w[(3, 1)] = -1.0;
        let kd = kernel_data(&w, 1e-8, 1e6, None).unwrap();
        assert_eq!(kd.kernel_dim(), 0);
        assert_eq!(kd.rank(), 4);
        // annihilator parametrization degenerates to the identity
        let u = kd.annihilator(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(u, DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn kernel_invariants_on_example1_grid() {
        let c = Chart::centered(vec!["x".into(), "y".into()], vec![(1.0, 2.0), (1.0, 2.0)])
            .unwrap();
        let g = example1_metric(&c);
        for p in c.grid(5).points() {
            let gm = g.eval(&p).unwrap();
            let kd = kernel_data(&gm, 1e-8, 1e6, None).unwrap();
            let gnorm = gm.norm();
            assert!((&gm * &kd.basis).norm() <= 1e-8 * gnorm);
            let btb = kd.basis.transpose() * &kd.basis;
            assert!(
                (btb - DMatrix::identity(kd.kernel_dim(), kd.kernel_dim()))
                    .abs()
                    .max()
                    <= 1e-10
            );
            assert_eq!(kd.kernel_dim() + numeric_rank(&gm, 1e-8), 2);
            // annihilator condition on a basis of free components
            for k in 0..kd.rank() {
                let mut uf = vec![0.0; kd.rank()];
                uf[k] = 1.0;
                let u = kd.annihilator(&uf);
                let res = (u.transpose() * &kd.basis).abs().max();
                assert!(res <= 1e-8, "annihilator residual {res}");
            }
        }
    }

    #[test]
    fn intersection_examples() {
        // g = dx^2, omega = h dx ^ dy with h != 0: trivial intersection
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]);
        assert_eq!(intersection_kernel(&g, &w, 1e-8).ncols(), 0);

        // omega = 0: intersection is ker g = span d_y
        let w0 = DMatrix::zeros(2, 2);
        let b = intersection_kernel(&g, &w0, 1e-8);
        assert_eq!(b.ncols(), 1);
        assert!(b[(0, 0)].abs() < 1e-12);

        // 3D: g = diag(1,0,0), omega = dx ^ dy -> span d_z
        let g3 = DMatrix::from_row_slice(3, 3, &[1., 0., 0., 0., 0., 0., 0., 0., 0.]);
        let mut w3 = DMatrix::zeros(3, 3);
        w3[(0, 1)] = 1.0;
        w3[(1, 0)] = -1.0;
        let b3 = intersection_kernel(&g3, &w3, 1e-8);
        assert_eq!(b3.ncols(), 1);
        assert!((b3[(2, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_fixes_sign_and_order() {
        let reference = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        // same subspace, swapped and negated
        let basis = DMatrix::from_row_slice(3, 2, &[0.0, -1.0, 1.0, 0.0, 0.0, 0.0]);
        let aligned = align_to_reference(&basis, &reference);
        assert!((aligned - reference).abs().max() < 1e-14);
    }

    #[test]
    fn intersection_dimension_profile() {
        let c = chart2(-1.0, 1.0);
        let g = example1_metric(&c);
        let w = ExprMatrix::zeros(2);
        let prof = RankProfile::compute(&g, &w, &c.grid(5), 1e-8).unwrap();
        assert!(!prof.g.constant);
        assert!(prof.omega.constant);
        assert_eq!(prof.omega.rank, 0);
        assert!(!prof.all_constant());
    }
}
