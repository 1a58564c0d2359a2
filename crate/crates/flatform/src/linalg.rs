//! Dense SVD by one-sided Jacobi rotations.
//!
//! The rank decisions, kernel bases and minimum-norm least-squares solves in
//! this crate all hinge on trustworthy singular values; one-sided Jacobi is
//! slower than bidiagonalization but converges unconditionally on the small
//! dense matrices used here and computes tiny singular values with high
//! relative accuracy. (The general-purpose SVD shipped with the linear
//! algebra crate failed to reconstruct stacked connection systems with
//! repeated singular values, which silently broke least-squares solutions.)

use nalgebra::{DMatrix, DVector};

/// A = U diag(sigma) V^T with sigma descending; U is m x r and V is n x n
/// with r = min(m, n) columns of U (zero singular directions carry a zero
/// column in U).
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// One-sided Jacobi SVD. Wide matrices are zero-padded to square so the
/// right factor V always spans the full domain (the padded rows contribute
/// nothing to the nonzero singular directions).
pub fn jacobi_svd(a: &DMatrix<f64>) -> Svd {
    if a.nrows() < a.ncols() {
        let mut padded = DMatrix::zeros(a.ncols(), a.ncols());
        padded.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
        let full = jacobi_svd(&padded);
        return Svd {
            u: full.u.rows(0, a.nrows()).clone_owned(),
            sigma: full.sigma,
            v: full.v,
        };
    }
    let m = a.nrows();
    let n = a.ncols();
    let mut b = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = 1e-15;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    alpha += b[(i, p)] * b[(i, p)];
                    beta += b[(i, q)] * b[(i, q)];
                    gamma += b[(i, p)] * b[(i, q)];
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let bp = b[(i, p)];
                    let bq = b[(i, q)];
                    b[(i, p)] = c * bp - s * bq;
                    b[(i, q)] = s * bp + c * bq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    // column norms are the singular values
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| b.column(j).norm()).collect();
    order.sort_by(|x, y| norms[*y].total_cmp(&norms[*x]));
    let mut u = DMatrix::zeros(m, n);
    let mut sigma = DVector::zeros(n);
    let mut v_sorted = DMatrix::zeros(n, n);
    for (slot, &j) in order.iter().enumerate() {
        sigma[slot] = norms[j];
        if norms[j] > 0.0 {
            u.column_mut(slot).copy_from(&(b.column(j) / norms[j]));
        }
        v_sorted.column_mut(slot).copy_from(&v.column(j));
    }
    Svd {
        u,
        sigma,
        v: v_sorted,
    }
}

impl Svd {
    pub fn sigma_max(&self) -> f64 {
        self.sigma.iter().cloned().fold(0.0, f64::max)
    }

    /// Numeric rank relative to sigma_max.
    pub fn rank(&self, sigma_tol: f64) -> usize {
        let smax = self.sigma_max();
        if smax == 0.0 {
            return 0;
        }
        self.sigma.iter().filter(|s| **s > sigma_tol * smax).count()
    }

    /// Minimum-norm least-squares solution with the given relative cutoff.
    pub fn min_norm_solve(&self, b: &DVector<f64>, sigma_tol: f64) -> DVector<f64> {
        let smax = self.sigma_max();
        let eps = sigma_tol * smax;
        let utb = self.u.transpose() * b;
        let mut scaled = DVector::zeros(self.sigma.len());
        for i in 0..self.sigma.len() {
            if self.sigma[i] > eps {
                scaled[i] = utb[i] / self.sigma[i];
            }
        }
        &self.v * scaled
    }

    /// Orthonormal basis of the null space (columns of V at or below the
    /// cutoff).
    pub fn null_space(&self, sigma_tol: f64) -> DMatrix<f64> {
        let smax = self.sigma_max();
        let n = self.v.nrows();
        let cols: Vec<usize> = (0..self.sigma.len())
            .filter(|&i| smax == 0.0 || self.sigma[i] <= sigma_tol * smax)
            .collect();
        let mut out = DMatrix::zeros(n, cols.len());
        for (j, &i) in cols.iter().enumerate() {
            out.column_mut(j).copy_from(&self.v.column(i));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(svd: &Svd) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(svd.u.ncols(), svd.v.ncols());
        for i in 0..svd.sigma.len().min(s.nrows()) {
            s[(i, i)] = svd.sigma[i];
        }
        &svd.u * s * svd.v.transpose()
    }

    #[test]
    fn reconstructs_generic_matrix() {
        let a = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 2.0, 3.0, -1.0, 0.5, 2.0, 0.0, 1.0, -2.0, 3.0, 1.0, 1.0],
        );
        let svd = jacobi_svd(&a);
        assert!((reconstruct(&svd) - &a).abs().max() < 1e-12);
        // descending
        for i in 1..svd.sigma.len() {
            assert!(svd.sigma[i - 1] >= svd.sigma[i]);
        }
    }

    #[test]
    fn handles_repeated_singular_values() {
        // the stacked connection system that defeated the library SVD:
        // block structure with exactly repeated singular values
        let x = 1.5f64 + 1.41421356237309524e-3;
        let y = 1.5f64;
        let g = [4.0 * x * x, 4.0 * x * y, 4.0 * x * y, 4.0 * y * y];
        let n = 2usize;
        let t = 3usize;
        let pidx = |j: usize, k: usize| -> usize {
            let (a, b) = if j <= k { (j, k) } else { (k, j) };
            a * n - a * (a + 1) / 2 + b
        };
        let mut a = DMatrix::zeros(t * n, n * t);
        let mut row = 0;
        for i in 0..n {
            for j in i..n {
                for k in 0..n {
                    for s in 0..n {
                        a[(row, s * t + pidx(i, j))] += g[s * 2 + k];
                    }
                    row += 1;
                }
            }
        }
        let svd = jacobi_svd(&a);
        assert!(
            (reconstruct(&svd) - &a).abs().max() < 1e-12,
            "reconstruction failed"
        );
        assert_eq!(svd.rank(1e-8), 3);
        // the solvable right-hand side must be solved to machine precision
        let d = [2.0 * x, 2.0 * y];
        let mut b = DVector::zeros(6);
        let mut row = 0;
        for i in 0..n {
            for j in i..n {
                for k in 0..n {
                    b[row] = if i == j { 2.0 * d[k] } else { 0.0 };
                    row += 1;
                }
            }
        }
        let sol = svd.min_norm_solve(&b, 1e-8);
        assert!(((&a * &sol) - &b).norm() < 1e-12);
        // and it is the minimum-norm one: Gamma^s_ij = delta_ij x_s / rho^2
        let rho2 = x * x + y * y;
        let mut exact = DVector::zeros(6);
        for s in 0..n {
            for i in 0..n {
                exact[s * t + pidx(i, i)] = [x, y][s] / rho2;
                let _ = i;
            }
        }
        assert!(
            (&sol - &exact).abs().max() < 1e-12,
            "not the minimum-norm solution: {sol}"
        );
    }

    #[test]
    fn wide_matrix_via_transpose() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 2.0, -1.0, 0.0, 3.0, 1.0, 1.0]);
        let svd = jacobi_svd(&a);
        assert!((reconstruct(&svd) - &a).abs().max() < 1e-12);
        let ns = svd.null_space(1e-10);
        assert_eq!(ns.ncols(), 2);
        assert!((&a * &ns).abs().max() < 1e-12);
    }

    #[test]
    fn zero_matrix() {
        let a = DMatrix::zeros(3, 3);
        let svd = jacobi_svd(&a);
        assert_eq!(svd.rank(1e-8), 0);
        assert_eq!(svd.null_space(1e-8).ncols(), 3);
    }

    #[test]
    fn tiny_singular_values_resolved() {
        // diag(1, 1e-12, 0): rank at 1e-8 must be 1, and the small value is
        // recovered with high relative accuracy
        let mut a = DMatrix::zeros(3, 3);
        a[(0, 0)] = 1.0;
        a[(1, 1)] = 1e-12;
        let svd = jacobi_svd(&a);
        assert_eq!(svd.rank(1e-8), 1);
        assert!((svd.sigma[1] - 1e-12).abs() < 1e-24);
    }
}
