//! Tensor-product Chebyshev interpolation on boxes, used to cache smooth
//! numeric fields (transversal covector data, pulled-back form slices) so
//! that chart construction does not re-integrate ODEs at every evaluation.

use crate::error::{Error, Result};
use rayon::prelude::*;

/// Vector-valued Chebyshev interpolant over a box, same node count per axis.
#[derive(Debug, Clone)]
pub struct ChebMap {
    intervals: Vec<(f64, f64)>,
    nodes: usize,
    n_out: usize,
    /// coeffs[out] is the tensor of Chebyshev coefficients, last axis fastest.
    coeffs: Vec<Vec<f64>>,
}

/// Chebyshev-Lobatto points on [-1, 1], ascending.
fn lobatto(nodes: usize) -> Vec<f64> {
    (0..nodes)
        .map(|j| -(std::f64::consts::PI * j as f64 / (nodes - 1) as f64).cos())
        .collect()
}

/// 1D analysis: values at Lobatto points -> Chebyshev coefficients.
fn analysis_1d(values: &[f64], out: &mut [f64]) {
    let n = values.len();
    let nm1 = (n - 1) as f64;
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, v) in values.iter().enumerate() {
            let w = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            // values are stored at ascending points t_j = -cos(pi j / (n-1)),
            // i.e. standard Lobatto order reversed; account for parity
            let angle = std::f64::consts::PI * (k * (n - 1 - j)) as f64 / nm1;
            acc += w * v * angle.cos();
        }
        acc *= 2.0 / nm1;
        if k == 0 || k == n - 1 {
            acc *= 0.5;
        }
        *slot = acc;
    }
}

/// Clenshaw evaluation of sum c_k T_k(t).
fn clenshaw(coeffs: &[f64], t: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in coeffs.iter().rev() {
        let b0 = 2.0 * t * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    b1 - t * b2
}

/// Coefficients of the derivative interpolant on [-1, 1].
fn derivative_coeffs(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    out[n - 2] = 2.0 * (n - 1) as f64 * coeffs[n - 1];
    for k in (1..n - 1).rev() {
        let upper = if k + 1 < n - 1 { out[k + 1] } else { 0.0 };
        out[k - 1] = upper + 2.0 * k as f64 * coeffs[k];
    }
    out[0] *= 0.5;
    out
}

impl ChebMap {
    /// Fits f on the tensor Lobatto grid (evaluations run in parallel).
    pub fn fit<F>(intervals: Vec<(f64, f64)>, nodes: usize, n_out: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    {
        let dim = intervals.len();
        if nodes < 2 {
            return Err(Error::InvalidInput("need at least 2 nodes per axis".into()));
        }
        let pts1d = lobatto(nodes);
        let total = nodes.pow(dim as u32);
        let coords = |mut flat: usize| -> Vec<f64> {
            let mut x = vec![0.0; dim];
            for a in (0..dim).rev() {
                let j = flat % nodes;
                flat /= nodes;
                let (lo, hi) = intervals[a];
                x[a] = lo + 0.5 * (hi - lo) * (pts1d[j] + 1.0);
            }
            x
        };
        let values: Vec<Vec<f64>> = (0..total)
            .into_par_iter()
            .map(|flat| {
                let x = coords(flat);
                let v = f(&x)?;
                if v.len() != n_out {
                    return Err(Error::InvalidInput(format!(
                        "field returned {} values, expected {n_out}",
                        v.len()
                    )));
                }
                Ok(v)
            })
            .collect::<Result<_>>()?;

        let mut coeffs = Vec::with_capacity(n_out);
        for out_idx in 0..n_out {
            let mut tensor: Vec<f64> = values.iter().map(|v| v[out_idx]).collect();
            // transform along each axis in turn
            let mut scratch_vals = vec![0.0; nodes];
            let mut scratch_out = vec![0.0; nodes];
            for axis in (0..dim).rev() {
                // stride of this axis in the flattened layout
                let stride = nodes.pow((dim - 1 - axis) as u32);
                let blocks = total / (nodes * stride);
                for b in 0..blocks {
                    for s in 0..stride {
                        let base = b * nodes * stride + s;
                        for j in 0..nodes {
                            scratch_vals[j] = tensor[base + j * stride];
                        }
                        analysis_1d(&scratch_vals, &mut scratch_out);
                        for j in 0..nodes {
                            tensor[base + j * stride] = scratch_out[j];
                        }
                    }
                }
            }
            coeffs.push(tensor);
        }
        Ok(Self {
            intervals,
            nodes,
            n_out,
            coeffs,
        })
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    fn normalized(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.intervals)
            .map(|(v, (lo, hi))| 2.0 * (v - lo) / (hi - lo) - 1.0)
            .collect()
    }

    fn eval_tensor(&self, tensor: &[f64], t: &[f64]) -> f64 {
        // contract the last axis first with Clenshaw, recursively
        fn rec(data: &[f64], t: &[f64], nodes: usize) -> f64 {
            if t.len() == 1 {
                return clenshaw(data, t[0]);
            }
            let block = data.len() / nodes;
            let mut reduced = vec![0.0; nodes];
            for (j, slot) in reduced.iter_mut().enumerate() {
                *slot = rec(&data[j * block..(j + 1) * block], &t[1..], nodes);
            }
            clenshaw(&reduced, t[0])
        }
        rec(tensor, t, self.nodes)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let t = self.normalized(x);
        self.coeffs
            .iter()
            .map(|c| self.eval_tensor(c, &t))
            .collect()
    }

    /// Derivative of the interpolant along one axis.
    pub fn eval_deriv(&self, x: &[f64], axis: usize) -> Vec<f64> {
        let t = self.normalized(x);
        let (lo, hi) = self.intervals[axis];
        let scale = 2.0 / (hi - lo);
        let stride = self.nodes.pow((self.dim() - 1 - axis) as u32);
        self.coeffs
            .iter()
            .map(|tensor| {
                // differentiate coefficients along `axis`
                let mut diff = tensor.clone();
                let total = tensor.len();
                let blocks = total / (self.nodes * stride);
                let mut line = vec![0.0; self.nodes];
                for b in 0..blocks {
                    for s in 0..stride {
                        let base = b * self.nodes * stride + s;
                        for j in 0..self.nodes {
                            line[j] = diff[base + j * stride];
                        }
                        let d = derivative_coeffs(&line);
                        for j in 0..self.nodes {
                            diff[base + j * stride] = d[j];
                        }
                    }
                }
                self.eval_tensor(&diff, &t) * scale
            })
            .collect()
    }

    /// Largest |interpolant - f| over random sample points.
    pub fn validate<F>(&self, f: F, samples: usize, seed: u64) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>>,
    {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut rng01 = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut max = 0.0f64;
        for _ in 0..samples {
            let x: Vec<f64> = self
                .intervals
                .iter()
                .map(|(lo, hi)| lo + (hi - lo) * (0.05 + 0.9 * rng01()))
                .collect();
            let exact = f(&x)?;
            let got = self.eval(&x);
            for (a, b) in exact.iter().zip(&got) {
                max = max.max((a - b).abs());
            }
        }
        Ok(max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interpolates_smooth_2d_function() {
        let f = |x: &[f64]| -> Result<Vec<f64>> {
            Ok(vec![
                (x[0] * 1.3).sin() * (0.7 * x[1]).cos() + x[0] * x[1],
                x[0].exp() * (1.0 + x[1] * x[1]),
            ])
        };
        let cheb = ChebMap::fit(vec![(-1.0, 1.0), (0.0, 2.0)], 17, 2, f).unwrap();
        let err = cheb.validate(f, 50, 7).unwrap();
        assert!(err < 1e-11, "interpolation error {err}");
    }

    #[test]
    fn derivative_of_interpolant_matches() {
        let f = |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![(2.0 * x[0]).sin() * x[1]]) };
        let cheb = ChebMap::fit(vec![(-1.0, 1.0), (-1.0, 1.0)], 21, 1, f).unwrap();
        for p in [[0.3, 0.5], [-0.6, -0.2], [0.0, 0.9]] {
            let d0 = cheb.eval_deriv(&p, 0)[0];
            assert_relative_eq!(
                d0,
                2.0 * (2.0 * p[0]).cos() * p[1],
                epsilon = 1e-9
            );
            let d1 = cheb.eval_deriv(&p, 1)[0];
            assert_relative_eq!(d1, (2.0 * p[0]).sin(), epsilon = 1e-9);
        }
    }

    #[test]
    fn exact_on_polynomials() {
        // degree-3 polynomial is reproduced exactly with 4+ nodes
        let f = |x: &[f64]| -> Result<Vec<f64>> {
            Ok(vec![1.0 + x[0] - 2.0 * x[0] * x[0] * x[0]])
        };
        let cheb = ChebMap::fit(vec![(-2.0, 1.0)], 5, 1, f).unwrap();
        for t in [-1.9, -0.5, 0.0, 0.99] {
            assert_relative_eq!(cheb.eval(&[t])[0], f(&[t]).unwrap()[0], epsilon = 1e-13);
        }
    }

    #[test]
    fn one_d_three_d_shapes() {
        let f1 = |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![x[0].cos()]) };
        let c1 = ChebMap::fit(vec![(0.0, 3.0)], 15, 1, f1).unwrap();
        assert!(c1.validate(f1, 20, 3).unwrap() < 1e-10);

        let f3 = |x: &[f64]| -> Result<Vec<f64>> {
            Ok(vec![x[0] * x[1] + x[2] * x[2], (x[0] + x[1] + x[2]).sin()])
        };
        let c3 = ChebMap::fit(vec![(-0.5, 0.5); 3], 9, 2, f3).unwrap();
        assert!(c3.validate(f3, 30, 5).unwrap() < 1e-9);
    }
}
