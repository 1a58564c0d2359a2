//! Lowered curvature tensor R_{ijkl} from a pointwise connection evaluator,
//! with Richardson-extrapolated central differences for the derivative of
//! the Christoffel field, plus the constant-curvature and symmetric-space
//! residuals.

use crate::chart::{Chart, Grid};
use crate::connection::{pair_count, ConnectionEval};
use crate::error::{Error, Result};
use crate::forms::ExprMatrix;
use rayon::prelude::*;

/// Dense R_{ijkl} values at one point.
#[derive(Debug, Clone)]
pub struct Curv4 {
    n: usize,
    data: Vec<f64>,
}

impl Curv4 {
    fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[((i * self.n + j) * self.n + k) * self.n + l]
    }

    fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        self.data[((i * self.n + j) * self.n + k) * self.n + l] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }
}

/// d Gamma / d x_k by central differences with one Richardson step
/// (steps h and h/2).
fn gamma_derivative(
    conn: &dyn ConnectionEval,
    x: &[f64],
    axis: usize,
    h: f64,
) -> Result<Vec<f64>> {
    let diff = |step: f64| -> Result<Vec<f64>> {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[axis] += step;
        xm[axis] -= step;
        let gp = conn.gamma_at(&xp)?;
        let gm = conn.gamma_at(&xm)?;
        Ok(gp
            .flat()
            .iter()
            .zip(gm.flat())
            .map(|(a, b)| (a - b) / (2.0 * step))
            .collect())
    };
    let d1 = diff(h)?;
    let d2 = diff(h / 2.0)?;
    Ok(d1
        .iter()
        .zip(&d2)
        .map(|(a, b)| (4.0 * b - a) / 3.0)
        .collect())
}

/// Evaluates R_{ijkl} = sum_s g_is (d_k Gamma^s_jl - d_l Gamma^s_jk
/// + sum_a (Gamma^s_ka Gamma^a_lj - Gamma^s_la Gamma^a_jk)) at a point.
pub fn lowered_curvature_at(
    g: &ExprMatrix,
    conn: &dyn ConnectionEval,
    x: &[f64],
    h: f64,
) -> Result<Curv4> {
    let n = conn.dim();
    let t = pair_count(n);
    let gm = g.eval(x)?;
    let gamma = conn.gamma_at(x)?;
    let mut dgamma: Vec<Vec<f64>> = Vec::with_capacity(n);
    for axis in 0..n {
        dgamma.push(gamma_derivative(conn, x, axis, h)?);
    }
    let dg = |axis: usize, s: usize, j: usize, l: usize| -> f64 {
        dgamma[axis][s * t + crate::connection::pair_index(n, j, l)]
    };

    let mut out = Curv4::zeros(n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut sum = 0.0;
                    for s in 0..n {
                        let gis = gm[(i, s)];
                        if gis == 0.0 {
                            continue;
                        }
                        let mut inner = dg(k, s, j, l) - dg(l, s, j, k);
                        for a in 0..n {
                            inner += gamma.get(s, k, a) * gamma.get(a, l, j)
                                - gamma.get(s, l, a) * gamma.get(a, j, k);
                        }
                        sum += gis * inner;
                    }
                    out.set(i, j, k, l, sum);
                }
            }
        }
    }
    // antisymmetry in the last index pair is structural; verify arithmetic
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let a = out.get(i, j, k, l);
                    let b = out.get(i, j, l, k);
                    if (a + b).abs() > 1e-9 + 1e-9 * a.abs() {
                        return Err(Error::ConnectionInfeasible(format!(
                            "curvature antisymmetry violated: R[{i}{j}{k}{l}] = {a}, R[{i}{j}{l}{k}] = {b}"
                        )));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Curvature sampled over a grid (pulled inward so the Richardson stencil
/// stays inside the box).
#[derive(Debug)]
pub struct LoweredCurvature {
    pub step: f64,
    pub grid: Grid,
    pub values: Vec<Curv4>,
    pub max_abs: f64,
}

/// Interior sample grid for curvature: the stencil reaches `h` along every
/// axis, so the sampled ranges shrink by that margin.
pub fn curvature_grid(chart: &Chart, res: usize, h: f64) -> Grid {
    chart.grid_with_margin(res, 1.05 * h)
}

pub fn lowered_curvature_field(
    g: &ExprMatrix,
    conn: &dyn ConnectionEval,
    grid: &Grid,
    h: f64,
) -> Result<LoweredCurvature> {
    let points = grid.points();
    let values: Vec<Curv4> = points
        .par_iter()
        .map(|p| lowered_curvature_at(g, conn, p, h))
        .collect::<Result<_>>()?;
    let max_abs = values.iter().fold(0.0f64, |m, c| m.max(c.max_abs()));
    Ok(LoweredCurvature {
        step: h,
        grid: grid.clone(),
        values,
        max_abs,
    })
}

/// max |R_{ijkl} - kappa (g_ik g_jl - g_il g_jk)| over the grid. The sign of
/// the comparison term makes the unit sphere come out at kappa = +1.
pub fn constant_curvature_residual(
    g: &ExprMatrix,
    conn: &dyn ConnectionEval,
    kappa: f64,
    grid: &Grid,
    h: f64,
) -> Result<f64> {
    let n = g.dim();
    let points = grid.points();
    let per_point: Vec<f64> = points
        .par_iter()
        .map(|p| -> Result<f64> {
            let r = lowered_curvature_at(g, conn, p, h)?;
            let gm = g.eval(p)?;
            let mut max = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            let model = kappa * (gm[(i, k)] * gm[(j, l)] - gm[(i, l)] * gm[(j, k)]);
                            max = max.max((r.get(i, j, k, l) - model).abs());
                        }
                    }
                }
            }
            Ok(max)
        })
        .collect::<Result<_>>()?;
    Ok(per_point.into_iter().fold(0.0, f64::max))
}

/// max |nabla_m R_{ijkl}| over the grid: the derivative of the curvature
/// field by central differences (step h) plus the four connection terms.
pub fn symmetric_space_residual(
    g: &ExprMatrix,
    conn: &dyn ConnectionEval,
    grid: &Grid,
    h: f64,
) -> Result<f64> {
    let n = g.dim();
    let points = grid.points();
    let per_point: Vec<f64> = points
        .par_iter()
        .map(|p| -> Result<f64> {
            let r = lowered_curvature_at(g, conn, p, h)?;
            let gamma = conn.gamma_at(p)?;
            let mut max = 0.0f64;
            for m_axis in 0..n {
                let mut xp = p.clone();
                let mut xm = p.clone();
                xp[m_axis] += h;
                xm[m_axis] -= h;
                let rp = lowered_curvature_at(g, conn, &xp, h)?;
                let rm = lowered_curvature_at(g, conn, &xm, h)?;
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            for l in 0..n {
                                let dr =
                                    (rp.get(i, j, k, l) - rm.get(i, j, k, l)) / (2.0 * h);
                                let mut corr = 0.0;
                                for s in 0..n {
                                    corr += gamma.get(s, i, m_axis) * r.get(s, j, k, l)
                                        + gamma.get(s, j, m_axis) * r.get(i, s, k, l)
                                        + gamma.get(s, k, m_axis) * r.get(i, j, s, l)
                                        + gamma.get(s, l, m_axis) * r.get(i, j, k, s);
                                }
                                max = max.max((dr - corr).abs());
                            }
                        }
                    }
                }
            }
            Ok(max)
        })
        .collect::<Result<_>>()?;
    Ok(per_point.into_iter().fold(0.0, f64::max))
}
