//! Adaptive embedded Runge-Kutta one-step integrator (Dormand-Prince 5(4)),
//! used for Pfaffian path integration and flow-map evaluation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_steps: 100_000,
        }
    }
}

impl OdeOptions {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }
}

// Dormand-Prince coefficients.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates dy/dt = f(t, y) from `t0` to `t1` (either direction) and
/// returns y(t1).
pub fn integrate<F>(mut f: F, t0: f64, t1: f64, y0: &[f64], opts: &OdeOptions) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let n = y0.len();
    let span = t1 - t0;
    if span == 0.0 || n == 0 {
        return Ok(y0.to_vec());
    }
    let direction = span.signum();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = (span.abs() / 16.0).min(span.abs()) * direction;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut steps = 0usize;

    k[0] = f(t, &y)?;
    loop {
        if (t1 - t) * direction <= 0.0 {
            return Ok(y);
        }
        if steps >= opts.max_steps {
            return Err(Error::Ode(format!(
                "step limit {} exceeded at t = {t}",
                opts.max_steps
            )));
        }
        steps += 1;
        if (t + h - t1) * direction > 0.0 {
            h = t1 - t;
        }

        for stage in 0..6 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate().take(stage + 1) {
                let a = A[stage][j];
                if a != 0.0 {
                    for i in 0..n {
                        ys[i] += h * a * kj[i];
                    }
                }
            }
            k[stage + 1] = f(t + C[stage] * h, &ys)?;
        }

        let mut y5 = y.clone();
        let mut y4 = y.clone();
        for (j, kj) in k.iter().enumerate() {
            for i in 0..n {
                y5[i] += h * B5[j] * kj[i];
                y4[i] += h * B4[j] * kj[i];
            }
        }

        let mut err = 0.0f64;
        for i in 0..n {
            let scale = opts.abs_tol + opts.rel_tol * y[i].abs().max(y5[i].abs());
            let e = (y5[i] - y4[i]) / scale;
            err += e * e;
        }
        err = (err / n as f64).sqrt();

        if err <= 1.0 {
            t += h;
            // FSAL: last stage of the accepted step is the first of the next
            k[0] = k[6].clone();
            y = y5;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        let h_min = span.abs() * 1e-14;
        if h.abs() < h_min {
            return Err(Error::Ode(format!(
                "step size underflow at t = {t} (err = {err})"
            )));
        }
    }
}
