//! The single tolerance/configuration record shared by all verdicts.
//!
//! Every numeric decision in the pipeline reads its threshold from here so
//! that reports are reproducible and the full configuration can be echoed.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Relative singular-value threshold defining numeric rank.
    pub sigma_tol: f64,
    /// Maximum condition number accepted for the kernel pivot block.
    pub cond_kernel_max: f64,
    /// Maximum condition number for inverting a symplectic form.
    pub cond_omega_max: f64,
    /// Relative residual threshold for linear-system solvability.
    pub tol_lin: f64,
    /// Stationarity threshold (scaled by the Christoffel magnitude).
    pub tol_stat: f64,
    /// Closedness threshold for exterior derivatives.
    pub tol_closed: f64,
    /// Jacobi-identity residual threshold.
    pub tol_jacobi: f64,
    /// Threshold for the parallelism residuals of the mixed conditions.
    pub tol_parallel: f64,
    /// Curvature threshold for the FLAT verdict.
    pub tol_flat: f64,
    /// NOT_FLAT requires a residual at least this multiple of the tolerance.
    pub not_flat_factor: f64,
    /// Pullback-deviation budget for constructed charts.
    pub tol_construct: f64,
    /// Loop-defect budget for Pfaffian path independence.
    pub tol_loop: f64,
    /// Variance budget for Poisson brackets that must be constant.
    pub tol_bracket_var: f64,
    /// Absolute ODE tolerance for flows and Pfaffian paths.
    pub ode_abs_tol: f64,
    /// Relative ODE tolerance.
    pub ode_rel_tol: f64,
    /// Curvature finite-difference step, relative to the box diameter.
    pub h_curv_rel: f64,
    /// Numeric-Jacobian step, relative to the box diameter.
    pub h_jac_rel: f64,
    /// Minimum |det J| over the sample grid for a usable chart map.
    pub jac_min: f64,
    /// Fraction of the per-axis width that flows may overshoot the box.
    pub box_pad_rel: f64,
    /// Maximum number of box halvings before the Moser path gives up.
    pub max_box_shrink: u32,
    /// Grid resolution per axis; 0 selects the dimension-dependent default.
    pub grid_res: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            sigma_tol: 1e-8,
            cond_kernel_max: 1e6,
            cond_omega_max: 1e8,
            tol_lin: 1e-7,
            tol_stat: 1e-7,
            tol_closed: 1e-7,
            tol_jacobi: 1e-6,
            tol_parallel: 1e-7,
            tol_flat: 1e-5,
            not_flat_factor: 10.0,
            tol_construct: 1e-5,
            tol_loop: 1e-6,
            tol_bracket_var: 1e-8,
            ode_abs_tol: 1e-10,
            ode_rel_tol: 1e-8,
            h_curv_rel: 1e-3,
            h_jac_rel: 1e-5,
            jac_min: 1e-6,
            box_pad_rel: 0.1,
            max_box_shrink: 5,
            grid_res: 0,
        }
    }
}

impl Config {
    /// Effective points-per-axis for an `n`-dimensional chart. Dense grids are
    /// kept for low dimensions; higher dimensions fall back to coarser sweeps.
    pub fn grid_res_for_dim(&self, n: usize) -> usize {
        if self.grid_res > 0 {
            return self.grid_res;
        }
        match n {
            0..=3 => 9,
            4 => 5,
            _ => 3,
        }
    }

    /// Certification grid for chart maps (flow-based maps are expensive to
    /// differentiate, so high dimensions use the coarse default).
    pub fn cert_grid_res_for_dim(&self, n: usize) -> usize {
        match n {
            0..=3 => 9,
            4 => 5,
            5 | 6 => 5,
            _ => 3,
        }
    }
}
