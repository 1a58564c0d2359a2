//! Coordinate charts, validated points and axis-uniform sample grids.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

static NEXT_CHART_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
struct ChartData {
    id: u64,
    names: Vec<String>,
    intervals: Vec<(f64, f64)>,
    base: Vec<f64>,
}

/// A single box chart: dimension, ordered variable names, per-axis closed
/// intervals and a base point. Cloning shares the same chart identity.
#[derive(Debug, Clone)]
pub struct Chart {
    data: Arc<ChartData>,
}

impl Chart {
    pub fn new(
        names: Vec<String>,
        intervals: Vec<(f64, f64)>,
        base: Vec<f64>,
    ) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return Err(Error::InvalidInput("chart must have dimension >= 1".into()));
        }
        if intervals.len() != n || base.len() != n {
            return Err(Error::InvalidInput(format!(
                "chart arity mismatch: {} names, {} intervals, {} base coordinates",
                n,
                intervals.len(),
                base.len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::InvalidInput(format!("invalid variable name `{name}`")));
            }
            if names[..i].contains(name) {
                return Err(Error::InvalidInput(format!("duplicate variable name `{name}`")));
            }
        }
        for (k, (lo, hi)) in intervals.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidInput(format!(
                    "degenerate interval [{lo}, {hi}] on axis {k}"
                )));
            }
            if !(base[k] >= *lo && base[k] <= *hi) {
                return Err(Error::InvalidInput(format!(
                    "base point coordinate {} outside [{lo}, {hi}] on axis {k}",
                    base[k]
                )));
            }
        }
        Ok(Self {
            data: Arc::new(ChartData {
                id: NEXT_CHART_ID.fetch_add(1, Ordering::Relaxed),
                names,
                intervals,
                base,
            }),
        })
    }

    /// Chart centered at the box midpoint.
    pub fn centered(names: Vec<String>, intervals: Vec<(f64, f64)>) -> Result<Self> {
        let base = intervals.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        Self::new(names, intervals, base)
    }

    /// Synthetic chart with names `prefix1..prefixN` on the given box.
    pub fn synthetic(prefix: &str, intervals: Vec<(f64, f64)>, base: Vec<f64>) -> Result<Self> {
        let names = (1..=intervals.len())
            .map(|i| format!("{prefix}{i}"))
            .collect();
        Self::new(names, intervals, base)
    }

    pub fn id(&self) -> u64 {
        self.data.id
    }

    pub fn dim(&self) -> usize {
        self.data.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.data.names
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.data.intervals
    }

    pub fn base(&self) -> &[f64] {
        &self.data.base
    }

    pub fn base_point(&self) -> Point {
        Point {
            chart_id: self.id(),
            coords: self.data.base.clone(),
        }
    }

    /// Euclidean diameter of the box.
    pub fn diameter(&self) -> f64 {
        self.data
            .intervals
            .iter()
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, coords: &[f64], pad_rel: f64) -> bool {
        coords.len() == self.dim()
            && coords.iter().zip(&self.data.intervals).all(|(x, (lo, hi))| {
                let pad = pad_rel * (hi - lo);
                *x >= lo - pad && *x <= hi + pad
            })
    }

    /// Validated point constructor.
    pub fn point(&self, coords: &[f64]) -> Result<Point> {
        if coords.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "point has {} coordinates, chart has dimension {}",
                coords.len(),
                self.dim()
            )));
        }
        if !self.contains(coords, 0.0) {
            return Err(Error::OutsideDomain(format!(
                "{coords:?} not inside the chart box"
            )));
        }
        Ok(Point {
            chart_id: self.id(),
            coords: coords.to_vec(),
        })
    }

    /// Axis-uniform grid including box corners, `res` points per axis.
    pub fn grid(&self, res: usize) -> Grid {
        self.grid_with_margin(res, 0.0)
    }

    /// Same, with the sampled range pulled inward by `margin` on every axis
    /// (finite-difference stencils must stay inside the box).
    pub fn grid_with_margin(&self, res: usize, margin: f64) -> Grid {
        let res = res.max(1);
        let axes: Vec<Vec<f64>> = self
            .data
            .intervals
            .iter()
            .map(|(lo, hi)| {
                let mut a = *lo + margin;
                let mut b = *hi - margin;
                if a >= b {
                    let mid = 0.5 * (lo + hi);
                    a = mid;
                    b = mid;
                }
                if res == 1 {
                    vec![0.5 * (a + b)]
                } else {
                    (0..res)
                        .map(|i| a + (b - a) * (i as f64) / ((res - 1) as f64))
                        .collect()
                }
            })
            .collect();
        Grid {
            chart_id: self.id(),
            axes,
        }
    }

    /// New chart with every axis shrunk toward the base point by `factor`.
    pub fn shrink(&self, factor: f64) -> Chart {
        let intervals = self
            .data
            .intervals
            .iter()
            .zip(&self.data.base)
            .map(|((lo, hi), c)| (c - (c - lo) * factor, c + (hi - c) * factor))
            .collect();
        Chart {
            data: Arc::new(ChartData {
                id: NEXT_CHART_ID.fetch_add(1, Ordering::Relaxed),
                names: self.data.names.clone(),
                intervals,
                base: self.data.base.clone(),
            }),
        }
    }
}

/// A validated coordinate tuple paired with its chart identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    chart_id: u64,
    coords: Vec<f64>,
}

impl Point {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn chart_id(&self) -> u64 {
        self.chart_id
    }

    pub fn expect_chart(&self, chart: &Chart) -> Result<()> {
        if self.chart_id != chart.id() {
            return Err(Error::ChartMismatch(format!(
                "point belongs to chart {}, expected chart {}",
                self.chart_id,
                chart.id()
            )));
        }
        Ok(())
    }
}

/// Axis-uniform sample grid. Iteration is lexicographic with the last axis
/// fastest, which keeps parallel sweeps deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid {
    #[serde(skip, default)]
    pub chart_id: u64,
    pub axes: Vec<Vec<f64>>,
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn resolution(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn point(&self, mut flat: usize) -> Vec<f64> {
        let mut coords = vec![0.0; self.dim()];
        for k in (0..self.dim()).rev() {
            let m = self.axes[k].len();
            coords[k] = self.axes[k][flat % m];
            flat /= m;
        }
        coords
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart2() -> Chart {
        Chart::new(
            vec!["x".into(), "y".into()],
            vec![(0.0, 1.0), (-1.0, 1.0)],
            vec![0.5, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn rejects_duplicate_names() {
        let err = Chart::new(
            vec!["x".into(), "x".into()],
            vec![(0.0, 1.0), (0.0, 1.0)],
            vec![0.5, 0.5],
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_base_outside_box() {
        let err = Chart::new(
            vec!["x".into()],
            vec![(0.0, 1.0)],
            vec![2.0],
        );
        assert!(err.is_err());
    }

    #[test]
    fn point_validation() {
        let c = chart2();
        assert!(c.point(&[0.2, 0.7]).is_ok());
        assert!(c.point(&[1.5, 0.0]).is_err());
        assert!(c.point(&[0.5]).is_err());
    }

    #[test]
    fn grid_includes_corners() {
        let c = chart2();
        let g = c.grid(3);
        assert_eq!(g.len(), 9);
        let pts = g.points();
        assert_eq!(pts[0], vec![0.0, -1.0]);
        assert_eq!(pts[8], vec![1.0, 1.0]);
        // last axis fastest
        assert_eq!(pts[1], vec![0.0, 0.0]);
    }

    #[test]
    fn grid_margin_shrinks_range() {
        let c = chart2();
        let g = c.grid_with_margin(3, 0.25);
        let pts = g.points();
        assert_eq!(pts[0], vec![0.25, -0.75]);
    }

    #[test]
    fn clones_share_identity() {
        let c = chart2();
        let d = c.clone();
        assert_eq!(c.id(), d.id());
        let p = c.point(&[0.1, 0.1]).unwrap();
        assert!(p.expect_chart(&d).is_ok());
    }
}
