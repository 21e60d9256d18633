use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing, strictly positive observation times (minutes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
    /// Absolute time of the grid origin before translation.
    pub origin_offset: f64,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        Self::with_offset(points, 0.0)
    }

    pub fn with_offset(points: Vec<f64>, origin_offset: f64) -> Result<Self> {
        if let Some((i, p)) = points
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p <= 0.0)
        {
            return Err(Error::Data(format!(
                "grid point {i} is {p}; all points must be finite and > 0"
            )));
        }
        if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "grid is not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(TimeGrid {
            points,
            origin_offset,
        })
    }

    /// `(T/n, 2T/n, ..., T)`
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        if n == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "uniform grid needs T > 0 and n >= 1, got T = {horizon}, n = {n}"
            )));
        }
        Self::new((1..=n).map(|i| horizon * i as f64 / n as f64).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Common spacing if the grid is uniform to within `1e-9` relative.
    pub fn uniform_step(&self) -> Option<f64> {
        if self.points.len() < 2 {
            return None;
        }
        let n = self.points.len();
        let step = (self.points[n - 1] - self.points[0]) / (n - 1) as f64;
        let ok = self
            .points
            .windows(2)
            .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step);
        ok.then_some(step)
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::with_offset(idx.iter().map(|&i| self.points[i]).collect(), self.origin_offset)
    }
}
