//! The common speed grid shared by profiles and interval covariates.
//!
//! Speeds live in [0, 12.5] m/s, divided into `cells` equal steps. Interval
//! covariates at resolution `G` are only defined when `G` divides the cell
//! count, so that every interval endpoint is an exact grid point and no
//! interpolation is ever needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper end of the modelled speed range in m/s. Time spent faster than
/// this is excluded from every interval covariate.
pub const MAX_SPEED_MS: f64 = 12.5;

/// Equi-spaced speed grid over [0, MAX_SPEED_MS].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeedGrid {
    cells: u32,
}

impl Default for SpeedGrid {
    /// 500 cells of 0.025 m/s; supports every resolution that divides 500.
    fn default() -> Self {
        SpeedGrid { cells: 500 }
    }
}

impl SpeedGrid {
    pub fn new(cells: u32) -> Result<Self> {
        if cells == 0 {
            return Err(Error::arg("speed grid needs at least one cell"));
        }
        Ok(SpeedGrid { cells })
    }

    pub fn cells(&self) -> u32 {
        self.cells
    }

    /// Number of grid points, `cells + 1`.
    pub fn len(&self) -> usize {
        self.cells as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        MAX_SPEED_MS / self.cells as f64
    }

    /// Speed at grid point `i`.
    pub fn speed(&self, i: usize) -> f64 {
        debug_assert!(i <= self.cells as usize);
        i as f64 * MAX_SPEED_MS / self.cells as f64
    }

    pub fn speeds(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.speed(i)).collect()
    }

    /// Largest grid point index with speed <= `v`; `None` for `v < 0`.
    pub fn floor_index(&self, v: f64) -> Option<usize> {
        if v < 0.0 {
            return None;
        }
        if v >= MAX_SPEED_MS {
            return Some(self.cells as usize);
        }
        let i = (v / self.step()).floor() as usize;
        // Guard against v sitting a hair below a grid point.
        if i < self.cells as usize && self.speed(i + 1) <= v {
            Some(i + 1)
        } else {
            Some(i)
        }
    }

    /// Whether resolution `g` has all its interval endpoints on the grid.
    pub fn supports_resolution(&self, g: u32) -> bool {
        g >= 1 && self.cells.is_multiple_of(g)
    }

    /// Grid cells per interval at resolution `g`.
    pub fn cells_per_interval(&self, g: u32) -> Result<usize> {
        if g == 0 {
            return Err(Error::arg("resolution must be at least 1"));
        }
        if !self.supports_resolution(g) {
            return Err(Error::UnalignedResolution {
                resolution: g,
                cells: self.cells,
            });
        }
        Ok((self.cells / g) as usize)
    }

    /// Width of each speed interval at resolution `g`.
    pub fn interval_width(&self, g: u32) -> f64 {
        MAX_SPEED_MS / g as f64
    }
}
