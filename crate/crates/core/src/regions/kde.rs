//! Gaussian kernel density estimate on a uniform grid over `[0, 1]`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl DensityEstimate {
    /// Trapezoidal integral over the grid.
    pub fn mass(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, p)| 0.5 * (x[1] - x[0]) * (p[0] + p[1]))
            .sum()
    }

    /// Grid location of the global maximum (leftmost on ties).
    pub fn argmax(&self) -> f64 {
        let mut best = 0;
        for (i, &p) in self.density.iter().enumerate() {
            if p > self.density[best] {
                best = i;
            }
        }
        self.grid[best]
    }

    /// Local maxima as `(grid index, height)`: interior points (or the
    /// leftmost point of a flat run) strictly above both neighbours. The grid
    /// ends are never peaks.
    pub fn peaks(&self) -> Vec<(usize, f64)> {
        let p = &self.density;
        let n = p.len();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && p[j + 1] == p[i] {
                j += 1;
            }
            if i > 0 && j + 1 < n && p[i - 1] < p[i] && p[j + 1] < p[i] {
                out.push((i, p[i]));
            }
            i = j + 1;
        }
        out
    }
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `p(x) = 1/n * sum 1/h K((x - X_i) / h)` with the standard normal `K`,
/// at `resolution` evenly spaced points of `[0, 1]`.
pub fn kde_pdf(samples: &[f64], bandwidth: f64, resolution: usize) -> Result<DensityEstimate> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("kernel density estimate needs samples".into()));
    }
    if !(bandwidth > 0.0) || resolution < 2 {
        return Err(Error::InvalidInput(format!(
            "kde needs a positive bandwidth and >= 2 grid points (h={bandwidth}, n={resolution})"
        )));
    }
    debug_assert!((INV_SQRT_2PI - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-16);
    let step = 1.0 / (resolution - 1) as f64;
    let grid: Vec<f64> = (0..resolution).map(|i| i as f64 * step).collect();
    let norm = INV_SQRT_2PI / (bandwidth * samples.len() as f64);
    let density = grid
        .iter()
        .map(|&x| {
            let s: f64 = samples
                .iter()
                .map(|&xi| {
                    let u = (x - xi) / bandwidth;
                    (-0.5 * u * u).exp()
                })
                .sum();
            s * norm
        })
        .collect();
    Ok(DensityEstimate { grid, density })
}
