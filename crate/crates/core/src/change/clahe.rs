//! Contrast-limited adaptive histogram equalisation.
//!
//! Each tile gets a clipped, redistributed histogram whose normalised CDF
//! is the tile's intensity mapping. Pixels blend the mappings of the four
//! nearest tile centres bilinearly. Frames whose size is not a multiple of
//! the tile grid are padded by reflection on the right and bottom edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{reflect, FrameBuffer, Plane};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClaheParams {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Per-bin count cap as a fraction of the pixels in one tile.
    pub clip_fraction: f64,
    pub bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            tiles_x: 8,
            tiles_y: 8,
            clip_fraction: 0.01,
            bins: 256,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if self.tiles_x == 0 || self.tiles_y == 0 || self.bins < 2 {
            return Err(Error::Config(format!("invalid clahe grid: {self:?}")));
        }
        if !(self.clip_fraction > 0.0) {
            return Err(Error::Config("clahe clip fraction must be positive".into()));
        }
        Ok(())
    }
}

#[inline]
fn bin_of(v: f64, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

pub fn clahe_plane(plane: &Plane, params: &ClaheParams) -> Result<Plane> {
    params.validate()?;
    let (w, h) = plane.dims();
    let (tx, ty) = (params.tiles_x.min(w), params.tiles_y.min(h));
    let tw = w.div_ceil(tx);
    let th = h.div_ceil(ty);
    let bins = params.bins;
    let tile_pixels = (tw * th) as f64;
    let clip = params.clip_fraction * tile_pixels;

    let mut maps = vec![0.0; tx * ty * bins];
    let mut hist = vec![0.0; bins];
    for j in 0..ty {
        for i in 0..tx {
            hist.iter_mut().for_each(|v| *v = 0.0);
            for py in j * th..(j + 1) * th {
                for px in i * tw..(i + 1) * tw {
                    let v = plane.get(reflect(px as isize, w), reflect(py as isize, h));
                    hist[bin_of(v, bins)] += 1.0;
                }
            }
            let mut excess = 0.0;
            for v in hist.iter_mut() {
                if *v > clip {
                    excess += *v - clip;
                    *v = clip;
                }
            }
            let share = excess / bins as f64;
            let map = &mut maps[(j * tx + i) * bins..(j * tx + i + 1) * bins];
            let mut cdf = 0.0;
            for (m, v) in map.iter_mut().zip(&hist) {
                cdf += v + share;
                *m = (cdf / tile_pixels).min(1.0);
            }
        }
    }

    // tile-centre interpolation coordinates
    let axis = |pos: usize, size: usize, tiles: usize| -> (usize, usize, f64) {
        let g = (pos as f64 + 0.5) / size as f64 - 0.5;
        if g <= 0.0 {
            return (0, 0, 0.0);
        }
        let i0 = g.floor() as usize;
        if i0 >= tiles - 1 {
            return (tiles - 1, tiles - 1, 0.0);
        }
        (i0, i0 + 1, g - i0 as f64)
    };

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (j0, j1, b) = axis(y, th, ty);
        for x in 0..w {
            let (i0, i1, a) = axis(x, tw, tx);
            let bin = bin_of(plane.get(x, y), bins);
            let m = |i: usize, j: usize| maps[(j * tx + i) * bins + bin];
            let top = (1.0 - a) * m(i0, j0) + a * m(i1, j0);
            let bottom = (1.0 - a) * m(i0, j1) + a * m(i1, j1);
            out.push(((1.0 - b) * top + b * bottom).clamp(0.0, 1.0));
        }
    }
    Plane::from_vec(w, h, out)
}

/// Per-channel CLAHE.
pub fn clahe(image: &FrameBuffer, params: &ClaheParams) -> Result<FrameBuffer> {
    let [r, g, b] = image.planes();
    let planes = [
        clahe_plane(r, params)?,
        clahe_plane(g, params)?,
        clahe_plane(b, params)?,
    ];
    Ok(FrameBuffer::from_planes_unchecked(image.index(), planes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range(p: &Plane) -> f64 {
        let (lo, hi) = p
            .as_slice()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        hi - lo
    }

    #[test]
    fn constant_stays_constant() {
        let p = Plane::filled(50, 37, 0.42);
        let out = clahe_plane(&p, &ClaheParams::default()).unwrap();
        let first = out.get(0, 0);
        assert!(out.as_slice().iter().all(|&v| v == first));
    }

    #[test]
    fn uniform_histogram_is_near_identity() {
        // every 16x16 tile holds each 8-bit level exactly once
        let p = Plane::from_fn(128, 128, |x, y| {
            let (lx, ly) = (x % 16, y % 16);
            let tile = (x / 16 + 3 * (y / 16)) % 256;
            (((lx + 16 * ly) * 7 + tile) % 256) as f64 / 255.0
        });
        let params = ClaheParams {
            clip_fraction: 1.0,
            ..ClaheParams::default()
        };
        let out = clahe_plane(&p, &params).unwrap();
        for (a, b) in out.as_slice().iter().zip(p.as_slice()) {
            assert!((a - b).abs() <= 1.0 / 256.0, "{a} vs {b}");
        }
    }

    #[test]
    fn low_contrast_ramp_expands() {
        let p = Plane::from_fn(128, 128, |x, _| 0.4 + 0.2 * x as f64 / 127.0);
        // a cap of 5% of a tile lets the occupied bins take a quarter of the
        // mass, which is what doubles the global range on a linear ramp
        let params = ClaheParams {
            clip_fraction: 0.05,
            ..ClaheParams::default()
        };
        let out = clahe_plane(&p, &params).unwrap();
        assert!(range(&out) >= 2.0 * range(&p), "{}", range(&out));
    }

    #[test]
    fn handles_grid_that_does_not_divide() {
        let p = Plane::from_fn(124, 132, |x, y| ((x * 31 + y * 17) % 97) as f64 / 96.0);
        let out = clahe_plane(&p, &ClaheParams::default()).unwrap();
        assert_eq!(out.dims(), (124, 132));
        assert!(out.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
