//! Texture segmentation of the contrast-enhanced frame: Laws energy
//! filter responses, PCA reduction and texton clustering.

mod kmeans;
mod pca;
mod segmentation;

pub use kmeans::{assign_nearest, kmeans_pp_init, squared_distance, update_centroids, Elkan, KMeansResult};
pub use pca::{pca_reduce, PcaResult};
pub use segmentation::{smooth_segmentation, SegmentationMap, SegmentationSmoothing};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::FrameBuffer;

pub const L5: [f64; 5] = [1.0, 2.0, 3.0, 2.0, 1.0];
pub const E5: [f64; 5] = [-1.0, -2.0, 0.0, 2.0, 1.0];
pub const S5: [f64; 5] = [-1.0, 0.0, 2.0, 0.0, -1.0];
pub const W5: [f64; 5] = [-1.0, 2.0, 0.0, -2.0, 1.0];
pub const R5: [f64; 5] = [1.0, -4.0, 6.0, -4.0, 1.0];

/// Generator vectors in bank order.
pub const LAWS_VECTORS: [(&str, [f64; 5]); 5] =
    [("L5", L5), ("E5", E5), ("S5", S5), ("W5", W5), ("R5", R5)];

/// One separable mask: `mask[r][c] = column[r] * row[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LawsMask {
    pub name: String,
    pub column: [f64; 5],
    pub row: [f64; 5],
}

impl LawsMask {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.column[r] * self.row[c]
    }

    pub fn matrix(&self) -> [[f64; 5]; 5] {
        let mut m = [[0.0; 5]; 5];
        for (r, line) in m.iter_mut().enumerate() {
            for (c, v) in line.iter_mut().enumerate() {
                *v = self.at(r, c);
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub masks: Vec<LawsMask>,
}

impl FilterBank {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Mask built from generator vectors `i` (rows) and `j` (columns).
    pub fn mask(&self, i: usize, j: usize) -> &LawsMask {
        &self.masks[i * LAWS_VECTORS.len() + j]
    }
}

/// All 25 outer products in row-major generator order (L5L5, L5E5, ...).
pub fn build_filter_bank() -> FilterBank {
    let mut masks = Vec::with_capacity(25);
    for (ni, vi) in LAWS_VECTORS {
        for (nj, vj) in LAWS_VECTORS {
            masks.push(LawsMask {
                name: format!("{ni}{nj}"),
                column: vi,
                row: vj,
            });
        }
    }
    FilterBank { masks }
}

/// Row-per-pixel feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dims: usize,
    data: Vec<f64>,
    centered: bool,
}

impl FeatureMatrix {
    pub fn from_vec(rows: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dims {
            return Err(Error::InvalidInput(format!(
                "feature data of length {} is not {rows}x{dims}",
                data.len()
            )));
        }
        Ok(FeatureMatrix {
            rows,
            dims,
            data,
            centered: false,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dims];
        for row in self.data.chunks_exact(self.dims.max(1)) {
            for (a, v) in m.iter_mut().zip(row) {
                *a += v;
            }
        }
        let n = self.rows.max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Subtracts column means in place.
    pub fn center(&mut self) {
        let means = self.column_means();
        for row in self.data.chunks_exact_mut(self.dims.max(1)) {
            for (v, m) in row.iter_mut().zip(&means) {
                *v -= m;
            }
        }
        self.centered = true;
    }

    pub fn centered(mut self) -> Self {
        self.center();
        self
    }
}

/// Filter responses of the mean-subtracted channels, `25 * 3` columns laid
/// out channel-major (`channel * 25 + mask`).
pub fn compute_features(image: &FrameBuffer, bank: &FilterBank) -> FeatureMatrix {
    let (w, h) = image.dims();
    let n = w * h;
    let dims = 3 * bank.len();
    let mut data = vec![0.0; n * dims];
    for (c, plane) in image.planes().iter().enumerate() {
        let mean = plane.mean();
        let centered = plane.map(|v| v - mean);
        for (m, mask) in bank.masks.iter().enumerate() {
            let resp = centered.convolve_separable(&mask.column, &mask.row);
            let col = c * bank.len() + m;
            for (p, v) in resp.as_slice().iter().enumerate() {
                data[p * dims + col] = *v;
            }
        }
    }
    FeatureMatrix {
        rows: n,
        dims,
        data,
        centered: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureParams {
    pub textons: usize,
    pub energy: f64,
    pub max_iterations: usize,
    /// Row cap for fitting the PCA basis.
    pub pca_fit_rows: usize,
    pub smoothing: SegmentationSmoothing,
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            textons: 6,
            energy: 0.98,
            max_iterations: 100,
            pca_fit_rows: 50_000,
            smoothing: SegmentationSmoothing::default(),
        }
    }
}

impl TextureParams {
    pub fn validate(&self) -> Result<()> {
        if self.textons == 0 {
            return Err(Error::Config("texton count must be positive".into()));
        }
        if !(self.energy > 0.0 && self.energy <= 1.0) {
            return Err(Error::Config(format!("pca energy {} outside (0, 1]", self.energy)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("k-means iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// Clusters feature rows into `k` textons and reshapes the labels to the
/// frame grid.
pub fn cluster_textons(
    features: &FeatureMatrix,
    width: usize,
    height: usize,
    k: usize,
    max_iterations: usize,
    seed: u64,
) -> Result<(SegmentationMap, KMeansResult)> {
    if features.rows() != width * height {
        return Err(Error::InvalidInput(format!(
            "{} feature rows for a {width}x{height} frame",
            features.rows()
        )));
    }
    if k == 0 || k > features.rows() {
        return Err(Error::InvalidInput(format!(
            "cannot form {k} clusters from {} rows",
            features.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans_pp_init(features.as_slice(), features.dims(), k, &mut rng);
    let result = Elkan::new(features.as_slice(), features.dims()).run(init, max_iterations);
    let map = SegmentationMap::new(width, height, k, result.labels.clone())?;
    Ok((map, result))
}

/// Full texture stage: features, PCA, clustering and smoothing. Returns the
/// raw and smoothed segmentations.
pub fn segment(
    enhanced: &FrameBuffer,
    bank: &FilterBank,
    params: &TextureParams,
    seed: u64,
) -> Result<(SegmentationMap, SegmentationMap)> {
    let (w, h) = enhanced.dims();
    let features = compute_features(enhanced, bank).centered();
    let reduced = pca_reduce(&features, params.energy, params.pca_fit_rows, seed)?;
    let k = params.textons.min(reduced.projected.rows());
    let (raw, _) = cluster_textons(&reduced.projected, w, h, k, params.max_iterations, seed)?;
    let smooth = smooth_segmentation(&raw, &params.smoothing);
    Ok((raw, smooth))
}
