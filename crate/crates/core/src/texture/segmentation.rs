use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{reflect, MaskImage};
use crate::morph::{self, label_components, NEIGHBOURS_8};

/// Per-pixel texton labels in `[0, k)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    width: usize,
    height: usize,
    k: usize,
    labels: Vec<usize>,
}

impl SegmentationMap {
    pub fn new(width: usize, height: usize, k: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidInput(format!("label {bad} not below k={k}")));
        }
        Ok(SegmentationMap {
            width,
            height,
            k,
            labels,
        })
    }

    pub fn uniform(width: usize, height: usize, k: usize, label: usize) -> Self {
        SegmentationMap {
            width,
            height,
            k,
            labels: vec![label; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x]
    }

    /// 8-connected components of equal label: `(component id per pixel, count)`.
    pub fn components(&self) -> (Vec<u32>, usize) {
        let l = &self.labels;
        label_components(self.width, self.height, |_| true, |a, b| l[a] == l[b])
    }

    /// Horizontal plus vertical neighbour pairs with different labels.
    pub fn transitions(&self) -> usize {
        let (w, h) = self.dims();
        let mut n = 0;
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w && self.get(x, y) != self.get(x + 1, y) {
                    n += 1;
                }
                if y + 1 < h && self.get(x, y) != self.get(x, y + 1) {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn mask_of(&self, label: usize) -> MaskImage {
        MaskImage::from_vec(self.width, self.height, self.labels.iter().map(|&l| l == label).collect())
            .expect("dims")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationSmoothing {
    pub min_area: usize,
    pub median_radius: usize,
    pub closing_radius: usize,
}

impl Default for SegmentationSmoothing {
    fn default() -> Self {
        SegmentationSmoothing {
            min_area: 64,
            median_radius: 2,
            closing_radius: 1,
        }
    }
}

/// Small-region absorption, median vote, then per-label closing (later
/// labels overwrite earlier ones). A last absorption pass keeps the output
/// free of components below `min_area`.
pub fn smooth_segmentation(map: &SegmentationMap, params: &SegmentationSmoothing) -> SegmentationMap {
    let absorbed = absorb_small(map, params.min_area);
    let voted = median_vote(&absorbed, params.median_radius);
    let closed = close_labels(&voted, params.closing_radius);
    absorb_small(&closed, params.min_area)
}

// Reassigns every component below `min_area` to the most frequent label on
// its outer 8-neighbour border (ties to the lowest label) until none remain.
fn absorb_small(map: &SegmentationMap, min_area: usize) -> SegmentationMap {
    let mut out = map.clone();
    if min_area <= 1 {
        return out;
    }
    let (w, h) = map.dims();
    loop {
        let (ids, n) = out.components();
        let members = morph::component_pixels(&ids, n);
        let mut changed = false;
        for (id, pixels) in members.iter().enumerate() {
            if pixels.len() >= min_area {
                continue;
            }
            let mut votes = vec![0usize; out.k];
            for &p in pixels {
                let (px, py) = ((p % w) as isize, (p / w) as isize);
                for (dx, dy) in NEIGHBOURS_8 {
                    let (nx, ny) = (px + dx, py + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if ids[q] != id as u32 {
                        votes[out.labels[q]] += 1;
                    }
                }
            }
            let Some((best, &count)) = votes
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            else {
                continue;
            };
            if count == 0 {
                continue;
            }
            let current = out.labels[pixels[0]];
            if best != current {
                for &p in pixels {
                    out.labels[p] = best;
                }
                changed = true;
            }
        }
        if !changed {
            return out;
        }
    }
}

// Most frequent label in the reflected window; ties keep the centre label
// when it is among the leaders, else the lowest tied label.
fn median_vote(map: &SegmentationMap, radius: usize) -> SegmentationMap {
    if radius == 0 {
        return map.clone();
    }
    let (w, h) = map.dims();
    let r = radius as isize;
    let mut votes = vec![0usize; map.k];
    let mut labels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            votes.iter_mut().for_each(|v| *v = 0);
            for dy in -r..=r {
                let sy = reflect(y as isize + dy, h);
                for dx in -r..=r {
                    let sx = reflect(x as isize + dx, w);
                    votes[map.labels[sy * w + sx]] += 1;
                }
            }
            let top = *votes.iter().max().expect("k >= 1");
            let centre = map.labels[y * w + x];
            let pick = if votes[centre] == top {
                centre
            } else {
                votes.iter().position(|&v| v == top).expect("max exists")
            };
            labels.push(pick);
        }
    }
    SegmentationMap {
        width: w,
        height: h,
        k: map.k,
        labels,
    }
}

fn close_labels(map: &SegmentationMap, radius: usize) -> SegmentationMap {
    if radius == 0 {
        return map.clone();
    }
    let mut out = map.clone();
    for label in 0..map.k {
        let closed = morph::close(&map.mask_of(label), radius);
        for (dst, &set) in out.labels.iter_mut().zip(closed.as_slice()) {
            if set {
                *dst = label;
            }
        }
    }
    out
}
