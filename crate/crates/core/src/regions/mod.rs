//! Candidate region filtering: shape, grouping of white/black regions,
//! colour, size, amount of change and shadow statistics.

mod kde;

pub use kde::{kde_pdf, DensityEstimate};

use serde::{Deserialize, Serialize};

use crate::change::bg_sub_frame;
use crate::error::{Error, Result};
use crate::image::{BoundingBox, FrameBuffer, MaskImage, Plane};
use crate::morph::component_pixels;
use crate::texture::SegmentationMap;

/// A connected pixel set of one texton label.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    /// Linear pixel indices (`y * width + x`), ascending.
    pub pixels: Vec<usize>,
    pub bbox: BoundingBox,
    pub label: usize,
    /// Per-channel medians over the contrast-stretched frame, once computed.
    pub color_medians: Option<[f64; 3]>,
}

impl Region {
    pub fn from_pixels(mut pixels: Vec<usize>, width: usize, label: usize) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::InvalidInput("region must contain pixels".into()));
        }
        pixels.sort_unstable();
        pixels.dedup();
        let mut bbox = BoundingBox::point(pixels[0] % width, pixels[0] / width);
        for &p in &pixels[1..] {
            bbox = bbox.including(p % width, p / width);
        }
        Ok(Region {
            pixels,
            bbox,
            label,
            color_medians: None,
        })
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Computes per-channel medians over `adjusted`.
    pub fn with_medians(mut self, adjusted: &FrameBuffer) -> Self {
        self.color_medians = Some(channel_medians(&self.pixels, adjusted));
        self
    }

    fn medians_or(&self, adjusted: &FrameBuffer) -> [f64; 3] {
        self.color_medians
            .unwrap_or_else(|| channel_medians(&self.pixels, adjusted))
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn channel_medians(pixels: &[usize], frame: &FrameBuffer) -> [f64; 3] {
    [0, 1, 2].map(|c| {
        let data = frame.channel(c).as_slice();
        let mut v: Vec<f64> = pixels.iter().map(|&p| data[p]).collect();
        median(&mut v)
    })
}

/// Either a fraction of a reference size or an absolute amount.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Amount {
    Fraction(f64),
    Absolute(f64),
}

impl Amount {
    pub fn resolve(&self, reference: f64) -> f64 {
        match *self {
            Amount::Fraction(f) => f * reference,
            Amount::Absolute(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionThresholds {
    pub aspect_max: f64,
    pub fill_min: f64,
    /// Fraction saturated at each end by the contrast stretch.
    pub saturate: f64,
    pub merge_distance: f64,
    pub white_level: f64,
    pub black_level: f64,
    /// Largest tolerated channel differences |c1-c2|, |c2-c3|, |c1-c3|.
    pub gray_tolerance: [f64; 3],
    /// Channel floors above which a region counts as white steam.
    pub steam_floor: [f64; 3],
    pub area_min: usize,
    /// Upper area bound, relative to the frame area when a fraction.
    pub area_max: Amount,
    /// Required change-mask pixel sum, relative to region area when a fraction.
    pub change_min: Amount,
    pub shadow_peak_location: f64,
    pub shadow_peak_height: f64,
    pub shadow_peak_count: usize,
    pub kde_bandwidth: f64,
    pub kde_grid: usize,
}

impl Default for RegionThresholds {
    fn default() -> Self {
        RegionThresholds {
            aspect_max: 8.0,
            fill_min: 0.15,
            saturate: 0.01,
            merge_distance: 5.0,
            white_level: 0.7,
            black_level: 0.3,
            gray_tolerance: [0.15; 3],
            steam_floor: [0.85; 3],
            area_min: 64,
            area_max: Amount::Fraction(0.25),
            change_min: Amount::Fraction(0.6),
            shadow_peak_location: 0.2,
            shadow_peak_height: 1.0,
            shadow_peak_count: 2,
            kde_bandwidth: 0.05,
            kde_grid: 256,
        }
    }
}

impl RegionThresholds {
    pub fn validate(&self, frame_area: usize) -> Result<()> {
        let max = self.area_max.resolve(frame_area as f64);
        if (self.area_min as f64) >= max {
            return Err(Error::Config(format!(
                "area_min {} must be below area_max {max}",
                self.area_min
            )));
        }
        if !(self.fill_min > 0.0 && self.fill_min <= 1.0) {
            return Err(Error::Config(format!("fill_min {} outside (0, 1]", self.fill_min)));
        }
        if !(self.aspect_max > 0.0) || !(self.kde_bandwidth > 0.0) || self.kde_grid < 2 {
            return Err(Error::Config("aspect_max, kde_bandwidth and kde_grid must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.saturate) {
            return Err(Error::Config(format!("saturate {} outside [0, 0.5)", self.saturate)));
        }
        Ok(())
    }
}

/// 8-connected same-label components. With `change_area`, components whose
/// bounding box misses the change mask's bounding box are skipped.
pub fn extract_regions(seg: &SegmentationMap, change_area: Option<&MaskImage>) -> Vec<Region> {
    let (ids, n) = seg.components();
    let w = seg.width();
    let window = change_area.map(|m| m.bounding_box());
    component_pixels(&ids, n)
        .into_iter()
        .filter(|px| !px.is_empty())
        .map(|px| {
            let label = seg.labels()[px[0]];
            Region::from_pixels(px, w, label).expect("non-empty")
        })
        .filter(|r| match window {
            None => true,
            Some(None) => false,
            Some(Some(bb)) => r.bbox.intersects(&bb),
        })
        .collect()
}

/// Drops thin regions: bounding-box aspect above `aspect_max` or fill
/// ratio below `fill_min`.
pub fn filter_shape(regions: Vec<Region>, aspect_max: f64, fill_min: f64) -> Vec<Region> {
    regions
        .into_iter()
        .filter(|r| {
            let (w, h) = (r.bbox.w as f64, r.bbox.h as f64);
            let aspect = (w / h).max(h / w);
            let fill = r.area() as f64 / (w * h);
            aspect <= aspect_max && fill >= fill_min
        })
        .collect()
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[pos.min(sorted.len() - 1)]
}

/// Per-channel linear stretch mapping the `saturate` and `1 - saturate`
/// quantiles to 0 and 1, clamped. A channel with no spread maps to 0.5.
pub fn contrast_stretch(frame: &FrameBuffer, saturate: f64) -> FrameBuffer {
    let planes = frame.planes().clone().map(|p| {
        let mut sorted = p.as_slice().to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let lo = percentile_sorted(&sorted, saturate);
        let hi = percentile_sorted(&sorted, 1.0 - saturate);
        if hi - lo <= 1e-12 {
            p.map(|_| 0.5)
        } else {
            p.map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        }
    });
    FrameBuffer::from_planes_unchecked(frame.index(), planes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tone {
    White,
    Black,
    Other,
}

/// Unions white regions (every median >= `white_level`) with white regions,
/// and black with black, when their boxes are within `distance` pixels;
/// grouping is transitive.
pub fn merge_bw_regions(
    regions: Vec<Region>,
    adjusted: &FrameBuffer,
    distance: f64,
    white_level: f64,
    black_level: f64,
) -> Vec<Region> {
    let width = adjusted.width();
    let regions: Vec<Region> = regions
        .into_iter()
        .map(|r| {
            let m = r.medians_or(adjusted);
            Region {
                color_medians: Some(m),
                ..r
            }
        })
        .collect();
    let tone = |r: &Region| {
        let m = r.color_medians.expect("set above");
        if m.iter().all(|&c| c >= white_level) {
            Tone::White
        } else if m.iter().all(|&c| c <= black_level) {
            Tone::Black
        } else {
            Tone::Other
        }
    };
    let tones: Vec<Tone> = regions.iter().map(tone).collect();
    let n = regions.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for a in 0..n {
        if tones[a] == Tone::Other {
            continue;
        }
        for b in a + 1..n {
            if tones[b] != tones[a] {
                continue;
            }
            let (gx, gy) = regions[a].bbox.gap(&regions[b].bbox);
            if ((gx * gx + gy * gy) as f64).sqrt() <= distance {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let root = find(&mut parent, i);
        groups[root].push(i);
    }
    groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            if g.len() == 1 {
                return regions[g[0]].clone();
            }
            let label = regions[g[0]].label;
            let pixels = g.iter().flat_map(|&i| regions[i].pixels.iter().copied()).collect();
            Region::from_pixels(pixels, width, label)
                .expect("non-empty")
                .with_medians(adjusted)
        })
        .collect()
}

/// Drops non-grayish regions (any channel difference at or above its
/// tolerance) and white steam-like regions (every channel at or above its
/// floor).
pub fn filter_color(
    regions: Vec<Region>,
    adjusted: &FrameBuffer,
    gray_tolerance: [f64; 3],
    steam_floor: [f64; 3],
) -> Vec<Region> {
    regions
        .into_iter()
        .map(|r| {
            let m = r.medians_or(adjusted);
            Region {
                color_medians: Some(m),
                ..r
            }
        })
        .filter(|r| {
            let [c1, c2, c3] = r.color_medians.expect("set above");
            let colored = (c1 - c2).abs() >= gray_tolerance[0]
                || (c2 - c3).abs() >= gray_tolerance[1]
                || (c1 - c3).abs() >= gray_tolerance[2];
            let white = c1 >= steam_floor[0] && c2 >= steam_floor[1] && c3 >= steam_floor[2];
            !colored && !white
        })
        .collect()
}

/// Keeps `area_min <= area <= area_max`.
pub fn filter_size(regions: Vec<Region>, area_min: usize, area_max: usize) -> Vec<Region> {
    regions
        .into_iter()
        .filter(|r| (area_min..=area_max).contains(&r.area()))
        .collect()
}

/// Drops a region when the change-mask pixels inside it sum to at most
/// `change_min` (resolved against the region area).
pub fn filter_change(regions: Vec<Region>, change: &MaskImage, change_min: Amount) -> Vec<Region> {
    let m = change.as_slice();
    regions
        .into_iter()
        .filter(|r| {
            let sum = r.pixels.iter().filter(|&&p| m[p]).count() as f64;
            sum > change_min.resolve(r.area() as f64)
        })
        .collect()
}

/// Shadow test on one region's samples of `S_t`: the highest density sits
/// above `peak_location` and fewer than `peak_count` peaks exceed
/// `peak_height`.
pub fn is_shadow(samples: &[f64], thr: &RegionThresholds) -> Result<bool> {
    let pdf = kde_pdf(samples, thr.kde_bandwidth, thr.kde_grid)?;
    let high_peaks = pdf
        .peaks()
        .iter()
        .filter(|(_, h)| *h > thr.shadow_peak_height)
        .count();
    Ok(pdf.argmax() > thr.shadow_peak_location && high_peaks < thr.shadow_peak_count)
}

/// Channel-mean of `S_t` at the region's pixels.
pub fn region_samples(region: &Region, s_mean: &Plane) -> Vec<f64> {
    let s = s_mean.as_slice();
    region.pixels.iter().map(|&p| s[p]).collect()
}

/// Removes shadow-like regions. `s_mean` is the channel mean of
/// `bg_sub(I_t, B_t)`.
pub fn filter_shadow(regions: Vec<Region>, s_mean: &Plane, thr: &RegionThresholds) -> Result<Vec<Region>> {
    let mut out = Vec::with_capacity(regions.len());
    for r in regions {
        if !is_shadow(&region_samples(&r, s_mean), thr)? {
            out.push(r);
        }
    }
    Ok(out)
}

/// Channel mean of the frame-vs-background subtraction.
pub fn subtraction_image(current: &FrameBuffer, background: &FrameBuffer) -> Result<Plane> {
    let s = bg_sub_frame(current.planes(), background.planes())?;
    let (w, h) = current.dims();
    let data = (0..w * h)
        .map(|p| (s[0].as_slice()[p] + s[1].as_slice()[p] + s[2].as_slice()[p]) / 3.0)
        .collect();
    Plane::from_vec(w, h, data)
}

/// The final mask and its pixel count.
pub fn finalize(regions: &[Region], width: usize, height: usize) -> (MaskImage, u64) {
    let mut mask = MaskImage::zeros(width, height);
    for r in regions {
        for &p in &r.pixels {
            mask.as_mut_slice()[p] = true;
        }
    }
    let response = mask.count() as u64;
    (mask, response)
}

/// Region counts left after each filter, for diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterTrace {
    pub extracted: usize,
    pub shape: usize,
    pub merged: usize,
    pub color: usize,
    pub size: usize,
    pub change: usize,
    pub shadow: usize,
}

#[derive(Debug, Clone)]
pub struct RegionOutcome {
    pub adjusted: FrameBuffer,
    pub subtraction: Plane,
    /// Regions that reached the shadow test, for KDE dumps.
    pub shadow_candidates: Vec<Region>,
    pub kept: Vec<Region>,
    pub mask: MaskImage,
    pub response: u64,
    pub trace: FilterTrace,
}

/// Runs every filter in order: shape, merge, colour, size, change, shadow.
pub fn filter_regions(
    seg: &SegmentationMap,
    current: &FrameBuffer,
    background: &FrameBuffer,
    change: &MaskImage,
    thr: &RegionThresholds,
) -> Result<RegionOutcome> {
    let (w, h) = current.dims();
    let mut trace = FilterTrace::default();
    let regions = extract_regions(seg, Some(change));
    trace.extracted = regions.len();
    let regions = filter_shape(regions, thr.aspect_max, thr.fill_min);
    trace.shape = regions.len();
    let adjusted = contrast_stretch(current, thr.saturate);
    let regions = merge_bw_regions(regions, &adjusted, thr.merge_distance, thr.white_level, thr.black_level);
    trace.merged = regions.len();
    let regions = filter_color(regions, &adjusted, thr.gray_tolerance, thr.steam_floor);
    trace.color = regions.len();
    let area_max = thr.area_max.resolve((w * h) as f64).floor() as usize;
    let regions = filter_size(regions, thr.area_min, area_max);
    trace.size = regions.len();
    let regions = filter_change(regions, change, thr.change_min);
    trace.change = regions.len();
    let subtraction = subtraction_image(current, background)?;
    let shadow_candidates = regions.clone();
    let kept = filter_shadow(regions, &subtraction, thr)?;
    trace.shadow = kept.len();
    let (mask, response) = finalize(&kept, w, h);
    Ok(RegionOutcome {
        adjusted,
        subtraction,
        shadow_candidates,
        kept,
        mask,
        response,
        trace,
    })
}
