//! Raster containers shared by every stage.
//!
//! All rasters are row-major. Colour frames are stored as three planes so
//! per-channel filters can run on contiguous memory.

use std::path::Path;

use crate::error::{Error, Result};

/// Symmetric reflection of a possibly out-of-range coordinate (edge sample
/// repeated: `-1 -> 0`, `-2 -> 1`, `n -> n-1`).
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// A single-channel real raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "plane of {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with symmetric reflection outside the raster.
    #[inline]
    pub fn get_reflected(&self, x: isize, y: isize) -> f64 {
        self.get(reflect(x, self.width), reflect(y, self.height))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Separable convolution: `column` runs along y, `row` along x, both
    /// odd-length and centred. Boundaries reflect.
    pub fn convolve_separable(&self, column: &[f64], row: &[f64]) -> Plane {
        let (w, h) = self.dims();
        let rr = (row.len() / 2) as isize;
        let rc = (column.len() / 2) as isize;
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            let line = &self.data[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in row.iter().enumerate() {
                    // true convolution: kernel index k pairs with x - (k - r)
                    let sx = reflect(x as isize - (k as isize - rr), w);
                    acc += kv * line[sx];
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for (k, &kv) in column.iter().enumerate() {
                let sy = reflect(y as isize - (k as isize - rc), h);
                let src = &tmp[sy * w..(sy + 1) * w];
                let dst = &mut out[y * w..(y + 1) * w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += kv * s;
                }
            }
        }
        Plane {
            width: w,
            height: h,
            data: out,
        }
    }
}

/// A colour frame with every sample in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffer {
    index: u32,
    planes: [Plane; 3],
}

impl FrameBuffer {
    pub fn new(index: u32, planes: [Plane; 3]) -> Result<Self> {
        let dims = planes[0].dims();
        if dims.0 == 0 || dims.1 == 0 {
            return Err(Error::InvalidInput("frame has zero extent".into()));
        }
        for p in &planes[1..] {
            if p.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: p.dims(),
                });
            }
        }
        if planes
            .iter()
            .flat_map(|p| p.as_slice())
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidInput(format!(
                "frame {index} has samples outside [0, 1]"
            )));
        }
        Ok(FrameBuffer { index, planes })
    }

    /// Builds a frame from an interleaved RGB sample buffer.
    pub fn from_interleaved(index: u32, width: usize, height: usize, rgb: &[f64]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::InvalidInput(format!(
                "interleaved buffer length {} does not match {width}x{height}x3",
                rgb.len()
            )));
        }
        let planes = [0, 1, 2].map(|c| {
            Plane {
                width,
                height,
                data: rgb.iter().skip(c).step_by(3).copied().collect(),
            }
        });
        FrameBuffer::new(index, planes)
    }

    pub fn constant(index: u32, width: usize, height: usize, value: f64) -> Self {
        let p = Plane::filled(width, height, value.clamp(0.0, 1.0));
        FrameBuffer {
            index,
            planes: [p.clone(), p.clone(), p],
        }
    }

    pub(crate) fn from_planes_unchecked(index: u32, planes: [Plane; 3]) -> Self {
        debug_assert!(planes.iter().all(|p| p.dims() == planes[0].dims()));
        FrameBuffer { index, planes }
    }

    #[inline]
    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn with_index(mut self, index: u32) -> Self {
        self.index = index;
        self
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.planes[0].width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.planes[0].height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.planes[0].dims()
    }

    pub fn planes(&self) -> &[Plane; 3] {
        &self.planes
    }

    pub fn channel(&self, c: usize) -> &Plane {
        &self.planes[c]
    }

    pub fn into_planes(self) -> [Plane; 3] {
        self.planes
    }

    /// Per-pixel mean over the three channels.
    pub fn channel_mean(&self) -> Plane {
        let [r, g, b] = &self.planes;
        Plane {
            width: r.width,
            height: r.height,
            data: r
                .data
                .iter()
                .zip(&g.data)
                .zip(&b.data)
                .map(|((a, b), c)| (a + b + c) / 3.0)
                .collect(),
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        planes_to_rgb8(&self.planes)
    }
}

pub(crate) fn planes_to_rgb8(planes: &[Plane; 3]) -> image::RgbImage {
    let (w, h) = planes[0].dims();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (planes[c].get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// A strictly binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl MaskImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, false)
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        MaskImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "mask of {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(MaskImage {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        MaskImage {
            width,
            height,
            data,
        }
    }

    /// Thresholds a plane: set where `value > threshold`.
    pub fn threshold(plane: &Plane, threshold: f64) -> Self {
        MaskImage {
            width: plane.width(),
            height: plane.height(),
            data: plane.as_slice().iter().map(|&v| v > threshold).collect(),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    fn check_dims(&self, other: &MaskImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    pub fn and(&self, other: &MaskImage) -> Result<MaskImage> {
        self.check_dims(other)?;
        Ok(self.zip_with(other, |a, b| a && b))
    }

    pub fn or(&self, other: &MaskImage) -> Result<MaskImage> {
        self.check_dims(other)?;
        Ok(self.zip_with(other, |a, b| a || b))
    }

    fn zip_with(&self, other: &MaskImage, f: impl Fn(bool, bool) -> bool) -> MaskImage {
        MaskImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn invert(&self) -> MaskImage {
        MaskImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    /// Tight bounding box `(x, y, w, h)` of the set pixels.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bb: Option<BoundingBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => BoundingBox::point(x, y),
                        Some(b) => b.including(x, y),
                    });
                }
            }
        }
        bb
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        })
    }
}

/// Axis-aligned box, `w`/`h` inclusive of the end pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub fn point(x: usize, y: usize) -> Self {
        BoundingBox { x, y, w: 1, h: 1 }
    }

    pub fn including(self, x: usize, y: usize) -> Self {
        let x0 = self.x.min(x);
        let y0 = self.y.min(y);
        let x1 = (self.x + self.w).max(x + 1);
        let y1 = (self.y + self.h).max(y + 1);
        BoundingBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn union(self, other: BoundingBox) -> Self {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = (self.x + self.w).max(other.x + other.w);
        let y1 = (self.y + self.h).max(other.y + other.h);
        BoundingBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    /// Empty columns/rows between two boxes along each axis; zero when they
    /// overlap or touch on that axis.
    pub fn gap(&self, other: &BoundingBox) -> (usize, usize) {
        let gx = other
            .x
            .saturating_sub(self.x + self.w)
            .max(self.x.saturating_sub(other.x + other.w));
        let gy = other
            .y
            .saturating_sub(self.y + self.h)
            .max(self.y.saturating_sub(other.y + other.h));
        (gx, gy)
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }
}

pub(crate) fn save_png(img: &image::DynamicImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_repeats_edge_sample() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(2, 5), 2);
        assert_eq!(reflect(-11, 5), 0);
    }

    #[test]
    fn frame_rejects_out_of_range_samples() {
        let bad = Plane::filled(2, 2, 1.5);
        let ok = Plane::zeros(2, 2);
        assert!(FrameBuffer::new(0, [bad, ok.clone(), ok]).is_err());
    }

    #[test]
    fn bbox_gap_counts_empty_columns() {
        let a = BoundingBox { x: 0, y: 0, w: 10, h: 5 };
        let b = BoundingBox { x: 13, y: 2, w: 4, h: 4 };
        assert_eq!(a.gap(&b), (3, 0));
        assert_eq!(b.gap(&a), (3, 0));
        assert!(!a.intersects(&b));
    }

    #[test]
    fn separable_identity_kernel_is_noop() {
        let p = Plane::from_fn(7, 5, |x, y| (x * 3 + y) as f64 / 40.0);
        let out = p.convolve_separable(&[0.0, 1.0, 0.0], &[1.0]);
        assert_eq!(out, p);
    }
}
