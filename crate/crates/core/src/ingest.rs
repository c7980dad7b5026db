//! Frame loading, ROI cropping, downsampling and the rolling median
//! background.

use std::collections::{BTreeMap, VecDeque};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{FrameBuffer, Plane};

/// Detection window in source pixels plus the downsample divisor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoiSpec {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub downsample: u32,
}

impl Default for RoiSpec {
    fn default() -> Self {
        RoiSpec::full(528, 496, 4)
    }
}

impl RoiSpec {
    pub fn full(width: u32, height: u32, downsample: u32) -> Self {
        RoiSpec {
            x: 0,
            y: 0,
            width,
            height,
            downsample,
        }
    }

    /// Checks divisibility; bounds need the source size, see [`RoiSpec::check_bounds`].
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.downsample == 0 {
            return Err(Error::Config(format!(
                "roi width, height and downsample must be positive: {self:?}"
            )));
        }
        if !self.width.is_multiple_of(self.downsample) || !self.height.is_multiple_of(self.downsample) {
            return Err(Error::Config(format!(
                "roi {}x{} is not divisible by downsample factor {}",
                self.width, self.height, self.downsample
            )));
        }
        Ok(())
    }

    pub fn check_bounds(&self, source_width: u32, source_height: u32) -> Result<()> {
        self.validate()?;
        if self.x as u64 + self.width as u64 > source_width as u64
            || self.y as u64 + self.height as u64 > source_height as u64
        {
            return Err(Error::Config(format!(
                "roi {self:?} exceeds source image {source_width}x{source_height}"
            )));
        }
        Ok(())
    }

    /// Working (downsampled) dimensions.
    pub fn output_dims(&self) -> (usize, usize) {
        (
            (self.width / self.downsample) as usize,
            (self.height / self.downsample) as usize,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DownsampleKernel {
    /// Mean of each `factor x factor` block.
    #[default]
    BlockMean,
    /// Top-left sample of each block.
    Nearest,
}

pub fn downsample(frame: &FrameBuffer, factor: usize) -> Result<FrameBuffer> {
    downsample_with(frame, factor, DownsampleKernel::BlockMean)
}

pub fn downsample_with(
    frame: &FrameBuffer,
    factor: usize,
    kernel: DownsampleKernel,
) -> Result<FrameBuffer> {
    let (w, h) = frame.dims();
    if factor == 0 || w % factor != 0 || h % factor != 0 {
        return Err(Error::InvalidInput(format!(
            "{w}x{h} frame is not divisible by downsample factor {factor}"
        )));
    }
    if factor == 1 {
        return Ok(frame.clone());
    }
    let (ow, oh) = (w / factor, h / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let planes = frame.planes().clone().map(|p| match kernel {
        DownsampleKernel::BlockMean => Plane::from_fn(ow, oh, |x, y| {
            let mut acc = 0.0;
            for sy in y * factor..(y + 1) * factor {
                for sx in x * factor..(x + 1) * factor {
                    acc += p.get(sx, sy);
                }
            }
            // the mean of samples in [0,1] can round a hair outside
            (acc * norm).clamp(0.0, 1.0)
        }),
        DownsampleKernel::Nearest => Plane::from_fn(ow, oh, |x, y| p.get(x * factor, y * factor)),
    });
    Ok(FrameBuffer::from_planes_unchecked(frame.index(), planes))
}

/// 8-bit RGB to unit range (`v / 255`).
pub fn to_unit_range(index: u32, image: &image::RgbImage) -> FrameBuffer {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let planes = [0, 1, 2].map(|c| {
        Plane::from_fn(w, h, |x, y| {
            image.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
        })
    });
    FrameBuffer::from_planes_unchecked(index, planes)
}

/// Crop, convert and downsample one decoded source image.
pub fn prepare_frame(
    index: u32,
    source: &image::RgbImage,
    roi: &RoiSpec,
    kernel: DownsampleKernel,
) -> Result<FrameBuffer> {
    roi.check_bounds(source.width(), source.height())?;
    let crop = image::imageops::crop_imm(source, roi.x, roi.y, roi.width, roi.height).to_image();
    downsample_with(&to_unit_range(index, &crop), roi.downsample as usize, kernel)
}

/// Rolling per-pixel median over the last `capacity` frames.
#[derive(Debug, Clone)]
pub struct BackgroundModel {
    capacity: usize,
    dims: Option<(usize, usize)>,
    window: VecDeque<FrameBuffer>,
}

impl BackgroundModel {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("background window capacity must be positive".into()));
        }
        Ok(BackgroundModel {
            capacity,
            dims: None,
            window: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn is_ready(&self) -> bool {
        self.window.len() >= self.capacity
    }

    pub fn window(&self) -> impl Iterator<Item = &FrameBuffer> {
        self.window.iter()
    }

    /// Appends a frame, evicting the oldest once over capacity.
    pub fn update(&mut self, frame: FrameBuffer) -> Result<()> {
        match self.dims {
            Some(d) if d != frame.dims() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: frame.dims(),
                })
            }
            _ => self.dims = Some(frame.dims()),
        }
        self.window.push_back(frame);
        while self.window.len() > self.capacity {
            self.window.pop_front();
        }
        Ok(())
    }

    /// Per-pixel, per-channel median of the window. Even counts average the
    /// two central order statistics.
    pub fn background(&self) -> Result<FrameBuffer> {
        if !self.is_ready() {
            return Err(Error::BackgroundUndefined {
                have: self.window.len(),
                need: self.capacity,
            });
        }
        let (w, h) = self.dims.expect("non-empty window");
        let n = self.window.len();
        let index = self.window.back().map(|f| f.index()).unwrap_or(0);
        let planes = [0, 1, 2].map(|c| {
            let sources: Vec<&[f64]> = self.window.iter().map(|f| f.channel(c).as_slice()).collect();
            let mut out = vec![0.0; w * h];
            out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
                let mut buf = vec![0.0; n];
                for (x, dst) in row.iter_mut().enumerate() {
                    let p = y * w + x;
                    for (b, s) in buf.iter_mut().zip(&sources) {
                        *b = s[p];
                    }
                    *dst = median_in_place(&mut buf);
                }
            });
            Plane::from_vec(w, h, out).expect("dims")
        });
        Ok(FrameBuffer::from_planes_unchecked(index, planes))
    }
}

fn median_in_place(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (lower, upper, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (below + upper) / 2.0
    }
}

/// Image files of one day keyed by the frame index in their file stem.
#[derive(Debug, Clone)]
pub struct FrameSource {
    dir: PathBuf,
    files: BTreeMap<u32, PathBuf>,
}

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

impl FrameSource {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut names = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let path = entry.path();
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase);
            if ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
                names.push(path);
            }
        }
        // lexicographic name order is temporal order
        names.sort();
        let mut files = BTreeMap::new();
        for path in names {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            if let Ok(index) = stem.parse::<u32>() {
                files.insert(index, path);
            }
        }
        Ok(FrameSource { dir, files })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.files.keys().copied()
    }

    pub fn path(&self, index: u32) -> Option<&Path> {
        self.files.get(&index).map(PathBuf::as_path)
    }

    /// Source dimensions, read from the header of the first file.
    pub fn source_dims(&self) -> Result<(u32, u32)> {
        let (_, path) = self
            .files
            .iter()
            .next()
            .ok_or_else(|| Error::InvalidInput(format!("no frames in {}", self.dir.display())))?;
        image::image_dimensions(path).map_err(|e| Error::format(path, e))
    }

    pub fn decode(&self, index: u32) -> Result<image::RgbImage> {
        let path = self.files.get(&index).ok_or_else(|| Error::Frame {
            index,
            message: "missing frame file".into(),
        })?;
        let img = image::open(path).map_err(|e| Error::Frame {
            index,
            message: format!("{}: {e}", path.display()),
        })?;
        Ok(img.to_rgb8())
    }

    pub fn load(&self, index: u32, roi: &RoiSpec, kernel: DownsampleKernel) -> Result<FrameBuffer> {
        let img = self.decode(index)?;
        prepare_frame(index, &img, roi, kernel).map_err(|e| match e {
            e @ Error::Frame { .. } => e,
            other => Error::Frame {
                index,
                message: other.to_string(),
            },
        })
    }

    /// Decodes a batch in parallel; results come back in request order.
    pub fn load_batch(
        &self,
        indices: &[u32],
        roi: &RoiSpec,
        kernel: DownsampleKernel,
    ) -> Vec<Result<FrameBuffer>> {
        indices
            .par_iter()
            .map(|&i| self.load(i, roi, kernel))
            .collect()
    }

    /// Ordered stream of prepared frames over `range`. The ROI is checked
    /// against the source size before anything is yielded.
    pub fn load_sequence(
        &self,
        roi: RoiSpec,
        range: Range<u32>,
        kernel: DownsampleKernel,
    ) -> Result<impl Iterator<Item = Result<FrameBuffer>> + '_> {
        let (sw, sh) = self.source_dims()?;
        roi.check_bounds(sw, sh)?;
        Ok(range.map(move |i| self.load(i, &roi, kernel)))
    }
}

/// Convenience wrapper over [`FrameSource::load_sequence`] collecting every
/// frame result.
pub fn load_sequence(
    dir: impl AsRef<Path>,
    roi: RoiSpec,
    range: Range<u32>,
) -> Result<Vec<Result<FrameBuffer>>> {
    let source = FrameSource::open(dir)?;
    let frames = source.load_sequence(roi, range, DownsampleKernel::BlockMean)?;
    Ok(frames.collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, index: u32, w: usize, h: usize) -> FrameBuffer {
        let planes = [0, 1, 2].map(|_| Plane::from_fn(w, h, |_, _| rng.random::<f64>()));
        FrameBuffer::new(index, planes).unwrap()
    }

    #[test]
    fn downsample_constant_and_block_mean() {
        let f = FrameBuffer::constant(0, 4, 4, 0.5);
        let d = downsample(&f, 4).unwrap();
        assert_eq!(d.dims(), (1, 1));
        assert_eq!(d.channel(0).get(0, 0), 0.5);

        let p = Plane::from_vec(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let f = FrameBuffer::new(0, [p.clone(), p.clone(), p]).unwrap();
        assert_eq!(downsample(&f, 2).unwrap().channel(1).get(0, 0), 0.5);
    }

    #[test]
    fn downsample_matches_block_mean_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_frame(&mut rng, 0, 8, 8);
        let d = downsample(&f, 4).unwrap();
        for c in 0..3 {
            for oy in 0..2 {
                for ox in 0..2 {
                    let mut s = 0.0;
                    for y in 0..4 {
                        for x in 0..4 {
                            s += f.channel(c).get(ox * 4 + x, oy * 4 + y);
                        }
                    }
                    assert!((d.channel(c).get(ox, oy) - s / 16.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn downsample_rejects_non_divisible() {
        let f = FrameBuffer::constant(0, 6, 8, 0.1);
        assert!(downsample(&f, 4).is_err());
    }

    #[test]
    fn nearest_kernel_takes_block_origin() {
        let p = Plane::from_fn(4, 4, |x, y| (x + 4 * y) as f64 / 16.0);
        let f = FrameBuffer::new(0, [p.clone(), p.clone(), p]).unwrap();
        let d = downsample_with(&f, 2, DownsampleKernel::Nearest).unwrap();
        assert_eq!(d.channel(0).as_slice(), &[0.0, 2.0 / 16.0, 8.0 / 16.0, 10.0 / 16.0]);
    }

    #[test]
    fn unit_range_endpoints() {
        let img = image::RgbImage::from_fn(3, 1, |x, _| {
            let v = [0u8, 255, 128][x as usize];
            image::Rgb([v, v, v])
        });
        let f = to_unit_range(0, &img);
        assert_eq!(f.channel(0).get(0, 0), 0.0);
        assert_eq!(f.channel(0).get(1, 0), 1.0);
        assert!((f.channel(0).get(2, 0) - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn roi_divisibility_and_bounds() {
        assert!(RoiSpec::full(1984, 2112, 4).validate().is_ok());
        assert!(RoiSpec::full(1985, 2112, 4).validate().is_err());
        assert!(RoiSpec { x: 8, ..RoiSpec::full(1984, 2112, 4) }
            .check_bounds(1984, 2112)
            .is_err());
        assert_eq!(RoiSpec::full(1984, 2112, 4).output_dims(), (496, 528));
    }

    #[test]
    fn background_undefined_until_full() {
        let mut m = BackgroundModel::new(3).unwrap();
        m.update(FrameBuffer::constant(0, 2, 2, 0.1)).unwrap();
        assert!(matches!(m.background(), Err(Error::BackgroundUndefined { have: 1, need: 3 })));
    }

    #[test]
    fn background_even_median_averages_central_pair() {
        let mut m = BackgroundModel::new(60).unwrap();
        for i in 0..60u32 {
            let v = (i + 1) as f64 / 60.0;
            m.update(FrameBuffer::constant(i, 1, 1, v)).unwrap();
        }
        let b = m.background().unwrap();
        let expected = (30.0 / 60.0 + 31.0 / 60.0) / 2.0;
        assert_eq!(b.channel(2).get(0, 0), expected);
    }

    #[test]
    fn background_rejects_dimension_change() {
        let mut m = BackgroundModel::new(2).unwrap();
        m.update(FrameBuffer::constant(0, 2, 2, 0.1)).unwrap();
        assert!(m.update(FrameBuffer::constant(1, 3, 2, 0.1)).is_err());
    }

    #[test]
    fn background_survives_minority_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = FrameBuffer::constant(0, 4, 3, 0.4);
        let mut m = BackgroundModel::new(60).unwrap();
        for i in 0..31 {
            m.update(base.clone().with_index(i)).unwrap();
        }
        for i in 31..60 {
            m.update(random_frame(&mut rng, i, 4, 3)).unwrap();
        }
        let b = m.background().unwrap();
        for c in 0..3 {
            assert!(b.channel(c).as_slice().iter().all(|&v| v == 0.4));
        }
    }

    #[test]
    fn background_is_order_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frames: Vec<_> = (0..10).map(|i| random_frame(&mut rng, i, 5, 4)).collect();
        let mut a = BackgroundModel::new(10).unwrap();
        let mut b = BackgroundModel::new(10).unwrap();
        for f in &frames {
            a.update(f.clone()).unwrap();
        }
        for f in frames.iter().rev() {
            b.update(f.clone()).unwrap();
        }
        assert_eq!(
            a.background().unwrap().planes(),
            b.background().unwrap().planes()
        );
    }
}
