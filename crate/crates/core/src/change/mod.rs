//! Change detection: high-frequency (DoG) change, intensity change on
//! contrast-enhanced frames, and their conjunction.

mod clahe;

pub use clahe::{clahe, clahe_plane, ClaheParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{FrameBuffer, MaskImage, Plane};
use crate::morph;

/// Difference-of-Gaussians band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DogParams {
    pub sigma1: f64,
    pub sigma2: f64,
    pub kernel_radius: usize,
}

impl Default for DogParams {
    fn default() -> Self {
        DogParams {
            sigma1: 1.0,
            sigma2: 2.0,
            kernel_radius: 6,
        }
    }
}

impl DogParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma1 < self.sigma2) {
            return Err(Error::Config(format!(
                "dog sigmas must satisfy 0 < sigma1 < sigma2, got {} and {}",
                self.sigma1, self.sigma2
            )));
        }
        if (self.kernel_radius as f64) < (3.0 * self.sigma2).ceil() {
            return Err(Error::Config(format!(
                "dog kernel radius {} is below ceil(3 * sigma2)",
                self.kernel_radius
            )));
        }
        Ok(())
    }
}

/// Thresholds of the change stages, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChangeThresholds {
    /// On the DoG background subtraction.
    pub dog_response: f64,
    /// On the local entropy of the thresholded DoG change.
    pub dog_entropy: f64,
    /// On the enhanced frame vs. enhanced background.
    pub intensity_background: f64,
    /// On the enhanced frame vs. the enhanced frame two steps back.
    pub intensity_frame: f64,
}

impl Default for ChangeThresholds {
    fn default() -> Self {
        ChangeThresholds {
            dog_response: 0.1,
            dog_entropy: 0.6,
            intensity_background: 0.1,
            intensity_frame: 0.03,
        }
    }
}

impl ChangeThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dog_response", self.dog_response),
            ("dog_entropy", self.dog_entropy),
            ("intensity_background", self.intensity_background),
            ("intensity_frame", self.intensity_frame),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("threshold {name}={v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Closing, median and small-component removal applied to change masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothParams {
    pub closing_radius: usize,
    pub median_radius: usize,
    pub min_area: usize,
}

impl Default for SmoothParams {
    fn default() -> Self {
        SmoothParams {
            closing_radius: 1,
            median_radius: 2,
            min_area: 64,
        }
    }
}

fn gaussian_1d(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let g: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// The 2-D DoG kernel, `(2r+1)^2` row-major; each Gaussian sums to one.
pub fn dog_kernel(params: &DogParams) -> Vec<f64> {
    let g1 = gaussian_1d(params.sigma1, params.kernel_radius);
    let g2 = gaussian_1d(params.sigma2, params.kernel_radius);
    let n = g1.len();
    let mut k = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            k.push(g1[y] * g1[x] - g2[y] * g2[x]);
        }
    }
    k
}

/// `(G_s1 - G_s2) * plane` with reflected boundaries.
pub fn dog_plane(plane: &Plane, params: &DogParams) -> Result<Plane> {
    params.validate()?;
    let (w, h) = plane.dims();
    if params.kernel_radius >= w.min(h) {
        return Err(Error::InvalidInput(format!(
            "dog kernel radius {} does not fit a {w}x{h} image",
            params.kernel_radius
        )));
    }
    let g1 = gaussian_1d(params.sigma1, params.kernel_radius);
    let g2 = gaussian_1d(params.sigma2, params.kernel_radius);
    let a = plane.convolve_separable(&g1, &g1);
    let b = plane.convolve_separable(&g2, &g2);
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y).collect();
    Plane::from_vec(w, h, data)
}

/// Per-channel DoG of a frame.
pub fn dog_filter(image: &FrameBuffer, params: &DogParams) -> Result<[Plane; 3]> {
    let [r, g, b] = image.planes();
    Ok([dog_plane(r, params)?, dog_plane(g, params)?, dog_plane(b, params)?])
}

/// Illumination-normalised difference `|I - B| / max(I + B, 0.1)`.
pub fn bg_sub(current: &Plane, background: &Plane) -> Result<Plane> {
    if current.dims() != background.dims() {
        return Err(Error::DimensionMismatch {
            expected: background.dims(),
            actual: current.dims(),
        });
    }
    let data = current
        .as_slice()
        .iter()
        .zip(background.as_slice())
        .map(|(&i, &b)| (i - b).abs() / (i + b).max(0.1))
        .collect();
    Plane::from_vec(current.width(), current.height(), data)
}

/// Channel-wise [`bg_sub`].
pub fn bg_sub_frame(current: &[Plane; 3], background: &[Plane; 3]) -> Result<[Plane; 3]> {
    Ok([
        bg_sub(&current[0], &background[0])?,
        bg_sub(&current[1], &background[1])?,
        bg_sub(&current[2], &background[2])?,
    ])
}

/// OR over channels of `plane > threshold`.
pub fn threshold_any(planes: &[Plane; 3], threshold: f64) -> MaskImage {
    let (w, h) = planes[0].dims();
    let data = (0..w * h)
        .map(|p| planes.iter().any(|pl| pl.as_slice()[p] > threshold))
        .collect();
    MaskImage::from_vec(w, h, data).expect("dims")
}

pub const ENTROPY_WINDOW: usize = 9;

/// Base-2 entropy of a Bernoulli proportion.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    term(p) + term(1.0 - p)
}

/// Local entropy of the `{0,1}` histogram over a 9x9 reflected window.
pub fn entropy_filter(mask: &MaskImage) -> Plane {
    let (w, h) = mask.dims();
    let r = (ENTROPY_WINDOW / 2) as isize;
    let area = (ENTROPY_WINDOW * ENTROPY_WINDOW) as f64;
    let src = mask.as_slice();
    // per-count lookup, folded so that k and area - k share one entry
    let table: Vec<f64> = (0..=ENTROPY_WINDOW * ENTROPY_WINDOW)
        .map(|k| binary_entropy(k.min(ENTROPY_WINDOW * ENTROPY_WINDOW - k) as f64 / area))
        .collect();
    let mut col = vec![0usize; w * h];
    for y in 0..h {
        for x in 0..w {
            col[y * w + x] = (-r..=r)
                .filter(|&d| src[crate::image::reflect(y as isize + d, h) * w + x])
                .count();
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let n: usize = (-r..=r)
                .map(|d| col[y * w + crate::image::reflect(x as isize + d, w)])
                .sum();
            out.push(table[n]);
        }
    }
    Plane::from_vec(w, h, out).expect("dims")
}

/// Closing, binary median, then removal of small 8-connected components.
pub fn smooth_mask(mask: &MaskImage, params: &SmoothParams) -> MaskImage {
    let closed = morph::close(mask, params.closing_radius);
    let filtered = morph::median(&closed, params.median_radius);
    morph::remove_small_components(&filtered, params.min_area)
}

/// Intermediate and final products of the high-frequency stage.
#[derive(Debug, Clone)]
pub struct HfChange {
    pub s_dog: [Plane; 3],
    pub changed: MaskImage,
    pub entropy: Plane,
    pub mask: MaskImage,
    pub early_stop: bool,
}

pub fn detect_hf_change(
    current: &FrameBuffer,
    background: &FrameBuffer,
    dog: &DogParams,
    thr: &ChangeThresholds,
    smooth: &SmoothParams,
) -> Result<HfChange> {
    if current.dims() != background.dims() {
        return Err(Error::DimensionMismatch {
            expected: background.dims(),
            actual: current.dims(),
        });
    }
    let abs = |planes: [Plane; 3]| planes.map(|p| p.map(f64::abs));
    let i_dog = abs(dog_filter(current, dog)?);
    let b_dog = abs(dog_filter(background, dog)?);
    let s_dog = bg_sub_frame(&i_dog, &b_dog)?;
    let changed = threshold_any(&s_dog, thr.dog_response);
    let entropy = entropy_filter(&changed);
    let mask = smooth_mask(&MaskImage::threshold(&entropy, thr.dog_entropy), smooth);
    let early_stop = mask.is_empty();
    Ok(HfChange {
        s_dog,
        changed,
        entropy,
        mask,
        early_stop,
    })
}

/// Intermediate and final products of the intensity stage.
#[derive(Debug, Clone)]
pub struct IntensityChange {
    pub current_heq: FrameBuffer,
    pub m_heq1: MaskImage,
    pub m_heq2: MaskImage,
    pub mask: MaskImage,
}

pub fn detect_intensity_change(
    current: &FrameBuffer,
    previous: &FrameBuffer,
    background: &FrameBuffer,
    params: &ClaheParams,
    thr: &ChangeThresholds,
    smooth: &SmoothParams,
) -> Result<IntensityChange> {
    for other in [previous, background] {
        if other.dims() != current.dims() {
            return Err(Error::DimensionMismatch {
                expected: current.dims(),
                actual: other.dims(),
            });
        }
    }
    let i_heq = clahe(current, params)?;
    let p_heq = clahe(previous, params)?;
    let b_heq = clahe(background, params)?;
    let s_heq = bg_sub_frame(i_heq.planes(), b_heq.planes())?;
    let f_heq = bg_sub_frame(i_heq.planes(), p_heq.planes())?;
    let m_heq1 = smooth_mask(&threshold_any(&s_heq, thr.intensity_background), smooth);
    let m_heq2 = smooth_mask(&threshold_any(&f_heq, thr.intensity_frame), smooth);
    let mask = m_heq1.and(&m_heq2)?;
    Ok(IntensityChange {
        current_heq: i_heq,
        m_heq1,
        m_heq2,
        mask,
    })
}

/// Pixel-wise AND; the flag is set when nothing survives.
pub fn combine_change(m_dog: &MaskImage, m_heq: &MaskImage) -> Result<(MaskImage, bool)> {
    let m = m_dog.and(m_heq)?;
    let empty = m.is_empty();
    Ok((m, empty))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Plane {
        Plane::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    fn naive_convolve(p: &Plane, k: &[f64], r: usize) -> Plane {
        let n = 2 * r + 1;
        Plane::from_fn(p.width(), p.height(), |x, y| {
            let mut acc = 0.0;
            for ky in 0..n {
                for kx in 0..n {
                    let sx = x as isize - (kx as isize - r as isize);
                    let sy = y as isize - (ky as isize - r as isize);
                    acc += k[ky * n + kx] * p.get_reflected(sx, sy);
                }
            }
            acc
        })
    }

    #[test]
    fn dog_annihilates_constants() {
        let p = Plane::filled(32, 32, 0.7);
        let out = dog_plane(&p, &DogParams::default()).unwrap();
        assert!(out.as_slice().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn dog_of_impulse_is_kernel() {
        let params = DogParams::default();
        let mut p = Plane::zeros(41, 41);
        p.set(20, 20, 1.0);
        let out = dog_plane(&p, &params).unwrap();
        let k = dog_kernel(&params);
        let n = 2 * params.kernel_radius + 1;
        for ky in 0..n {
            for kx in 0..n {
                let v = out.get(20 - params.kernel_radius + kx, 20 - params.kernel_radius + ky);
                assert!((v - k[ky * n + kx]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dog_matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = DogParams::default();
        let p = random_plane(&mut rng, 32, 32);
        let fast = dog_plane(&p, &params).unwrap();
        let slow = naive_convolve(&p, &dog_kernel(&params), params.kernel_radius);
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn dog_rejects_oversized_kernel() {
        assert!(dog_plane(&Plane::zeros(6, 20), &DogParams::default()).is_err());
    }

    #[test]
    fn dog_params_invariants() {
        assert!(DogParams { sigma1: 2.0, sigma2: 1.0, kernel_radius: 6 }.validate().is_err());
        assert!(DogParams { sigma1: 1.0, sigma2: 2.0, kernel_radius: 5 }.validate().is_err());
    }

    #[test]
    fn bg_sub_examples() {
        let i = Plane::from_vec(3, 1, vec![0.3, 0.0, 0.6]).unwrap();
        let b = Plane::from_vec(3, 1, vec![0.3, 0.0, 0.2]).unwrap();
        let s = bg_sub(&i, &b).unwrap();
        assert_eq!(s.as_slice()[0], 0.0);
        assert_eq!(s.as_slice()[1], 0.0);
        assert!((s.as_slice()[2] - 0.5).abs() < 1e-15);
        assert!(bg_sub(&i, &Plane::zeros(2, 1)).is_err());
    }

    proptest! {
        #[test]
        fn bg_sub_range_and_symmetry(i in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let pi = Plane::filled(1, 1, i);
            let pb = Plane::filled(1, 1, b);
            let s = bg_sub(&pi, &pb).unwrap().get(0, 0);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, bg_sub(&pb, &pi).unwrap().get(0, 0));
        }

        #[test]
        fn entropy_invariant_under_bit_flip(bits in proptest::collection::vec(any::<bool>(), 12 * 10)) {
            let m = MaskImage::from_vec(12, 10, bits).unwrap();
            prop_assert_eq!(entropy_filter(&m), entropy_filter(&m.invert()));
        }
    }

    #[test]
    fn entropy_of_zero_mask_is_zero() {
        let e = entropy_filter(&MaskImage::zeros(16, 16));
        assert!(e.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn entropy_near_half() {
        // 40 of 81 set inside the centre window
        let mut m = MaskImage::zeros(9, 9);
        for p in 0..40 {
            m.set(p % 9, p / 9, true);
        }
        let e = entropy_filter(&m);
        assert!((e.get(4, 4) - binary_entropy(40.0 / 81.0)).abs() < 1e-15);
        assert!(e.get(4, 4) > 0.9998);
    }

    #[test]
    fn entropy_matches_histogram_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = MaskImage::from_fn(16, 16, |_, _| rng.random::<bool>());
        let e = entropy_filter(&m);
        for y in 0..16 {
            for x in 0..16 {
                let mut ones = 0;
                for dy in -4..=4isize {
                    for dx in -4..=4isize {
                        let sx = crate::image::reflect(x as isize + dx, 16);
                        let sy = crate::image::reflect(y as isize + dy, 16);
                        ones += m.get(sx, sy) as usize;
                    }
                }
                let p = ones as f64 / 81.0;
                let mut h = 0.0;
                for q in [p, 1.0 - p] {
                    if q > 0.0 {
                        h -= q * q.log2();
                    }
                }
                assert!((e.get(x, y) - h).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smooth_mask_examples() {
        let p = SmoothParams::default();
        assert!(smooth_mask(&MaskImage::zeros(30, 30), &p).is_empty());

        let blob = MaskImage::from_fn(30, 30, |x, y| (10..12).contains(&x) && (10..12).contains(&y));
        let p50 = SmoothParams { min_area: 50, ..p };
        assert!(smooth_mask(&blob, &p50).is_empty());

        let square = MaskImage::from_fn(40, 40, |x, y| (10..30).contains(&x) && (10..30).contains(&y));
        let mut holed = square.clone();
        holed.set(20, 20, false);
        let fill = SmoothParams { closing_radius: 1, median_radius: 0, min_area: 1 };
        assert_eq!(smooth_mask(&holed, &fill), square);
    }

    #[test]
    fn combine_change_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = MaskImage::from_fn(10, 10, |_, _| rng.random::<bool>());
        let b = MaskImage::from_fn(10, 10, |_, _| rng.random::<bool>());
        let (m, _) = combine_change(&a, &MaskImage::filled(10, 10, true)).unwrap();
        assert_eq!(m, a);
        let (m, stop) = combine_change(&a, &b).unwrap();
        for p in 0..100 {
            assert_eq!(m.as_slice()[p], a.as_slice()[p] && b.as_slice()[p]);
        }
        assert_eq!(stop, m.is_empty());
        let (_, stop) = combine_change(&a, &a.invert()).unwrap();
        assert!(stop);
        assert!(combine_change(&a, &MaskImage::zeros(9, 10)).is_err());
    }

    #[test]
    fn hf_change_identical_frames_stops_early() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let planes = [0, 1, 2].map(|_| random_plane(&mut rng, 40, 40));
        let f = FrameBuffer::new(0, planes).unwrap();
        let hf = detect_hf_change(
            &f,
            &f,
            &DogParams::default(),
            &ChangeThresholds::default(),
            &SmoothParams::default(),
        )
        .unwrap();
        assert!(hf.mask.is_empty());
        assert!(hf.early_stop);
    }

    #[test]
    fn intensity_change_no_change_is_empty() {
        let f = FrameBuffer::constant(0, 32, 32, 0.4);
        let ic = detect_intensity_change(
            &f,
            &f,
            &f,
            &ClaheParams::default(),
            &ChangeThresholds::default(),
            &SmoothParams::default(),
        )
        .unwrap();
        assert!(ic.mask.is_empty());
    }
}
