//! Deterministic synthetic timelapse days: a static scene with gray plumes,
//! white steam and moving shadows composited over it.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LabelArray;
use crate::error::{Error, Result};

/// A drifting, turbulent ellipse composited with colour `shade`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub start: u32,
    pub end: u32,
    /// Peak opacity.
    pub alpha: f64,
    pub center: [f64; 2],
    pub radius: [f64; 2],
    /// Pixels per frame.
    pub drift: [f64; 2],
    pub shade: f64,
    /// Share of the opacity modulated by evolving noise, in `[0, 1]`.
    #[serde(default = "default_turbulence")]
    pub turbulence: f64,
    /// Noise feature size in pixels.
    #[serde(default = "default_grain")]
    pub grain: f64,
}

fn default_turbulence() -> f64 {
    0.7
}

fn default_grain() -> f64 {
    14.0
}

/// A vertical band dimming the ground below the horizon by `factor`,
/// sweeping horizontally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shadow {
    pub start: u32,
    pub end: u32,
    pub factor: f64,
    /// Band width as a fraction of the frame width.
    pub extent: f64,
    /// Left edge at `start`, in pixels.
    pub offset: f64,
    /// Pixels per frame.
    pub speed: f64,
    /// Width of the soft edge in pixels.
    pub softness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: u32,
    pub width: u32,
    pub height: u32,
    /// Share of the frame height occupied by sky.
    pub sky_fraction: f64,
    /// Amplitude of uniform per-pixel sensor noise.
    pub noise: f64,
    #[serde(default)]
    pub plume: Vec<Blob>,
    #[serde(default)]
    pub steam: Vec<Blob>,
    #[serde(default)]
    pub shadow: Vec<Shadow>,
}

impl SceneSpec {
    /// The reference day: one gray plume (frames 400..520), one white steam
    /// blob (600..700) and one shadow band (750..850) over 1000 frames.
    pub fn reference_day() -> Self {
        SceneSpec {
            seed: 2015,
            frames: 1000,
            width: 528,
            height: 496,
            sky_fraction: 0.6,
            noise: 0.01,
            plume: vec![Blob {
                start: 400,
                end: 520,
                alpha: 0.5,
                center: [150.0, 150.0],
                radius: [70.0, 50.0],
                drift: [1.5, -0.2],
                shade: 0.2,
                turbulence: 0.7,
                grain: 14.0,
            }],
            steam: vec![Blob {
                start: 600,
                end: 700,
                alpha: 0.95,
                center: [330.0, 140.0],
                radius: [70.0, 50.0],
                drift: [1.0, -0.2],
                shade: 0.98,
                turbulence: 0.3,
                grain: 14.0,
            }],
            shadow: vec![Shadow {
                start: 750,
                end: 850,
                factor: 0.6,
                extent: 0.5,
                offset: -264.0,
                speed: 5.0,
                softness: 24.0,
            }],
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(Error::Config("scene needs positive size and frame count".into()));
        }
        for b in self.plume.iter().chain(&self.steam) {
            if b.start >= b.end || !(0.0..=1.0).contains(&b.alpha) || !(0.0..=1.0).contains(&b.turbulence) {
                return Err(Error::Config(format!("invalid blob {b:?}")));
            }
            if b.radius.iter().any(|&r| r <= 0.0) || b.grain <= 0.0 {
                return Err(Error::Config("blob radius and grain must be positive".into()));
            }
        }
        for s in &self.shadow {
            if s.start >= s.end || !(0.0..=1.0).contains(&s.factor) {
                return Err(Error::Config(format!("invalid shadow {s:?}")));
            }
        }
        Ok(())
    }

    /// True exactly at frames covered by a plume.
    pub fn labels(&self, day_id: &str) -> LabelArray {
        let values = (0..self.frames)
            .map(|t| self.plume.iter().any(|b| (b.start..b.end).contains(&t)))
            .collect();
        LabelArray::new(day_id, 0, values)
    }
}

fn hash(x: i64, y: i64, z: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [x, y, z] {
        h ^= v as u64;
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
        h ^= h >> 33;
    }
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinear value noise in `[0, 1]`.
fn value_noise(x: f64, y: f64, z: f64, seed: u64) -> f64 {
    let (x0, y0, z0) = (x.floor(), y.floor(), z.floor());
    let (fx, fy, fz) = (fade(x - x0), fade(y - y0), fade(z - z0));
    let (ix, iy, iz) = (x0 as i64, y0 as i64, z0 as i64);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let corner = |dx, dy, dz| hash(ix + dx, iy + dy, iz + dz, seed);
    let plane = |dz| {
        lerp(
            lerp(corner(0, 0, dz), corner(1, 0, dz), fx),
            lerp(corner(0, 1, dz), corner(1, 1, dz), fx),
            fy,
        )
    };
    lerp(plane(0), plane(1), fz)
}

/// Three-octave fractal noise in `[0, 1]`.
fn fbm(x: f64, y: f64, z: f64, seed: u64) -> f64 {
    let mut sum = 0.0;
    let mut amp = 0.5;
    let mut freq = 1.0;
    let mut norm = 0.0;
    for o in 0..3 {
        sum += amp * value_noise(x * freq, y * freq, z * freq, seed.wrapping_add(o));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

/// The static scene: a pale sky over a textured industrial ground.
pub fn render_background(spec: &SceneSpec) -> Vec<[f64; 3]> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let horizon = spec.sky_fraction * h as f64;
    let seed = spec.seed;
    let mut out = vec![[0.0; 3]; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, px) in row.iter_mut().enumerate() {
            let (xf, yf) = (x as f64, y as f64);
            *px = if yf < horizon {
                let g = yf / horizon;
                let haze = 0.03 * (fbm(xf / 120.0, yf / 80.0, 0.0, seed ^ 1) - 0.5);
                [0.66 + 0.08 * g + haze, 0.70 + 0.06 * g + haze, 0.78 + 0.03 * g + haze]
            } else {
                let n = fbm(xf / 6.0, yf / 6.0, 0.0, seed ^ 2);
                let blocks = value_noise((xf / 40.0).floor(), (yf / 25.0).floor(), 0.5, seed ^ 3);
                let v = 0.18 + 0.25 * blocks + 0.2 * (n - 0.5);
                [v + 0.03, v + 0.01, v]
            };
        }
    });
    out
}

fn blob_alpha(b: &Blob, x: f64, y: f64, t: u32, seed: u64) -> f64 {
    if !(b.start..b.end).contains(&t) {
        return 0.0;
    }
    let age = (t - b.start) as f64;
    let (cx, cy) = (b.center[0] + b.drift[0] * age, b.center[1] + b.drift[1] * age);
    let (dx, dy) = ((x - cx) / b.radius[0], (y - cy) / b.radius[1]);
    let r = (dx * dx + dy * dy).sqrt();
    if r >= 1.3 {
        return 0.0;
    }
    let envelope = fade(((1.3 - r) / 0.6).clamp(0.0, 1.0));
    // texture travels with the blob and evolves over time
    let n = fbm((x - cx) / b.grain, (y - cy) / b.grain, age * 0.35, seed);
    let texture = (1.0 - b.turbulence) + b.turbulence * (2.0 * n - 0.5).clamp(0.0, 1.0);
    b.alpha * envelope * texture
}

fn shadow_gain(s: &Shadow, width: f64, x: f64, t: u32) -> f64 {
    if !(s.start..s.end).contains(&t) {
        return 1.0;
    }
    let left = s.offset + s.speed * (t - s.start) as f64;
    let right = left + s.extent * width;
    let soft = s.softness.max(1e-9);
    let inside = ((x - left) / soft + 0.5).clamp(0.0, 1.0).min(((right - x) / soft + 0.5).clamp(0.0, 1.0));
    1.0 - (1.0 - s.factor) * fade(inside)
}

/// Frame `t` of the scene.
pub fn render_frame(spec: &SceneSpec, background: &[[f64; 3]], t: u32) -> RgbImage {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (u64::from(t) << 20) ^ 0xf00d);
    let mut img = RgbImage::new(spec.width, spec.height);
    // cloud shadows fall on the terrain only
    let horizon = spec.sky_fraction * h as f64;
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let mut px = background[y * w + x];
            for (i, b) in spec.plume.iter().chain(&spec.steam).enumerate() {
                let a = blob_alpha(b, xf, yf, t, spec.seed.wrapping_add(100 + i as u64));
                if a > 0.0 {
                    px = px.map(|c| (1.0 - a) * c + a * b.shade);
                }
            }
            for s in spec.shadow.iter().filter(|_| y as f64 >= horizon) {
                let g = shadow_gain(s, w as f64, xf, t);
                px = px.map(|c| c * g);
            }
            let noise = spec.noise;
            let rgb = px.map(|c| {
                let v = c + noise * (2.0 * rng.random::<f64>() - 1.0);
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            });
            img.put_pixel(x as u32, y as u32, Rgb(rgb));
        }
    }
    img
}

/// Renders every frame as `<dir>/frames/<index:06>.png` and the labels as
/// `<dir>/labels.txt`. Returns the frame directory and the labels.
pub fn synth_sequence(spec: &SceneSpec, dir: &Path) -> Result<(PathBuf, LabelArray)> {
    spec.validate()?;
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let background = render_background(spec);
    (0..spec.frames).into_par_iter().try_for_each(|t| {
        let path = frames_dir.join(format!("{t:06}.png"));
        render_frame(spec, &background, t).save(&path)?;
        Ok::<_, Error>(())
    })?;
    let labels = spec.labels("synthetic");
    labels.write(&dir.join("labels.txt"))?;
    Ok((frames_dir, labels))
}
