//! Fixtures shared by the benchmarks: frames of the synthetic reference day
//! at the default working resolution.

use plumewatch_core::eval::synth::{render_background, render_frame, SceneSpec};
use plumewatch_core::ingest::{prepare_frame, BackgroundModel};
use plumewatch_core::{FrameBuffer, MaskImage, PipelineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Frames `t - window - 2 ..= t` of the reference day, prepared with the
/// default config.
pub struct Scene {
    pub config: PipelineConfig,
    pub frames: Vec<FrameBuffer>,
}

impl Scene {
    /// `t` must be at least the background window plus two.
    pub fn around(t: u32) -> Scene {
        let config = PipelineConfig::default();
        let spec = SceneSpec::reference_day();
        let background = render_background(&spec);
        let first = t - config.background_window as u32 - 2;
        let frames = (first..=t)
            .map(|i| {
                let img = render_frame(&spec, &background, i);
                prepare_frame(i, &img, &config.roi, config.downsample_kernel).expect("reference frame")
            })
            .collect();
        Scene { config, frames }
    }

    pub fn current(&self) -> &FrameBuffer {
        self.frames.last().expect("frames")
    }

    pub fn previous(&self) -> &FrameBuffer {
        &self.frames[self.frames.len() - 3]
    }

    /// The model holding the window before the current frame.
    pub fn model(&self) -> BackgroundModel {
        let n = self.config.background_window;
        let mut m = BackgroundModel::new(n).expect("window");
        let end = self.frames.len() - 1;
        for f in &self.frames[end - n..end] {
            m.update(f.clone()).expect("dims");
        }
        m
    }
}

/// A seeded random mask with the given density.
pub fn random_mask(width: usize, height: usize, density: f64, seed: u64) -> MaskImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MaskImage::from_fn(width, height, |_, _| rng.random::<f64>() < density)
}
