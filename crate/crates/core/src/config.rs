//! The complete run configuration, its TOML form and its content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::change::{ChangeThresholds, ClaheParams, DogParams, SmoothParams};
use crate::error::{Error, Result};
use crate::events::EventParams;
use crate::export::ExportParams;
use crate::ingest::{DownsampleKernel, RoiSpec};
use crate::regions::RegionThresholds;
use crate::texture::TextureParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Label for the processed day in exports and metrics.
    pub day_id: String,
    /// Master seed; frame `t` clusters with `seed ^ t`.
    pub seed: u64,
    pub background_window: usize,
    /// Half-open range of frame indices to process; all frames when absent.
    pub daytime: Option<[u32; 2]>,
    pub seconds_per_frame: Option<f64>,
    /// Frames handed to the worker pool at once; also the checkpoint interval.
    pub batch_size: usize,
    /// Worker threads; 0 uses every core. Not part of the hash.
    pub workers: usize,
    /// Writes per-stage images. Not part of the hash.
    pub dump_stages: bool,
    pub roi: RoiSpec,
    pub downsample_kernel: DownsampleKernel,
    pub dog: DogParams,
    pub change: ChangeThresholds,
    pub change_smoothing: SmoothParams,
    pub clahe: ClaheParams,
    pub texture: TextureParams,
    pub regions: RegionThresholds,
    pub events: EventParams,
    pub export: ExportParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            day_id: "day".into(),
            seed: 42,
            background_window: 60,
            daytime: None,
            seconds_per_frame: Some(5.0),
            batch_size: 32,
            workers: 0,
            dump_stages: false,
            roi: RoiSpec::full(528, 496, 4),
            downsample_kernel: DownsampleKernel::BlockMean,
            dog: DogParams::default(),
            change: ChangeThresholds::default(),
            change_smoothing: SmoothParams::default(),
            clahe: ClaheParams::default(),
            texture: TextureParams::default(),
            regions: RegionThresholds::default(),
            events: EventParams::default(),
            export: ExportParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.background_window == 0 {
            return Err(Error::Config("background_window must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some([a, b]) = self.daytime {
            if a >= b {
                return Err(Error::Config(format!("empty daytime range [{a}, {b})")));
            }
        }
        self.roi.validate()?;
        self.dog.validate()?;
        self.change.validate()?;
        self.clahe.validate()?;
        self.texture.validate()?;
        let (w, h) = self.roi.output_dims();
        self.regions.validate(w * h)?;
        self.events.validate()?;
        self.export.validate()?;
        if self.dog.kernel_radius >= w.min(h) {
            return Err(Error::Config(format!(
                "DoG radius {} does not fit the {w}x{h} working frame",
                self.dog.kernel_radius
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML with the scheduling-only fields reset.
    pub fn hash(&self) -> String {
        let canonical = PipelineConfig {
            workers: 0,
            dump_stages: false,
            ..self.clone()
        };
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = PipelineConfig::from_toml("seed = 7\n[events]\ngap = 10\nmin_height = 1.0\nmin_prominence = 1.0\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.events.gap, 10);
        assert_eq!(c.texture, TextureParams::default());
    }

    #[test]
    fn hash_ignores_scheduling_fields() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            workers: 8,
            dump_stages: true,
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = PipelineConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(PipelineConfig::from_toml("background_window = 0").is_err());
        assert!(PipelineConfig::from_toml("daytime = [5, 5]").is_err());
        assert!(PipelineConfig::from_toml("[roi]\nx = 0\ny = 0\nwidth = 529\nheight = 496\ndownsample = 4").is_err());
        assert!(PipelineConfig::from_toml("unknown_key = 1").is_err());
    }
}
