//! Day-level orchestration: a sequential background pass feeding a pool of
//! frame workers, with checkpointed output and resume.

mod dump;
pub mod store;

use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::change::{combine_change, detect_hf_change, detect_intensity_change, HfChange, IntensityChange};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::events::{detect_events, EventSegment, ResponseSeries};
use crate::export::{build_timeline, export_clips, write_json, ClipJob};
use crate::image::{BoundingBox, FrameBuffer, MaskImage};
use crate::ingest::{BackgroundModel, FrameSource};
use crate::regions::{filter_regions, RegionOutcome};
use crate::texture::{build_filter_bank, segment, FilterBank, SegmentationMap};

pub use store::{Manifest, ResponseRow, RunState, Timings};

/// Where processing of a frame ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EarlyStop {
    /// All stages ran.
    None,
    /// Background window not yet full; no response.
    Warmup,
    /// The frame two steps back is not past warm-up; response 0.
    NoPriorFrame,
    /// High-frequency change mask was empty; response 0.
    AfterMDog,
    /// Combined change mask was empty; response 0.
    AfterMCd,
}

impl EarlyStop {
    pub fn as_str(&self) -> &'static str {
        match self {
            EarlyStop::None => "none",
            EarlyStop::Warmup => "warmup",
            EarlyStop::NoPriorFrame => "no-prior-frame",
            EarlyStop::AfterMDog => "after-m-dog",
            EarlyStop::AfterMCd => "after-m-cd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            EarlyStop::None,
            EarlyStop::Warmup,
            EarlyStop::NoPriorFrame,
            EarlyStop::AfterMDog,
            EarlyStop::AfterMCd,
        ]
        .into_iter()
        .find(|e| e.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub change_ms: f64,
    pub texture_ms: f64,
    pub regions_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame_index: u32,
    pub response: Option<u64>,
    pub early_stop: EarlyStop,
    pub timing: StageTimings,
    /// Bounding box of the final mask, in working pixels.
    pub bbox: Option<BoundingBox>,
}

impl FrameResult {
    fn stopped(frame_index: u32, response: Option<u64>, early_stop: EarlyStop) -> Self {
        FrameResult {
            frame_index,
            response,
            early_stop,
            timing: StageTimings::default(),
            bbox: None,
        }
    }
}

/// Inputs of one frame's detection.
#[derive(Debug, Clone, Copy)]
pub struct FrameInputs<'a> {
    pub current: &'a FrameBuffer,
    /// The frame two positions earlier.
    pub previous: &'a FrameBuffer,
    /// Median of the preceding window.
    pub background: &'a FrameBuffer,
}

/// Every intermediate product of one frame, for inspection and dumps.
#[derive(Debug, Clone)]
pub struct FrameAnalysis {
    pub result: FrameResult,
    pub hf: Option<HfChange>,
    pub intensity: Option<IntensityChange>,
    pub m_cd: Option<MaskImage>,
    pub segmentation: Option<(SegmentationMap, SegmentationMap)>,
    pub regions: Option<RegionOutcome>,
    kde_bandwidth: f64,
    kde_grid: usize,
}

/// Stateless per-frame detector.
pub struct Detector {
    config: PipelineConfig,
    bank: FilterBank,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

impl Detector {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Detector {
            config,
            bank: build_filter_bank(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn process_frame(&self, inputs: FrameInputs, force_full: bool) -> Result<FrameResult> {
        Ok(self.analyze(inputs, force_full)?.result)
    }

    /// Runs the stages in order, stopping at the first empty change mask
    /// unless `force_full`. A forced run still reports the stage at which
    /// it would have stopped.
    pub fn analyze(&self, inputs: FrameInputs, force_full: bool) -> Result<FrameAnalysis> {
        let c = &self.config;
        let frame_index = inputs.current.index();
        let mut timing = StageTimings::default();
        let mut out = FrameAnalysis {
            result: FrameResult::stopped(frame_index, Some(0), EarlyStop::None),
            hf: None,
            intensity: None,
            m_cd: None,
            segmentation: None,
            regions: None,
            kde_bandwidth: c.regions.kde_bandwidth,
            kde_grid: c.regions.kde_grid,
        };

        let t = Instant::now();
        let hf = detect_hf_change(inputs.current, inputs.background, &c.dog, &c.change, &c.change_smoothing)?;
        let mut stop = if hf.early_stop { EarlyStop::AfterMDog } else { EarlyStop::None };
        let dog_empty = hf.early_stop;
        out.hf = Some(hf);
        if dog_empty && !force_full {
            timing.change_ms = ms(t);
            out.result.timing = timing;
            out.result.early_stop = stop;
            return Ok(out);
        }
        let ic = detect_intensity_change(
            inputs.current,
            inputs.previous,
            inputs.background,
            &c.clahe,
            &c.change,
            &c.change_smoothing,
        )?;
        let (m_cd, cd_empty) = combine_change(&out.hf.as_ref().expect("set").mask, &ic.mask)?;
        timing.change_ms = ms(t);
        if stop == EarlyStop::None && cd_empty {
            stop = EarlyStop::AfterMCd;
        }
        let enhanced = ic.current_heq.clone();
        out.intensity = Some(ic);
        out.m_cd = Some(m_cd);
        out.result.early_stop = stop;
        if stop != EarlyStop::None && !force_full {
            out.result.timing = timing;
            return Ok(out);
        }

        let t = Instant::now();
        let seed = c.seed ^ u64::from(frame_index);
        let (raw, smooth) = segment(&enhanced, &self.bank, &c.texture, seed)?;
        timing.texture_ms = ms(t);

        let t = Instant::now();
        let regions = filter_regions(
            &smooth,
            inputs.current,
            inputs.background,
            out.m_cd.as_ref().expect("set"),
            &c.regions,
        )?;
        timing.regions_ms = ms(t);
        out.result.response = Some(regions.response);
        out.result.bbox = regions.mask.bounding_box();
        out.result.timing = timing;
        out.segmentation = Some((raw, smooth));
        out.regions = Some(regions);
        Ok(out)
    }
}

/// Per-invocation settings that do not affect results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the configured worker count.
    pub workers: Option<usize>,
    /// Overrides the configured stage-dump flag.
    pub dump_stages: Option<bool>,
    /// Stop after this frame index has been checkpointed, as if interrupted.
    pub halt_after: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Complete,
    Halted { last_frame: Option<u32> },
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub status: RunStatus,
    pub series: ResponseSeries,
    pub events: Vec<EventSegment>,
    pub manifest: Manifest,
}

fn scheduled_frames(source: &FrameSource, config: &PipelineConfig) -> Vec<u32> {
    source
        .indices()
        .filter(|&i| config.daytime.is_none_or(|[a, b]| (a..b).contains(&i)))
        .collect()
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Processes a day from scratch. Any previous run state in `output` is
/// replaced.
pub fn run_day(config: &PipelineConfig, input: &Path, output: &Path, opts: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let source = FrameSource::open(input)?;
    if source.is_empty() {
        return Err(Error::InvalidInput(format!("no frames in {}", input.display())));
    }
    let (sw, sh) = source.source_dims()?;
    config.roi.check_bounds(sw, sh)?;
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    for stale in [store::EVENTS, store::TIMELINE, store::COLLECTION] {
        let p = output.join(stale);
        if p.exists() {
            std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    crate::export::write_atomic(&output.join(store::CONFIG), config.to_toml().as_bytes())?;
    let frames = scheduled_frames(&source, config);
    let input_dir = std::fs::canonicalize(input).unwrap_or_else(|_| input.to_path_buf());
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        day_id: config.day_id.clone(),
        input_dir,
        state: RunState::Running,
        frames_total: frames.len(),
        frames_completed: 0,
        last_completed_frame: None,
        timings: Timings::default(),
    };
    store::init_logs(output)?;
    manifest.save(output)?;
    execute(config, &source, &frames, output, manifest, opts)
}

/// Continues an interrupted run from its last checkpoint. A completed run
/// is returned as is.
pub fn resume(output: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let manifest = Manifest::load(output)?;
    let config = PipelineConfig::load(&output.join(store::CONFIG))?;
    let current = config.hash();
    if current != manifest.config_hash {
        return Err(Error::ConfigMismatch {
            manifest: manifest.config_hash,
            current,
        });
    }
    if manifest.state == RunState::Complete {
        let (series, events) = read_outputs(output, &config)?;
        return Ok(RunSummary {
            status: RunStatus::Complete,
            series,
            events,
            manifest,
        });
    }
    let source = FrameSource::open(&manifest.input_dir)?;
    let frames = scheduled_frames(&source, &config);
    if frames.len() != manifest.frames_total {
        return Err(Error::InvalidInput(format!(
            "input now has {} scheduled frames, the run started with {}",
            frames.len(),
            manifest.frames_total
        )));
    }
    if manifest.frames_completed > 0 && frames.get(manifest.frames_completed - 1) != manifest.last_completed_frame.as_ref() {
        return Err(Error::format(output.join(store::MANIFEST), "checkpoint does not match the input frames"));
    }
    store::truncate_logs(output, manifest.frames_completed, manifest.last_completed_frame)?;
    execute(&config, &source, &frames, output, manifest, opts)
}

fn read_outputs(output: &Path, config: &PipelineConfig) -> Result<(ResponseSeries, Vec<EventSegment>)> {
    let rows = store::read_responses(&output.join(store::RESPONSES))?;
    let series = ResponseSeries::new(
        config.day_id.clone(),
        rows.iter().map(|r| (r.frame_index, r.response)).collect(),
    )?;
    let path = output.join(store::EVENTS);
    let events = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?,
        Err(_) => detect_events(&series, &config.events),
    };
    Ok((series, events))
}

struct Job {
    position: usize,
    current: FrameBuffer,
    previous: FrameBuffer,
    background: FrameBuffer,
}

fn execute(
    config: &PipelineConfig,
    source: &FrameSource,
    frames: &[u32],
    output: &Path,
    mut manifest: Manifest,
    opts: &RunOptions,
) -> Result<RunSummary> {
    let started = Instant::now();
    let wall_before = manifest.timings.wall_ms;
    let workers = opts.workers.unwrap_or(config.workers);
    let dump = opts.dump_stages.unwrap_or(config.dump_stages);
    let pool = thread_pool(workers)?;
    let detector = Detector::new(config.clone())?;
    let window = config.background_window;
    let load = |positions: std::ops::Range<usize>| -> Result<Vec<FrameBuffer>> {
        source
            .load_batch(&frames[positions], &config.roi, config.downsample_kernel)
            .into_iter()
            .collect()
    };

    let status = pool.install(|| -> Result<RunStatus> {
        let start = manifest.frames_completed;
        let mut model = BackgroundModel::new(window)?;
        let mut recent: VecDeque<FrameBuffer> = VecDeque::with_capacity(3);
        let t = Instant::now();
        for f in load(start.saturating_sub(window)..start)? {
            recent.push_back(f.clone());
            if recent.len() > 2 {
                recent.pop_front();
            }
            model.update(f)?;
        }
        manifest.timings.load_ms += ms(t);

        let mut pos = start;
        while pos < frames.len() {
            let mut end = (pos + config.batch_size).min(frames.len());
            if let Some(h) = opts.halt_after {
                if let Some(k) = frames[pos..end].iter().position(|&f| f >= h) {
                    end = pos + k + 1;
                }
            }
            let t = Instant::now();
            let batch = load(pos..end)?;
            manifest.timings.load_ms += ms(t);

            let mut results: Vec<Option<FrameResult>> = vec![None; end - pos];
            let mut jobs = Vec::new();
            for (k, frame) in batch.into_iter().enumerate() {
                let p = pos + k;
                if p < window {
                    results[k] = Some(FrameResult::stopped(frames[p], None, EarlyStop::Warmup));
                } else if p < window + 2 {
                    results[k] = Some(FrameResult::stopped(frames[p], Some(0), EarlyStop::NoPriorFrame));
                } else {
                    jobs.push(Job {
                        position: k,
                        current: frame.clone(),
                        previous: recent.front().expect("two frames precede").clone(),
                        background: model.background()?,
                    });
                }
                recent.push_back(frame.clone());
                if recent.len() > 2 {
                    recent.pop_front();
                }
                model.update(frame)?;
            }

            use rayon::prelude::*;
            let analysed: Vec<(usize, FrameAnalysis)> = jobs
                .par_iter()
                .map(|j| {
                    let inputs = FrameInputs {
                        current: &j.current,
                        previous: &j.previous,
                        background: &j.background,
                    };
                    let a = detector.analyze(inputs, false)?;
                    if dump {
                        dump::write_stages(&output.join("stages"), &a)?;
                    }
                    Ok((j.position, a))
                })
                .collect::<Result<_>>()?;
            for (k, a) in analysed {
                let r = a.result;
                manifest.timings.change_ms += r.timing.change_ms;
                manifest.timings.texture_ms += r.timing.texture_ms;
                manifest.timings.regions_ms += r.timing.regions_ms;
                results[k] = Some(r);
            }
            let results: Vec<FrameResult> = results.into_iter().map(|r| r.expect("every slot filled")).collect();
            store::append_results(output, &results)?;
            manifest.frames_completed = end;
            manifest.last_completed_frame = Some(frames[end - 1]);
            manifest.timings.wall_ms = wall_before + ms(started);
            manifest.save(output)?;
            pos = end;
            if opts.halt_after.is_some_and(|h| frames[end - 1] >= h) && pos < frames.len() {
                return Ok(RunStatus::Halted {
                    last_frame: manifest.last_completed_frame,
                });
            }
        }
        Ok(RunStatus::Complete)
    })?;

    if let RunStatus::Halted { .. } = status {
        let (series, _) = read_outputs(output, config)?;
        return Ok(RunSummary {
            status,
            series,
            events: Vec::new(),
            manifest,
        });
    }

    let t = Instant::now();
    let (series, _) = read_outputs(output, config)?;
    let events = detect_events(&series, &config.events);
    write_json(&output.join(store::EVENTS), &events)?;
    let hash = config.hash();
    let timeline = build_timeline(&series, &events, &hash, config.seconds_per_frame, config.export.timeline_points);
    write_json(&output.join(store::TIMELINE), &timeline)?;
    let boxes = store::read_boxes(&output.join(store::BOXES))?;
    let lookup = |f: u32| boxes.binary_search_by_key(&f, |b| b.0).ok().map(|i| boxes[i].1);
    let job = ClipJob {
        source,
        roi: &config.roi,
        params: &config.export,
        day_id: &config.day_id,
        config_hash: &hash,
        boxes: &lookup,
    };
    let collection = pool.install(|| export_clips(&job, &events, output))?;
    write_json(&output.join(store::COLLECTION), &collection)?;
    manifest.timings.export_ms += ms(t);
    manifest.timings.wall_ms = wall_before + ms(started);
    manifest.state = RunState::Complete;
    manifest.save(output)?;
    Ok(RunSummary {
        status,
        series,
        events,
        manifest,
    })
}
