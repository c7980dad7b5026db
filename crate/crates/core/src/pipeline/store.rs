//! On-disk run state: the manifest, the per-frame response log and the
//! detection-box log.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EarlyStop, FrameResult};
use crate::error::{Error, Result};
use crate::export::{write_atomic, write_json};
use crate::image::BoundingBox;

pub const MANIFEST: &str = "manifest.json";
pub const RESPONSES: &str = "responses.csv";
pub const BOXES: &str = "boxes.csv";
pub const CONFIG: &str = "config.toml";
pub const EVENTS: &str = "events.json";
pub const TIMELINE: &str = "timeline.json";
pub const COLLECTION: &str = "collection.json";

const RESPONSES_HEADER: &str = "frame_index,response,early_stop_stage\n";
const BOXES_HEADER: &str = "frame_index,x,y,w,h\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunState {
    Running,
    Complete,
}

/// Wall-clock milliseconds, summed over frames and over resumed sessions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub wall_ms: f64,
    pub load_ms: f64,
    pub change_ms: f64,
    pub texture_ms: f64,
    pub regions_ms: f64,
    pub export_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub day_id: String,
    pub input_dir: PathBuf,
    pub state: RunState,
    pub frames_total: usize,
    pub frames_completed: usize,
    pub last_completed_frame: Option<u32>,
    pub timings: Timings,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
        if m.frames_completed > m.frames_total {
            return Err(Error::format(&path, "more frames completed than scheduled"));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST), self)
    }
}

pub(crate) fn init_logs(dir: &Path) -> Result<()> {
    write_atomic(&dir.join(RESPONSES), RESPONSES_HEADER.as_bytes())?;
    write_atomic(&dir.join(BOXES), BOXES_HEADER.as_bytes())
}

fn append(path: &Path, text: &str) -> Result<()> {
    let mut f = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

pub(crate) fn append_results(dir: &Path, results: &[FrameResult]) -> Result<()> {
    let mut rows = String::new();
    let mut boxes = String::new();
    for r in results {
        let resp = r.response.map(|v| v.to_string()).unwrap_or_default();
        rows.push_str(&format!("{},{},{}\n", r.frame_index, resp, r.early_stop.as_str()));
        if let Some(b) = r.bbox {
            boxes.push_str(&format!("{},{},{},{},{}\n", r.frame_index, b.x, b.y, b.w, b.h));
        }
    }
    append(&dir.join(RESPONSES), &rows)?;
    append(&dir.join(BOXES), &boxes)
}

/// One `responses.csv` row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseRow {
    pub frame_index: u32,
    pub response: Option<u64>,
    pub early_stop: EarlyStop,
}

pub fn read_responses(path: &Path) -> Result<Vec<ResponseRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let bad = || Error::format(path, format!("malformed row {:?}", rec));
        if rec.len() != 3 {
            return Err(bad());
        }
        let frame_index = rec[0].parse().map_err(|_| bad())?;
        let response = if rec[1].is_empty() {
            None
        } else {
            Some(rec[1].parse().map_err(|_| bad())?)
        };
        let early_stop = EarlyStop::parse(&rec[2]).ok_or_else(bad)?;
        rows.push(ResponseRow {
            frame_index,
            response,
            early_stop,
        });
    }
    Ok(rows)
}

pub fn read_boxes(path: &Path) -> Result<Vec<(u32, BoundingBox)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let v: Vec<usize> = rec
            .iter()
            .map(|s| s.parse().map_err(|_| Error::format(path, format!("malformed row {rec:?}"))))
            .collect::<Result<_>>()?;
        let [f, x, y, w, h] = v[..] else {
            return Err(Error::format(path, format!("malformed row {rec:?}")));
        };
        out.push((f as u32, BoundingBox { x, y, w, h }));
    }
    Ok(out)
}

/// Drops log rows past the checkpoint left by an interrupted batch.
pub(crate) fn truncate_logs(dir: &Path, completed: usize, last_frame: Option<u32>) -> Result<()> {
    let path = dir.join(RESPONSES);
    let rows = read_responses(&path)?;
    if rows.len() < completed {
        return Err(Error::format(
            &path,
            format!("{} rows but the manifest records {completed} completed frames", rows.len()),
        ));
    }
    let mut text = String::from(RESPONSES_HEADER);
    for r in &rows[..completed] {
        let resp = r.response.map(|v| v.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{},{}\n", r.frame_index, resp, r.early_stop.as_str()));
    }
    write_atomic(&path, text.as_bytes())?;

    let bpath = dir.join(BOXES);
    let boxes = if bpath.exists() { read_boxes(&bpath)? } else { Vec::new() };
    let mut text = String::from(BOXES_HEADER);
    for (f, b) in boxes {
        if last_frame.is_some_and(|l| f <= l) {
            text.push_str(&format!("{f},{},{},{},{}\n", b.x, b.y, b.w, b.h));
        }
    }
    write_atomic(&bpath, text.as_bytes())
}
