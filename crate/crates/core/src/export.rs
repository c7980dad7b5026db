//! Review artifacts: the response timeline, one animated clip per event and
//! the collection index linking clips to the viewer.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::gif::{GifEncoder, Repeat};
use image::imageops::{self, FilterType};
use image::{Delay, Frame, RgbImage, RgbaImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventSegment, ResponseSeries};
use crate::image::BoundingBox;
use crate::ingest::{FrameSource, RoiSpec};

/// Version stamped into every exported JSON document.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipFormat {
    #[default]
    Gif,
    Apng,
}

impl ClipFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ClipFormat::Gif => "gif",
            ClipFormat::Apng => "png",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipCrop {
    /// The whole detection window.
    #[default]
    Roi,
    /// The union of the event's detection boxes, padded.
    EventBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportParams {
    pub clip_stride: u32,
    /// Longest clip side in pixels.
    pub max_dim: u32,
    pub frame_delay_ms: u32,
    pub format: ClipFormat,
    pub crop: ClipCrop,
    /// Padding around the event box, in source pixels.
    pub crop_margin: u32,
    pub timeline_points: usize,
    /// Page the deep links point at.
    pub viewer_page: String,
}

impl Default for ExportParams {
    fn default() -> Self {
        ExportParams {
            clip_stride: 6,
            max_dim: 264,
            frame_delay_ms: 83,
            format: ClipFormat::Gif,
            crop: ClipCrop::Roi,
            crop_margin: 16,
            timeline_points: 2000,
            viewer_page: "viewer.html".into(),
        }
    }
}

impl ExportParams {
    pub fn validate(&self) -> Result<()> {
        if self.clip_stride == 0 || self.max_dim == 0 || self.timeline_points == 0 {
            return Err(Error::Config("clip_stride, max_dim and timeline_points must be positive".into()));
        }
        Ok(())
    }
}

/// Stable identifier of the `n`th event of a day.
pub fn event_id(n: usize) -> String {
    format!("evt-{n:04}")
}

/// `#day=<id>&frame=<n>`, with an optional `&view=x,y,w,h`.
pub fn build_fragment(day: &str, frame: u32, view: Option<BoundingBox>) -> String {
    let mut s = form_urlencoded::Serializer::new(String::new());
    s.append_pair("day", day).append_pair("frame", &frame.to_string());
    if let Some(v) = view {
        s.append_pair("view", &format!("{},{},{},{}", v.x, v.y, v.w, v.h));
    }
    format!("#{}", s.finish())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewerLocation {
    pub day: String,
    pub frame: u32,
    pub view: Option<BoundingBox>,
}

/// Parses a link or bare fragment produced by [`build_fragment`]. Unknown
/// keys are ignored.
pub fn parse_fragment(link: &str) -> Result<ViewerLocation> {
    let fragment = link.split_once('#').map_or(link, |(_, f)| f);
    let bad = |m: &str| Error::InvalidInput(format!("viewer link `{link}`: {m}"));
    let (mut day, mut frame, mut view) = (None, None, None);
    for (k, v) in form_urlencoded::parse(fragment.as_bytes()) {
        match &*k {
            "day" => day = Some(v.into_owned()),
            "frame" => frame = Some(v.parse::<u32>().map_err(|_| bad("frame is not an index"))?),
            "view" => {
                let parts: Vec<usize> = v
                    .split(',')
                    .map(|p| p.parse().map_err(|_| bad("view is not x,y,w,h")))
                    .collect::<Result<_>>()?;
                let [x, y, w, h] = parts[..] else {
                    return Err(bad("view is not x,y,w,h"));
                };
                view = Some(BoundingBox { x, y, w, h });
            }
            _ => {}
        }
    }
    Ok(ViewerLocation {
        day: day.ok_or_else(|| bad("missing day"))?,
        frame: frame.ok_or_else(|| bad("missing frame"))?,
        view,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    /// First frame of the pooled bucket.
    pub frame: u32,
    /// Largest response in the bucket; absent responses count as 0.
    pub value: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: u32,
    pub end: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub id: String,
    #[serde(flatten)]
    pub segment: EventSegment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub version: u32,
    pub day_id: String,
    pub config_hash: String,
    pub seconds_per_frame: Option<f64>,
    pub frames: Span,
    pub bucket_size: u32,
    pub warmup: Option<Span>,
    pub polyline: Vec<TimelinePoint>,
    pub events: Vec<TimelineEvent>,
}

/// Max-pools the series into at most `max_points` buckets of equal size.
pub fn pool_series(series: &ResponseSeries, max_points: usize) -> (u32, Vec<TimelinePoint>) {
    let n = series.len();
    if n == 0 {
        return (1, Vec::new());
    }
    let bucket = n.div_ceil(max_points.max(1));
    let points = series
        .entries()
        .chunks(bucket)
        .map(|c| TimelinePoint {
            frame: c[0].0,
            value: c.iter().map(|e| e.1.unwrap_or(0)).max().unwrap_or(0),
        })
        .collect();
    (bucket as u32, points)
}

pub fn build_timeline(
    series: &ResponseSeries,
    events: &[EventSegment],
    config_hash: &str,
    seconds_per_frame: Option<f64>,
    max_points: usize,
) -> Timeline {
    let (bucket_size, polyline) = pool_series(series, max_points);
    let frames = match (series.entries().first(), series.entries().last()) {
        (Some(a), Some(b)) => Span { start: a.0, end: b.0 + 1 },
        _ => Span { start: 0, end: 0 },
    };
    let absent: Vec<u32> = series.entries().iter().filter(|e| e.1.is_none()).map(|e| e.0).collect();
    let warmup = match (absent.first(), absent.last()) {
        (Some(&a), Some(&b)) => Some(Span { start: a, end: b + 1 }),
        _ => None,
    };
    Timeline {
        version: SCHEMA_VERSION,
        day_id: series.day_id().to_string(),
        config_hash: config_hash.to_string(),
        seconds_per_frame,
        frames,
        bucket_size,
        warmup,
        polyline,
        events: events
            .iter()
            .enumerate()
            .map(|(i, e)| TimelineEvent {
                id: event_id(i),
                segment: *e,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceClip {
    pub id: String,
    pub event: EventSegment,
    /// Relative to the output directory.
    pub file: String,
    pub frame_stride: u32,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub link: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipWarning {
    pub id: String,
    pub event: EventSegment,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collection {
    pub version: u32,
    pub day_id: String,
    pub config_hash: String,
    pub clips: Vec<EvidenceClip>,
    pub warnings: Vec<ClipWarning>,
}

/// Frames sampled for a clip: every `stride`th frame from the start, or the
/// first and last frame when that would give fewer than two.
pub fn clip_frames(event: &EventSegment, stride: u32) -> Vec<u32> {
    let sampled: Vec<u32> = (event.start..event.end).step_by(stride.max(1) as usize).collect();
    if sampled.len() >= 2 {
        sampled
    } else {
        vec![event.start, event.end - 1]
    }
}

/// Source-pixel rectangle to cut from each frame.
fn crop_rect(roi: &RoiSpec, boxes: Option<BoundingBox>, margin: u32) -> (u32, u32, u32, u32) {
    match boxes {
        None => (roi.x, roi.y, roi.width, roi.height),
        Some(b) => {
            let f = roi.downsample;
            let x0 = (b.x as u32 * f).saturating_sub(margin);
            let y0 = (b.y as u32 * f).saturating_sub(margin);
            let x1 = ((b.x + b.w) as u32 * f + margin).min(roi.width);
            let y1 = ((b.y + b.h) as u32 * f + margin).min(roi.height);
            (roi.x + x0, roi.y + y0, x1 - x0, y1 - y0)
        }
    }
}

fn scaled(img: RgbImage, max_dim: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let longest = w.max(h);
    if longest <= max_dim {
        return img;
    }
    let s = max_dim as f64 / longest as f64;
    let nw = ((w as f64 * s).round() as u32).clamp(1, max_dim);
    let nh = ((h as f64 * s).round() as u32).clamp(1, max_dim);
    imageops::resize(&img, nw, nh, FilterType::Triangle)
}

fn encode_gif(path: &Path, frames: Vec<RgbImage>, delay_ms: u32) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = GifEncoder::new_with_speed(BufWriter::new(file), 10);
    enc.set_repeat(Repeat::Infinite)?;
    let delay = Delay::from_numer_denom_ms(delay_ms, 1);
    enc.encode_frames(frames.into_iter().map(|f| {
        let rgba: RgbaImage = image::DynamicImage::ImageRgb8(f).into_rgba8();
        Frame::from_parts(rgba, 0, 0, delay)
    }))?;
    Ok(())
}

fn encode_apng(path: &Path, frames: Vec<RgbImage>, delay_ms: u32) -> Result<()> {
    let (w, h) = frames[0].dimensions();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let png_err = |e: png::EncodingError| Error::format(path, e);
    let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_animated(frames.len() as u32, 0).map_err(png_err)?;
    enc.set_frame_delay(delay_ms.min(u16::MAX as u32) as u16, 1000).map_err(png_err)?;
    let mut writer = enc.write_header().map_err(png_err)?;
    for f in &frames {
        writer.write_image_data(f.as_raw()).map_err(png_err)?;
    }
    writer.finish().map_err(png_err)
}

/// Inputs shared by every clip of one day.
pub struct ClipJob<'a> {
    pub source: &'a FrameSource,
    pub roi: &'a RoiSpec,
    pub params: &'a ExportParams,
    pub day_id: &'a str,
    pub config_hash: &'a str,
    /// Working-resolution detection box per frame, for event-box crops.
    pub boxes: &'a (dyn Fn(u32) -> Option<BoundingBox> + Sync),
}

fn render_clip(job: &ClipJob, out_dir: &Path, id: &str, event: &EventSegment) -> Result<EvidenceClip> {
    let p = job.params;
    let sampled = clip_frames(event, p.clip_stride);
    let event_box = match p.crop {
        ClipCrop::Roi => None,
        ClipCrop::EventBox => (event.start..event.end).filter_map(job.boxes).reduce(BoundingBox::union),
    };
    let (cx, cy, cw, ch) = crop_rect(job.roi, event_box, p.crop_margin);
    let mut frames = Vec::with_capacity(sampled.len());
    for &f in &sampled {
        let img = job.source.decode(f)?;
        if cx + cw > img.width() || cy + ch > img.height() {
            return Err(Error::Frame {
                index: f,
                message: "frame smaller than the detection window".into(),
            });
        }
        let cropped = imageops::crop_imm(&img, cx, cy, cw, ch).to_image();
        frames.push(scaled(cropped, p.max_dim));
    }
    let (width, height) = frames[0].dimensions();
    let rel = format!("clips/{id}.{}", p.format.extension());
    let path = out_dir.join(&rel);
    match p.format {
        ClipFormat::Gif => encode_gif(&path, frames, p.frame_delay_ms)?,
        ClipFormat::Apng => encode_apng(&path, frames, p.frame_delay_ms)?,
    }
    // view rectangle in detection-window pixels
    let view = Some(BoundingBox {
        x: (cx - job.roi.x) as usize,
        y: (cy - job.roi.y) as usize,
        w: cw as usize,
        h: ch as usize,
    });
    Ok(EvidenceClip {
        id: id.to_string(),
        event: *event,
        file: rel,
        frame_stride: p.clip_stride,
        frames: sampled.len(),
        width,
        height,
        link: format!("{}{}", p.viewer_page, build_fragment(job.day_id, event.peak_index, view)),
    })
}

/// One clip or one warning per event, in event order.
pub fn export_clips(job: &ClipJob, events: &[EventSegment], out_dir: &Path) -> Result<Collection> {
    let clip_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let outcomes: Vec<std::result::Result<EvidenceClip, ClipWarning>> = events
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let id = event_id(i);
            render_clip(job, out_dir, &id, e).map_err(|err| {
                log::warn!("clip {id} skipped: {err}");
                ClipWarning {
                    id,
                    event: *e,
                    message: err.to_string(),
                }
            })
        })
        .collect();
    let mut clips = Vec::new();
    let mut warnings = Vec::new();
    for o in outcomes {
        match o {
            Ok(c) => clips.push(c),
            Err(w) => warnings.push(w),
        }
    }
    Ok(Collection {
        version: SCHEMA_VERSION,
        day_id: job.day_id.to_string(),
        config_hash: job.config_hash.to_string(),
        clips,
        warnings,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    write_atomic(path, text.as_bytes())
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::AnimationDecoder;

    fn ev(start: u32, end: u32) -> EventSegment {
        EventSegment {
            start,
            end,
            peak_index: start,
            peak_value: 1,
        }
    }

    #[test]
    fn clip_frame_counts() {
        assert_eq!(clip_frames(&ev(0, 60), 6).len(), 10);
        assert_eq!(clip_frames(&ev(0, 61), 6).len(), 11);
        assert_eq!(clip_frames(&ev(10, 13), 6), vec![10, 12]);
        assert_eq!(clip_frames(&ev(10, 11), 6), vec![10, 10]);
    }

    #[test]
    fn fragment_round_trip() {
        let view = BoundingBox { x: 1, y: 2, w: 30, h: 40 };
        for day in ["2015-05-02", "day one", "a&b=c#d"] {
            let link = format!("viewer.html{}", build_fragment(day, 417, Some(view)));
            let loc = parse_fragment(&link).unwrap();
            assert_eq!(loc, ViewerLocation { day: day.into(), frame: 417, view: Some(view) });
        }
        assert_eq!(build_fragment("d", 3, None), "#day=d&frame=3");
        assert!(parse_fragment("#frame=3").is_err());
        assert!(parse_fragment("#day=d&frame=x").is_err());
    }

    #[test]
    fn pooling_keeps_bucket_maxima() {
        let vals: Vec<u64> = (0..16838u64).map(|i| (i * 7919) % 1000).collect();
        let s = ResponseSeries::from_values("d", 0, &vals);
        let (b, pts) = pool_series(&s, 2000);
        assert!(pts.len() <= 2000);
        for (i, p) in pts.iter().enumerate() {
            let lo = i * b as usize;
            let hi = (lo + b as usize).min(vals.len());
            assert_eq!(p.value, *vals[lo..hi].iter().max().unwrap());
            assert_eq!(p.frame, lo as u32);
        }
    }

    #[test]
    fn empty_day_timeline() {
        let s = ResponseSeries::from_values("d", 0, &[0; 100]);
        let t = build_timeline(&s, &[], "h", None, 2000);
        assert!(t.polyline.iter().all(|p| p.value == 0));
        assert!(t.events.is_empty());
        assert!(t.warmup.is_none());
    }

    #[test]
    fn timeline_marks_warmup_and_keeps_event_order() {
        let entries = (0..100).map(|i| (i, if i < 60 { None } else { Some(5) })).collect();
        let s = ResponseSeries::new("d", entries).unwrap();
        let events = [ev(80, 90), ev(62, 70)];
        let t = build_timeline(&s, &events, "h", Some(5.0), 10);
        assert_eq!(t.warmup, Some(Span { start: 0, end: 60 }));
        assert_eq!(t.events[0].segment, events[0]);
        assert_eq!(t.events[1].id, "evt-0001");
        assert_eq!(t.polyline.len(), 10);
    }

    fn frames_dir(n: u32, w: u32, h: u32) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..n {
            let img = RgbImage::from_fn(w, h, |x, y| image::Rgb([(x + i) as u8, y as u8, 128]));
            img.save(dir.path().join(format!("{i:06}.png"))).unwrap();
        }
        dir
    }

    #[test]
    fn gif_clips_decode_to_expected_shape() {
        let frames = frames_dir(70, 64, 48);
        let out = tempfile::tempdir().unwrap();
        let source = FrameSource::open(frames.path()).unwrap();
        let roi = RoiSpec::full(64, 48, 4);
        let params = ExportParams { max_dim: 32, ..ExportParams::default() };
        let job = ClipJob {
            source: &source,
            roi: &roi,
            params: &params,
            day_id: "d",
            config_hash: "h",
            boxes: &|_| None,
        };
        let c = export_clips(&job, &[ev(5, 65)], out.path()).unwrap();
        assert_eq!(c.clips.len(), 1);
        assert_eq!(c.clips[0].frames, 10);
        let file = File::open(out.path().join(&c.clips[0].file)).unwrap();
        let dec = image::codecs::gif::GifDecoder::new(std::io::BufReader::new(file)).unwrap();
        let decoded = dec.into_frames().collect_frames().unwrap();
        assert_eq!(decoded.len(), 10);
        assert_eq!(decoded[0].buffer().dimensions(), (32, 24));
        assert_eq!(parse_fragment(&c.clips[0].link).unwrap().frame, 5);
    }

    #[test]
    fn missing_frames_become_warnings() {
        let frames = frames_dir(10, 16, 16);
        let out = tempfile::tempdir().unwrap();
        let source = FrameSource::open(frames.path()).unwrap();
        let roi = RoiSpec::full(16, 16, 4);
        let params = ExportParams::default();
        let job = ClipJob {
            source: &source,
            roi: &roi,
            params: &params,
            day_id: "d",
            config_hash: "h",
            boxes: &|_| None,
        };
        let c = export_clips(&job, &[ev(0, 8), ev(5, 30)], out.path()).unwrap();
        assert_eq!(c.clips.len() + c.warnings.len(), 2);
        assert_eq!(c.warnings.len(), 1);
        assert_eq!(c.warnings[0].id, "evt-0001");
        let none = export_clips(&job, &[], out.path()).unwrap();
        assert!(none.clips.is_empty() && none.warnings.is_empty());
    }

    #[test]
    fn apng_and_event_box_crop() {
        let frames = frames_dir(20, 64, 48);
        let out = tempfile::tempdir().unwrap();
        let source = FrameSource::open(frames.path()).unwrap();
        let roi = RoiSpec::full(64, 48, 4);
        let params = ExportParams {
            format: ClipFormat::Apng,
            crop: ClipCrop::EventBox,
            crop_margin: 0,
            ..ExportParams::default()
        };
        let job = ClipJob {
            source: &source,
            roi: &roi,
            params: &params,
            day_id: "d",
            config_hash: "h",
            boxes: &|f| (f == 3).then_some(BoundingBox { x: 2, y: 1, w: 4, h: 3 }),
        };
        let c = export_clips(&job, &[ev(0, 12)], out.path()).unwrap();
        let clip = &c.clips[0];
        assert_eq!((clip.width, clip.height), (16, 12));
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(out.path().join(&clip.file)).unwrap()));
        let reader = decoder.read_info().unwrap();
        assert_eq!(reader.info().animation_control.unwrap().num_frames, 2);
    }
}
