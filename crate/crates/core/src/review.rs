//! Reference model of the review console's data contract: seeking from a
//! timeline click, fast-forward playback order, and the curated export. The
//! browser viewer mirrors these rules; keeping them here lets the outputs of
//! a run be checked against the viewer's expectations without a browser.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::events::EventSegment;
use crate::export::{Collection, Timeline, TimelineEvent, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReviewVerdict {
    #[default]
    Pending,
    Accepted,
    RejectedSteam,
    RejectedShadow,
    RejectedOther,
}

impl ReviewVerdict {
    pub fn is_rejected(self) -> bool {
        matches!(
            self,
            ReviewVerdict::RejectedSteam | ReviewVerdict::RejectedShadow | ReviewVerdict::RejectedOther
        )
    }
}

/// Verdicts by event id. Missing ids are pending.
pub type Verdicts = BTreeMap<String, ReviewVerdict>;

fn verdict_of(verdicts: &Verdicts, id: &str) -> ReviewVerdict {
    verdicts.get(id).copied().unwrap_or_default()
}

/// Cursor frame for a click at `frame`. Inside an event band the cursor is
/// the nearest polyline sample within the event (the click clamped into the
/// event when no sample falls inside); elsewhere it is the nearest sample.
/// `None` only for an empty timeline.
pub fn seek(timeline: &Timeline, frame: u32) -> Option<u32> {
    let nearest = |lo: u32, hi: u32| {
        timeline
            .polyline
            .iter()
            .map(|p| p.frame)
            .filter(|f| (lo..hi).contains(f))
            .min_by_key(|f| (f.abs_diff(frame), *f))
    };
    if let Some(e) = timeline
        .events
        .iter()
        .find(|e| (e.segment.start..e.segment.end).contains(&frame))
    {
        let s = e.segment;
        return Some(nearest(s.start, s.end).unwrap_or(frame.clamp(s.start, s.end - 1)));
    }
    nearest(0, u32::MAX)
}

/// Frames visited by fast-forward: every frame of each pending or accepted
/// event, in event order. Rejected events and gaps are skipped.
pub fn fast_forward(events: &[TimelineEvent], verdicts: &Verdicts) -> Vec<u32> {
    events
        .iter()
        .filter(|e| !verdict_of(verdicts, &e.id).is_rejected())
        .flat_map(|e| e.segment.start..e.segment.end)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedItem {
    pub id: String,
    pub event: EventSegment,
    pub file: String,
    pub link: String,
}

/// Contents of `curated.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curated {
    pub version: u32,
    pub day_id: String,
    pub config_hash: String,
    pub items: Vec<CuratedItem>,
}

/// Accepted clips only, in collection order.
pub fn curate(collection: &Collection, verdicts: &Verdicts) -> Curated {
    Curated {
        version: SCHEMA_VERSION,
        day_id: collection.day_id.clone(),
        config_hash: collection.config_hash.clone(),
        items: collection
            .clips
            .iter()
            .filter(|c| verdict_of(verdicts, &c.id) == ReviewVerdict::Accepted)
            .map(|c| CuratedItem {
                id: c.id.clone(),
                event: c.event,
                file: c.file.clone(),
                link: c.link.clone(),
            })
            .collect(),
    }
}

/// Verdicts as persisted by the viewer, keyed by the run they were made on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredVerdicts {
    pub day_id: String,
    pub config_hash: String,
    pub verdicts: Verdicts,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Restored {
    Applied(Verdicts),
    /// Same day, different configuration: shown to the reviewer, never applied.
    Stale(Verdicts),
    None,
}

/// Restores stored verdicts for `timeline`, dropping ids it no longer has.
pub fn restore(stored: Option<&StoredVerdicts>, timeline: &Timeline) -> Restored {
    let Some(s) = stored.filter(|s| s.day_id == timeline.day_id) else {
        return Restored::None;
    };
    if s.config_hash != timeline.config_hash {
        return Restored::Stale(s.verdicts.clone());
    }
    let known: Verdicts = s
        .verdicts
        .iter()
        .filter(|(id, _)| timeline.events.iter().any(|e| &e.id == *id))
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    Restored::Applied(known)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::export::{build_fragment, EvidenceClip, Span, TimelinePoint};

    fn seg(start: u32, end: u32) -> EventSegment {
        EventSegment {
            start,
            end,
            peak_index: start,
            peak_value: 1,
        }
    }

    fn timeline(events: &[(u32, u32)], frames: u32, bucket: u32) -> Timeline {
        Timeline {
            version: SCHEMA_VERSION,
            day_id: "d".into(),
            config_hash: "h".into(),
            seconds_per_frame: Some(5.0),
            frames: Span { start: 0, end: frames },
            bucket_size: bucket,
            warmup: None,
            polyline: (0..frames)
                .step_by(bucket as usize)
                .map(|frame| TimelinePoint { frame, value: 0 })
                .collect(),
            events: events
                .iter()
                .enumerate()
                .map(|(i, &(s, e))| TimelineEvent {
                    id: crate::export::event_id(i),
                    segment: seg(s, e),
                })
                .collect(),
        }
    }

    fn collection(n: usize) -> Collection {
        Collection {
            version: SCHEMA_VERSION,
            day_id: "d".into(),
            config_hash: "h".into(),
            clips: (0..n)
                .map(|i| {
                    let id = crate::export::event_id(i);
                    EvidenceClip {
                        event: seg(100 * i as u32, 100 * i as u32 + 10),
                        file: format!("clips/{id}.gif"),
                        frame_stride: 6,
                        frames: 2,
                        width: 10,
                        height: 10,
                        link: build_fragment("d", 100 * i as u32, None),
                        id,
                    }
                })
                .collect(),
            warnings: Vec::new(),
        }
    }

    #[test]
    fn click_in_band_lands_inside_event() {
        let t = timeline(&[(103, 117)], 300, 10);
        assert_eq!(seek(&t, 104), Some(110));
        // no sample inside a narrow event: the click itself
        let t = timeline(&[(101, 105)], 300, 10);
        assert_eq!(seek(&t, 103), Some(103));
        assert_eq!(seek(&t, 37), Some(40));
    }

    #[test]
    fn empty_timeline_has_no_cursor() {
        assert_eq!(seek(&timeline(&[], 0, 1), 5), None);
    }

    #[test]
    fn fast_forward_skips_gaps_and_rejections() {
        let t = timeline(&[(100, 103), (200, 202), (300, 301)], 400, 1);
        let mut v = Verdicts::new();
        assert_eq!(fast_forward(&t.events, &v), vec![100, 101, 102, 200, 201, 300]);
        v.insert("evt-0001".into(), ReviewVerdict::RejectedSteam);
        v.insert("evt-0002".into(), ReviewVerdict::Accepted);
        assert_eq!(fast_forward(&t.events, &v), vec![100, 101, 102, 300]);
        for id in ["evt-0000", "evt-0002"] {
            v.insert(id.into(), ReviewVerdict::RejectedOther);
        }
        assert!(fast_forward(&t.events, &v).is_empty());
    }

    #[test]
    fn curate_keeps_exactly_the_accepted() {
        let c = collection(5);
        let mut v = Verdicts::new();
        v.insert("evt-0001".into(), ReviewVerdict::Accepted);
        v.insert("evt-0003".into(), ReviewVerdict::Accepted);
        v.insert("evt-0004".into(), ReviewVerdict::RejectedShadow);
        let ids: Vec<_> = curate(&c, &v).items.into_iter().map(|i| i.id).collect();
        assert_eq!(ids, ["evt-0001", "evt-0003"]);
    }

    #[test]
    fn verdicts_from_another_config_are_stale() {
        let t = timeline(&[(10, 20)], 50, 1);
        let mut verdicts = Verdicts::new();
        verdicts.insert("evt-0000".into(), ReviewVerdict::Accepted);
        verdicts.insert("evt-0009".into(), ReviewVerdict::Accepted);
        let mut stored = StoredVerdicts {
            day_id: "d".into(),
            config_hash: "h".into(),
            verdicts,
        };
        let Restored::Applied(v) = restore(Some(&stored), &t) else {
            panic!("same run should apply");
        };
        assert_eq!(v.keys().collect::<Vec<_>>(), ["evt-0000"]);
        stored.config_hash = "other".into();
        assert!(matches!(restore(Some(&stored), &t), Restored::Stale(_)));
        stored.day_id = "e".into();
        assert_eq!(restore(Some(&stored), &t), Restored::None);
    }
}
