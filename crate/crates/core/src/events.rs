//! Response series to event segments: prominence peaks, half-prominence
//! widths, gap merging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame responses of one day. `None` marks frames without a response
/// (background warm-up).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResponseSeries {
    day_id: String,
    entries: Vec<(u32, Option<u64>)>,
}

impl ResponseSeries {
    pub fn new(day_id: impl Into<String>, entries: Vec<(u32, Option<u64>)>) -> Result<Self> {
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidInput("frame indices must be strictly increasing".into()));
        }
        Ok(ResponseSeries {
            day_id: day_id.into(),
            entries,
        })
    }

    /// Consecutive frames starting at `first`, all present.
    pub fn from_values(day_id: impl Into<String>, first: u32, values: &[u64]) -> Self {
        ResponseSeries {
            day_id: day_id.into(),
            entries: values
                .iter()
                .enumerate()
                .map(|(i, &v)| (first + i as u32, Some(v)))
                .collect(),
        }
    }

    pub fn day_id(&self) -> &str {
        &self.day_id
    }

    pub fn entries(&self) -> &[(u32, Option<u64>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn first_present(&self) -> Option<u32> {
        self.entries.iter().find(|e| e.1.is_some()).map(|e| e.0)
    }

    /// Responses with absent entries read as zero.
    pub fn dense(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1.unwrap_or(0) as f64).collect()
    }

    pub fn frame_at(&self, position: usize) -> u32 {
        self.entries[position].0
    }

    pub fn position_of(&self, frame: u32) -> Option<usize> {
        self.entries.binary_search_by_key(&frame, |e| e.0).ok()
    }
}

/// A detected emission: frames `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSegment {
    pub start: u32,
    pub end: u32,
    pub peak_index: u32,
    pub peak_value: u64,
}

impl EventSegment {
    pub fn len(&self) -> u32 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, frame: u32) -> bool {
        (self.start..self.end).contains(&frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Position in the series; the leftmost sample of a plateau.
    pub index: usize,
    pub value: f64,
    pub prominence: f64,
    /// Half-open positions where the series stays at or above
    /// `value - prominence / 2`.
    pub width: (usize, usize),
}

/// Local maxima with `value >= min_height` and prominence `>= min_prominence`.
///
/// Series ends are never peaks. Prominence is measured against the higher of
/// the two lowest points reached on each side before the series rises above
/// the peak or ends.
pub fn find_peaks(x: &[f64], min_height: f64, min_prominence: f64) -> Vec<Peak> {
    let n = x.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                if let Some(p) = describe_peak(x, i, j, min_height, min_prominence) {
                    peaks.push(p);
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

fn describe_peak(x: &[f64], left: usize, right: usize, min_height: f64, min_prominence: f64) -> Option<Peak> {
    let v = x[left];
    if v < min_height {
        return None;
    }
    let mut left_min = v;
    let mut k = left;
    while k > 0 && x[k - 1] <= v {
        k -= 1;
        left_min = left_min.min(x[k]);
    }
    let left_base = k;
    let mut right_min = v;
    let mut k = right;
    while k + 1 < x.len() && x[k + 1] <= v {
        k += 1;
        right_min = right_min.min(x[k]);
    }
    let right_base = k;
    let prominence = v - left_min.max(right_min);
    if prominence < min_prominence {
        return None;
    }
    let reference = v - prominence / 2.0;
    let mut a = left;
    while a > left_base && x[a - 1] >= reference {
        a -= 1;
    }
    let mut b = right;
    while b < right_base && x[b + 1] >= reference {
        b += 1;
    }
    Some(Peak {
        index: left,
        value: v,
        prominence,
        width: (a, b + 1),
    })
}

/// Unions intervals that overlap or are separated by fewer than `gap`
/// frames. The output is sorted and every separation is at least `gap`.
pub fn merge_segments(intervals: &[(u32, u32)], gap: u32) -> Vec<(u32, u32)> {
    let mut sorted = intervals.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(u32, u32)> = Vec::with_capacity(sorted.len());
    for (s, e) in sorted {
        match out.last_mut() {
            Some(last) if s < last.1.saturating_add(gap) => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventParams {
    pub min_height: f64,
    pub min_prominence: f64,
    pub gap: u32,
}

impl Default for EventParams {
    fn default() -> Self {
        EventParams {
            min_height: 100.0,
            min_prominence: 50.0,
            gap: 60,
        }
    }
}

impl EventParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_height >= 0.0) || !(self.min_prominence >= 0.0) {
            return Err(Error::Config("event thresholds must be non-negative".into()));
        }
        Ok(())
    }
}

/// Peaks and widths, mapped to frame indices, clipped to start no earlier
/// than the first present response, merged, and annotated with their peak.
pub fn detect_events(series: &ResponseSeries, params: &EventParams) -> Vec<EventSegment> {
    let Some(first) = series.first_present() else {
        return Vec::new();
    };
    let x = series.dense();
    let intervals: Vec<(u32, u32)> = find_peaks(&x, params.min_height, params.min_prominence)
        .iter()
        .filter_map(|p| {
            let start = series.frame_at(p.width.0).max(first);
            let end = series.frame_at(p.width.1 - 1) + 1;
            (start < end).then_some((start, end))
        })
        .collect();
    merge_segments(&intervals, params.gap)
        .into_iter()
        .map(|(start, end)| {
            let mut best: (u32, u64) = (start, 0);
            let mut seen = false;
            for &(f, v) in series.entries() {
                if (start..end).contains(&f) {
                    let v = v.unwrap_or(0);
                    if !seen || v > best.1 {
                        best = (f, v);
                        seen = true;
                    }
                }
            }
            EventSegment {
                start,
                end,
                peak_index: best.0,
                peak_value: best.1,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn triangle(apex: usize) -> Vec<f64> {
        (0..=2 * apex).map(|i| apex as f64 - (i as f64 - apex as f64).abs()).collect()
    }

    #[test]
    fn zero_series_has_no_peaks() {
        assert!(find_peaks(&[0.0; 50], 0.0, 0.0).is_empty());
    }

    #[test]
    fn triangle_has_apex_peak() {
        let x = triangle(10);
        let p = find_peaks(&x, 5.0, 0.0);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].index, 10);
        assert_eq!(p[0].prominence, 10.0);
        assert_eq!(p[0].width, (5, 16));
    }

    #[test]
    fn plateau_reports_leftmost() {
        let p = find_peaks(&[0.0, 3.0, 3.0, 3.0, 1.0], 0.0, 0.0);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].index, 1);
        assert_eq!(p[0].width, (1, 4));
    }

    // every local maximum, its prominence and width, by direct scans
    fn brute_peaks(x: &[f64], h: f64, prom: f64) -> Vec<(usize, f64, (usize, usize))> {
        let n = x.len();
        let mut out = Vec::new();
        for i in 1..n.saturating_sub(1) {
            if !(x[i - 1] < x[i]) {
                continue;
            }
            let Some(j) = (i..n).find(|&j| x[j] != x[i]) else { continue };
            if x[j] > x[i] || (i + 1..j).any(|k| x[k] != x[i]) {
                continue;
            }
            let v = x[i];
            if v < h {
                continue;
            }
            let lb = (0..i).rev().find(|&k| x[k] > v).map_or(0, |k| k + 1);
            let rb = (j..n).find(|&k| x[k] > v).map_or(n - 1, |k| k - 1);
            let lmin = x[lb..=i].iter().cloned().fold(f64::INFINITY, f64::min);
            let rmin = x[i..=rb].iter().cloned().fold(f64::INFINITY, f64::min);
            let p = v - lmin.max(rmin);
            if p < prom {
                continue;
            }
            let r = v - p / 2.0;
            let a = (lb..=i).rev().take_while(|&k| x[k] >= r).last().unwrap();
            let b = (i..=rb).take_while(|&k| x[k] >= r).last().unwrap();
            out.push((i, p, (a, b + 1)));
        }
        out
    }

    #[test]
    fn two_triangles_give_disjoint_widths() {
        let mut x = triangle(10);
        x.push(0.0);
        x.extend(triangle(8));
        let p = find_peaks(&x, 1.0, 1.0);
        assert_eq!(p.len(), 2);
        assert!(p[0].width.1 <= p[1].width.0);
    }

    proptest! {
        #[test]
        fn peaks_match_scan_oracle(x in prop::collection::vec(0u8..6, 0..100), h in 0u8..4, pr in 0u8..4) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            let fast: Vec<_> = find_peaks(&x, h as f64, pr as f64)
                .into_iter()
                .map(|p| (p.index, p.prominence, p.width))
                .collect();
            prop_assert_eq!(fast, brute_peaks(&x, h as f64, pr as f64));
        }

        #[test]
        fn merge_matches_closure_oracle(raw in prop::collection::vec((0u32..200, 1u32..30), 0..12), gap in 0u32..20) {
            let ivs: Vec<(u32, u32)> = raw.iter().map(|&(s, l)| (s, s + l)).collect();
            let merged = merge_segments(&ivs, gap);
            // transitive closure of the "close" relation
            let n = ivs.len();
            let close = |a: (u32, u32), b: (u32, u32)| {
                let (l, r) = if a.0 <= b.0 { (a, b) } else { (b, a) };
                r.0 < l.1 + gap
            };
            let mut group: Vec<usize> = (0..n).collect();
            loop {
                let mut changed = false;
                for i in 0..n {
                    for j in 0..n {
                        if close(ivs[i], ivs[j]) && group[i] != group[j] {
                            let g = group[i].min(group[j]);
                            group[i] = g;
                            group[j] = g;
                            changed = true;
                        }
                    }
                }
                if !changed { break; }
            }
            let mut expect: Vec<(u32, u32)> = (0..n)
                .filter(|&i| group[i] == i)
                .map(|g| {
                    let members = (0..n).filter(|&i| group[i] == g);
                    let s = members.clone().map(|i| ivs[i].0).min().unwrap();
                    let e = members.map(|i| ivs[i].1).max().unwrap();
                    (s, e)
                })
                .collect();
            expect.sort_unstable();
            prop_assert_eq!(&merged, &expect);
            for w in merged.windows(2) {
                prop_assert!(w[1].0 >= w[0].1 + gap);
            }
        }

        #[test]
        fn larger_gap_never_adds_events(raw in prop::collection::vec((0u32..300, 1u32..20), 0..15), g in 0u32..30, extra in 0u32..30) {
            let ivs: Vec<(u32, u32)> = raw.iter().map(|&(s, l)| (s, s + l)).collect();
            prop_assert!(merge_segments(&ivs, g + extra).len() <= merge_segments(&ivs, g).len());
        }

        #[test]
        fn events_are_sorted_disjoint_and_in_range(vals in prop::collection::vec(0u64..400, 1..300), warm in 0usize..40) {
            let entries = vals.iter().enumerate()
                .map(|(i, &v)| (i as u32 + 7, if i < warm { None } else { Some(v) }))
                .collect();
            let s = ResponseSeries::new("d", entries).unwrap();
            let ev = detect_events(&s, &EventParams { min_height: 100.0, min_prominence: 50.0, gap: 10 });
            for e in &ev {
                prop_assert!(e.start < e.end);
                prop_assert!(e.contains(e.peak_index));
                prop_assert!(e.start >= s.first_present().unwrap());
                prop_assert!(e.end <= 7 + vals.len() as u32);
            }
            for w in ev.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
        }
    }

    #[test]
    fn merge_examples() {
        assert_eq!(merge_segments(&[(10, 20), (25, 40)], 10), vec![(10, 40)]);
        assert_eq!(merge_segments(&[(10, 20), (35, 40)], 10), vec![(10, 20), (35, 40)]);
    }

    #[test]
    fn flat_day_has_no_events() {
        let s = ResponseSeries::from_values("d", 0, &[0; 500]);
        assert!(detect_events(&s, &EventParams::default()).is_empty());
    }

    #[test]
    fn sustained_plume_is_one_event() {
        let mut v = vec![0u64; 400];
        for (i, r) in v.iter_mut().enumerate().take(161).skip(100) {
            *r = 300 + ((i * 37) % 50) as u64;
        }
        let s = ResponseSeries::from_values("d", 0, &v);
        let ev = detect_events(&s, &EventParams::default());
        assert_eq!(ev.len(), 1);
        assert!(ev[0].start <= 110 && ev[0].end >= 150, "{:?}", ev[0]);
        assert_eq!(ev[0].peak_value, *v.iter().max().unwrap());
    }

    #[test]
    fn nearby_plumes_merge() {
        let mut v = vec![0u64; 200];
        v[50..60].iter_mut().for_each(|r| *r = 400);
        v[65..75].iter_mut().for_each(|r| *r = 300);
        let s = ResponseSeries::from_values("d", 0, &v);
        let p = EventParams { gap: 20, ..EventParams::default() };
        let ev = detect_events(&s, &p);
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].start, ev[0].end, ev[0].peak_index), (50, 75, 50));
    }

    #[test]
    fn rejects_unsorted_indices() {
        assert!(ResponseSeries::new("d", vec![(3, Some(1)), (3, Some(2))]).is_err());
    }
}
