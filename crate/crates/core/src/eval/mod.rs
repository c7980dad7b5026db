//! Segment-level scoring of predicted events against per-frame labels, plus
//! a generator of labelled synthetic days.

pub mod synth;

use std::io::{BufRead, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::events::EventSegment;

/// Per-frame booleans for frames `offset .. offset + len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelArray {
    pub day_id: String,
    pub offset: u32,
    pub values: Vec<bool>,
}

impl LabelArray {
    pub fn new(day_id: impl Into<String>, offset: u32, values: Vec<bool>) -> Self {
        LabelArray {
            day_id: day_id.into(),
            offset,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> u32 {
        self.offset + self.values.len() as u32
    }

    pub fn get(&self, frame: u32) -> Option<bool> {
        frame
            .checked_sub(self.offset)
            .and_then(|i| self.values.get(i as usize).copied())
    }

    /// True inside any of `events`, over the same frame span as `like`.
    pub fn rasterize(events: &[EventSegment], like: &LabelArray) -> Result<LabelArray> {
        let mut values = vec![false; like.len()];
        for e in events {
            if e.start < like.offset || e.end > like.end() {
                return Err(Error::InvalidInput(format!(
                    "event [{}, {}) outside labelled frames [{}, {})",
                    e.start,
                    e.end,
                    like.offset,
                    like.end()
                )));
            }
            for f in e.start..e.end {
                values[(f - like.offset) as usize] = true;
            }
        }
        Ok(LabelArray::new(like.day_id.clone(), like.offset, values))
    }

    /// Reads `<frame_index>,<0|1>` lines. Indices must be consecutive.
    pub fn read(path: &Path, day_id: impl Into<String>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut offset = None;
        let mut values = Vec::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::format(path, format!("line {}: expected `<frame_index>,<0|1>`", n + 1));
            let (idx, flag) = line.split_once(',').ok_or_else(bad)?;
            let idx: u32 = idx.trim().parse().map_err(|_| bad())?;
            let flag = match flag.trim() {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            };
            let start = *offset.get_or_insert(idx);
            if idx != start + values.len() as u32 {
                return Err(Error::format(path, format!("line {}: frame {idx} out of sequence", n + 1)));
            }
            values.push(flag);
        }
        Ok(LabelArray::new(day_id, offset.unwrap_or(0), values))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.values.len() * 8);
        for (i, &v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.offset + i as u32, u8::from(v)));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Maximal runs of true labels as half-open frame intervals.
pub fn segments_of(labels: &LabelArray) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in labels.values.iter().enumerate() {
        let f = labels.offset + i as u32;
        match (v, start) {
            (true, None) => start = Some(f),
            (false, Some(s)) => {
                out.push((s, f));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, labels.end()));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Tp,
    Fp,
}

/// Classifies each predicted segment: TP when the share of true ground-truth
/// entries in it is strictly above `overlap`.
pub fn match_segments(predicted: &[(u32, u32)], truth: &LabelArray, overlap: f64) -> Result<Vec<Verdict>> {
    if !(overlap > 0.0 && overlap <= 1.0) {
        return Err(Error::InvalidInput(format!("overlap {overlap} outside (0, 1]")));
    }
    predicted
        .iter()
        .map(|&(s, e)| {
            if s >= e || s < truth.offset || e > truth.end() {
                return Err(Error::InvalidInput(format!(
                    "segment [{s}, {e}) outside labelled frames [{}, {})",
                    truth.offset,
                    truth.end()
                )));
            }
            // closed [m, n] with n = e - 1, length n - m + 1
            let (m, n) = (s, e - 1);
            let hits = (m..=n).filter(|&f| truth.get(f) == Some(true)).count();
            let fraction = hits as f64 / (n - m + 1) as f64;
            Ok(if fraction > overlap { Verdict::Tp } else { Verdict::Fp })
        })
        .collect()
}

/// Ground-truth segments containing no predicted-true entry.
pub fn false_negatives(truth_segments: &[(u32, u32)], predicted: &LabelArray) -> usize {
    truth_segments
        .iter()
        .filter(|&&(s, e)| (s..e).all(|f| predicted.get(f) != Some(true)))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    /// Some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

pub fn metrics(tp: usize, fp: usize, fn_: usize) -> Metrics {
    let mut degenerate = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            degenerate = true;
            0.0
        } else {
            num / den
        }
    };
    let precision = ratio(tp as f64, (tp + fp) as f64);
    let recall = ratio(tp as f64, (tp + fn_) as f64);
    let fscore = ratio(2.0 * precision * recall, precision + recall);
    Metrics {
        precision,
        recall,
        fscore,
        degenerate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub date: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub metrics: Metrics,
    pub verdicts: Vec<((u32, u32), Verdict)>,
}

/// Scores events against labels: events are rasterized per frame, the runs
/// of that array are the predicted segments.
pub fn evaluate(events: &[EventSegment], truth: &LabelArray, overlap: f64) -> Result<MatchReport> {
    let predicted = LabelArray::rasterize(events, truth)?;
    let p_segments = segments_of(&predicted);
    let verdicts = match_segments(&p_segments, truth, overlap)?;
    let tp = verdicts.iter().filter(|v| **v == Verdict::Tp).count();
    let fp = verdicts.len() - tp;
    let fn_ = false_negatives(&segments_of(truth), &predicted);
    Ok(MatchReport {
        date: truth.day_id.clone(),
        tp,
        fp,
        fn_,
        metrics: metrics(tp, fp, fn_),
        verdicts: p_segments.into_iter().zip(verdicts).collect(),
    })
}

/// Column means of precision, recall and F-score.
pub fn average(reports: &[Metrics]) -> Option<(f64, f64, f64)> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let sum = reports
        .iter()
        .fold((0.0, 0.0, 0.0), |a, m| (a.0 + m.precision, a.1 + m.recall, a.2 + m.fscore));
    Some((sum.0 / n, sum.1 / n, sum.2 / n))
}

/// `date,TP,FP,FN,precision,recall,fscore` rows.
pub fn write_metrics_csv<W: Write>(out: W, reports: &[MatchReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("writing metrics: {e}"));
    w.write_record(["date", "TP", "FP", "FN", "precision", "recall", "fscore"])
        .map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.date.clone(),
            r.tp.to_string(),
            r.fp.to_string(),
            r.fn_.to_string(),
            format!("{:.4}", r.metrics.precision),
            format!("{:.4}", r.metrics.recall),
            format!("{:.4}", r.metrics.fscore),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("writing metrics: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn la(bits: &str) -> LabelArray {
        LabelArray::new("d", 0, bits.chars().map(|c| c == 'T').collect())
    }

    #[test]
    fn segments_examples() {
        assert_eq!(segments_of(&la("FFTTTFF")), vec![(2, 5)]);
        assert!(segments_of(&la("FFFF")).is_empty());
        assert_eq!(segments_of(&la("TFT")), vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn match_examples() {
        let g = LabelArray::new("d", 0, [vec![true; 10], vec![false; 20]].concat());
        assert_eq!(match_segments(&[(0, 10)], &g, 0.3).unwrap(), vec![Verdict::Tp]);
        assert_eq!(match_segments(&[(7, 17)], &g, 0.3).unwrap(), vec![Verdict::Fp]);
        assert_eq!(match_segments(&[(6, 16)], &g, 0.3).unwrap(), vec![Verdict::Tp]);
        assert!(match_segments(&[(25, 31)], &g, 0.3).is_err());
    }

    #[test]
    fn false_negative_examples() {
        let p = LabelArray::new("d", 0, (0..12).map(|i| i == 7).collect());
        assert_eq!(false_negatives(&[(5, 10)], &p), 0);
        assert_eq!(false_negatives(&[(5, 10)], &la("FFFFFFFFFFFF")), 1);
    }

    #[test]
    fn metrics_examples() {
        let m = metrics(21, 29, 3);
        assert!((m.precision - 0.42).abs() < 1e-4);
        assert!((m.recall - 0.875).abs() < 1e-4);
        assert!((m.fscore - 0.5676).abs() < 1e-4);
        let m = metrics(26, 16, 3);
        assert!((m.precision - 0.6190).abs() < 1e-4);
        assert!((m.recall - 0.8966).abs() < 1e-4);
        assert!((m.fscore - 0.7324).abs() < 1e-4);
        let m = metrics(0, 0, 0);
        assert_eq!((m.precision, m.recall, m.fscore, m.degenerate), (0.0, 0.0, 0.0, true));
        assert!(!metrics(1, 0, 0).degenerate);
    }

    #[test]
    fn label_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        let l = LabelArray::new("d", 60, vec![false, true, true, false]);
        l.write(&path).unwrap();
        assert_eq!(LabelArray::read(&path, "d").unwrap(), l);
        std::fs::write(&path, "0,1\n2,0\n").unwrap();
        assert!(LabelArray::read(&path, "d").is_err());
        std::fs::write(&path, "0,2\n").unwrap();
        assert!(LabelArray::read(&path, "d").is_err());
    }

    #[test]
    fn metrics_csv_layout() {
        let g = la("FFTTTFFFFF");
        let ev = [EventSegment { start: 2, end: 5, peak_index: 2, peak_value: 1 }];
        let r = evaluate(&ev, &g, 0.3).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "date,TP,FP,FN,precision,recall,fscore\nd,1,0,0,1.0000,1.0000,1.0000\n"
        );
    }

    fn brute_fraction(s: u32, e: u32, g: &[bool]) -> f64 {
        let mut hits = 0;
        let mut len = 0;
        for (i, &v) in g.iter().enumerate() {
            if (s as usize..e as usize).contains(&i) {
                len += 1;
                hits += usize::from(v);
            }
        }
        hits as f64 / len as f64
    }

    proptest! {
        #[test]
        fn counts_match_brute_force(g in prop::collection::vec(any::<bool>(), 1..300), p in prop::collection::vec(any::<bool>(), 1..300)) {
            let n = g.len().min(p.len());
            let g = LabelArray::new("d", 0, g[..n].to_vec());
            let p = LabelArray::new("d", 0, p[..n].to_vec());
            let ps = segments_of(&p);
            let v = match_segments(&ps, &g, 0.3).unwrap();
            prop_assert_eq!(v.len(), ps.len());
            for (&(s, e), verdict) in ps.iter().zip(&v) {
                let tp = brute_fraction(s, e, &g.values) > 0.3;
                prop_assert_eq!(*verdict == Verdict::Tp, tp);
            }
            let brute_fn = segments_of(&g)
                .iter()
                .filter(|&&(s, e)| p.values.iter().enumerate().all(|(i, &b)| !b || !(s as usize..e as usize).contains(&i)))
                .count();
            prop_assert_eq!(false_negatives(&segments_of(&g), &p), brute_fn);
        }
    }
}
