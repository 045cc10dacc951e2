//! Ground truth loading and one-to-one detection matching.
//!
//! Matching is greedy: detections are visited by probability (descending)
//! and each claims the unmatched truth box it overlaps most, provided the
//! IoU reaches the match threshold. This is the one-to-one protocol; the
//! many-to-one DetEval variant is not implemented.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::{iou, DetBox};
use crate::error::{Error, Result};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;
pub const IGNORE_MARK: &str = "###";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcription: Option<String>,
    #[serde(default)]
    pub ignore: bool,
}

impl GroundTruthBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            x1,
            y1,
            x2,
            y2,
            transcription: None,
            ignore: false,
        }
    }

    pub fn as_det(&self) -> DetBox {
        DetBox::new(self.x1, self.y1, self.x2, self.y2, 1.0, "truth")
    }
}

fn parse_line(line: &str, number: usize) -> Result<GroundTruthBox> {
    let err = |reason: String| Error::GroundTruth { line: number, reason };
    let (coords, rest) = match line.find('"') {
        Some(q) => (&line[..q], Some(&line[q..])),
        None => (line, None),
    };
    let mut fields = coords.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty());
    let mut v = [0.0; 4];
    for (i, slot) in v.iter_mut().enumerate() {
        let tok = fields.next().ok_or_else(|| err(format!("expected 4 coordinates, found {i}")))?;
        *slot = tok
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| err(format!("coordinate {tok:?} is not a number")))?;
    }
    let unquoted: Vec<&str> = fields.collect();
    let transcription = match rest {
        Some(r) => {
            let r = r.trim_end();
            if r.len() < 2 || !r.ends_with('"') {
                return Err(err("unterminated transcription".into()));
            }
            if !unquoted.is_empty() {
                return Err(err(format!("unexpected field {:?}", unquoted[0])));
            }
            Some(r[1..r.len() - 1].to_string())
        }
        None if unquoted.is_empty() => None,
        None => Some(unquoted.join(" ")),
    };
    if v[0] > v[2] || v[1] > v[3] {
        return Err(err(format!("corners out of order: {v:?}")));
    }
    let ignore = transcription.as_deref() == Some(IGNORE_MARK);
    Ok(GroundTruthBox {
        x1: v[0],
        y1: v[1],
        x2: v[2],
        y2: v[3],
        transcription,
        ignore,
    })
}

/// Parses ICDAR2013-style ground truth: one `x1,y1,x2,y2,"text"` per line.
/// Whitespace-separated coordinates (the training-set variant) are also
/// accepted. Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruthBox>> {
    text.trim_start_matches('\u{feff}')
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l.trim(), i + 1))
        .collect()
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthBox>> {
    parse_ground_truth(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Metrics {
    /// Precision and recall are 1 when their denominators are zero.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            precision,
            recall,
            f_measure: f_measure(precision, recall),
            tp,
            fp,
            fn_,
        }
    }
}

fn f_measure(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Greedy one-to-one matching at IoU `match_iou`.
///
/// A detection left unmatched counts as a false positive unless the truth
/// box it overlaps most is an ignored one, by at least `match_iou`; such
/// detections are excluded from the counts.
pub fn match_detections(dets: &[DetBox], gts: &[GroundTruthBox], match_iou: f64) -> Metrics {
    let truth: Vec<DetBox> = gts.iter().map(GroundTruthBox::as_det).collect();
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].prob.partial_cmp(&dets[a].prob).unwrap_or(std::cmp::Ordering::Equal));

    let mut matched = vec![false; gts.len()];
    let (mut tp, mut fp) = (0, 0);
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, t) in truth.iter().enumerate() {
            if gts[g].ignore || matched[g] {
                continue;
            }
            let o = iou(&dets[d], t);
            if best.map_or(true, |(_, bo)| o > bo) {
                best = Some((g, o));
            }
        }
        match best {
            Some((g, o)) if o >= match_iou => {
                matched[g] = true;
                tp += 1;
            }
            _ => {
                let closest = truth
                    .iter()
                    .map(|t| iou(&dets[d], t))
                    .enumerate()
                    .fold(None, |acc: Option<(usize, f64)>, (g, o)| match acc {
                        Some((_, bo)) if bo >= o => acc,
                        _ => Some((g, o)),
                    });
                let hits_ignored = matches!(closest, Some((g, o)) if gts[g].ignore && o >= match_iou);
                if !hits_ignored {
                    fp += 1;
                }
            }
        }
    }
    let relevant = gts.iter().filter(|g| !g.ignore).count();
    Metrics::from_counts(tp, fp, relevant - tp)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Sum counts over images, then compute ratios.
    #[default]
    Micro,
    /// Average per-image precision and recall.
    Macro,
}

pub fn aggregate(per_image: &[Metrics], averaging: Averaging) -> Result<Metrics> {
    if per_image.is_empty() {
        return Err(Error::EmptyMetrics);
    }
    let tp = per_image.iter().map(|m| m.tp).sum();
    let fp = per_image.iter().map(|m| m.fp).sum();
    let fn_ = per_image.iter().map(|m| m.fn_).sum();
    Ok(match averaging {
        Averaging::Micro => Metrics::from_counts(tp, fp, fn_),
        Averaging::Macro => {
            let n = per_image.len() as f64;
            let precision = per_image.iter().map(|m| m.precision).sum::<f64>() / n;
            let recall = per_image.iter().map(|m| m.recall).sum::<f64>() / n;
            Metrics {
                precision,
                recall,
                f_measure: f_measure(precision, recall),
                tp,
                fp,
                fn_,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub image: String,
    pub detections: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Always `"one-to-one"`: greedy matching, one detection per truth box.
    pub protocol: String,
    pub match_iou: f64,
    pub averaging: Averaging,
    pub per_image: Vec<ImageResult>,
    pub aggregate: Metrics,
}

impl EvaluationReport {
    pub fn new(per_image: Vec<ImageResult>, match_iou: f64, averaging: Averaging) -> Result<Self> {
        let metrics: Vec<Metrics> = per_image.iter().map(|r| r.metrics).collect();
        Ok(Self {
            protocol: "one-to-one".into(),
            match_iou,
            averaging,
            aggregate: aggregate(&metrics, averaging)?,
            per_image,
        })
    }

    /// Plain-text table: one row per image, then the aggregate.
    pub fn to_table(&self) -> String {
        let width = self.per_image.iter().map(|r| r.image.len()).chain([9]).max().unwrap_or(9);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>6} {:>6} {:>6}  {:>5} {:>5} {:>5}", "image", "P", "R", "F", "tp", "fp", "fn");
        let mut row = |name: &str, m: &Metrics| {
            let _ = writeln!(
                out,
                "{name:<width$}  {:>6.3} {:>6.3} {:>6.3}  {:>5} {:>5} {:>5}",
                m.precision, m.recall, m.f_measure, m.tp, m.fp, m.fn_
            );
        };
        for r in &self.per_image {
            row(&r.image, &r.metrics);
        }
        row(&format!("{:?}", self.averaging).to_lowercase(), &self.aggregate);
        let _ = writeln!(out, "matching: {} at IoU {}", self.protocol, self.match_iou);
        out
    }
}
