//! HAR accuracy and TAL segment metrics.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, json_err, Result};

/// mAP thresholds used for the WiFi TAL tables.
pub const WIFI_TAL_THRESHOLDS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];
/// mAP thresholds used for the multi-modal TAL tables.
pub const XRF_TAL_THRESHOLDS: [f64; 5] = [0.5, 0.55, 0.6, 0.65, 0.7];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    #[serde(rename = "class")]
    pub class_id: usize,
}

impl Segment {
    pub fn new(start: f64, end: f64, class_id: usize) -> Result<Self> {
        let s = Self { start, end, class_id };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start.is_finite() && self.end.is_finite()) || self.end <= self.start {
            return Err(invalid(format!(
                "segment [{}, {}] must be finite with end > start",
                self.start, self.end
            )));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(flatten)]
    pub segment: Segment,
    pub score: f64,
}

impl Detection {
    pub fn new(start: f64, end: f64, class_id: usize, score: f64) -> Result<Self> {
        let d = Self {
            segment: Segment::new(start, end, class_id)?,
            score,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.segment.validate()?;
        if !self.score.is_finite() {
            return Err(invalid("detection score must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(detection index, ground-truth index, tIoU)`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_ground_truths: Vec<usize>,
}

impl MatchResult {
    /// Matched tIoU per ground truth, 0 where unmatched.
    pub fn gt_tious(&self, num_gts: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_gts];
        for &(_, g, iou) in &self.pairs {
            out[g] = iou;
        }
        out
    }
}

/// Fraction of positions where `pred == truth`.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(invalid("accuracy of an empty prediction list"));
    }
    if pred.len() != truth.len() {
        return Err(invalid(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Temporal intersection over union.
pub fn tiou(a: &Segment, b: &Segment) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.end.max(b.end) - a.start.min(b.start);
    inter / union
}

/// Greedy one-to-one matching in descending score order.
///
/// Each detection claims the unclaimed ground truth with the highest
/// positive tIoU (same class when `class_aware`); ties go to the earlier
/// start, then the lower index. Equal scores keep input order.
pub fn match_detections(dets: &[Detection], gts: &[Segment], class_aware: bool) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut claimed = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for d in order {
        let det = &dets[d].segment;
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] || (class_aware && gt.class_id != det.class_id) {
                continue;
            }
            let iou = tiou(det, gt);
            if iou <= 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bg, biou)) => iou > biou || (iou == biou && gt.start < gts[bg].start),
            };
            if better {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, iou)) => {
                claimed[g] = true;
                result.pairs.push((d, g, iou));
            }
            None => result.unmatched_detections.push(d),
        }
    }
    result.unmatched_detections.sort_unstable();
    result.unmatched_ground_truths = (0..gts.len()).filter(|&g| !claimed[g]).collect();
    result
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(invalid(format!("tIoU threshold {t} outside (0, 1]")));
    }
    Ok(())
}

fn recovered_fraction(tious: &[f64], t: f64) -> f64 {
    tious.iter().filter(|&&iou| iou >= t).count() as f64 / tious.len() as f64
}

/// Class-aware matched tIoU per ground truth across recordings, in order.
fn pooled_tious(recordings: &[(&[Detection], &[Segment])]) -> Result<Vec<f64>> {
    let mut all = Vec::new();
    for (dets, gts) in recordings {
        all.extend(match_detections(dets, gts, true).gt_tious(gts.len()));
    }
    if all.is_empty() {
        return Err(invalid("AP needs at least one ground-truth action"));
    }
    Ok(all)
}

/// Fraction of ground truths whose matched tIoU reaches `t`.
pub fn ap_at_t(dets: &[Detection], gts: &[Segment], t: f64) -> Result<f64> {
    check_threshold(t)?;
    Ok(recovered_fraction(&pooled_tious(&[(dets, gts)])?, t))
}

/// Mean of [`ap_at_t`] over `thresholds`.
pub fn mean_ap(dets: &[Detection], gts: &[Segment], thresholds: &[f64]) -> Result<f64> {
    Ok(mean_ap_recordings(&[(dets, gts)], thresholds)?.1)
}

/// Per-threshold AP and their mean, with every recording matched
/// separately and ground truths pooled.
pub fn mean_ap_recordings(
    recordings: &[(&[Detection], &[Segment])],
    thresholds: &[f64],
) -> Result<(Vec<f64>, f64)> {
    if thresholds.is_empty() {
        return Err(invalid("mAP needs at least one threshold"));
    }
    for &t in thresholds {
        check_threshold(t)?;
    }
    let tious = pooled_tious(recordings)?;
    let aps: Vec<f64> = thresholds.iter().map(|&t| recovered_fraction(&tious, t)).collect();
    let mean = aps.iter().sum::<f64>() / aps.len() as f64;
    Ok((aps, mean))
}

pub fn load_segments(path: &Path) -> Result<Vec<Segment>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let segs: Vec<Segment> = serde_json::from_str(&text).map_err(json_err(path))?;
    segs.iter().try_for_each(Segment::validate)?;
    Ok(segs)
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let dets: Vec<Detection> = serde_json::from_str(&text).map_err(json_err(path))?;
    dets.iter().try_for_each(Detection::validate)?;
    Ok(dets)
}
