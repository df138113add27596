//! Temporal action localization: a strided 1-D convolutional pyramid with
//! shared per-timestep classification and offset heads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::har::summarize;
use super::losses::{ALPHA_CLS, ALPHA_LOC, FOCAL_ALPHA, FOCAL_GAMMA};
use super::train::{train, Objective, TrainConfig, TrainOutcome};
use super::{HEAD_STREAM, TEXT_STREAM};
use crate::autodiff::{softmax_in_place, Matrix, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::metrics::{tiou, Detection, Segment};
use crate::signal::FeatureSequence;
use crate::text::{FusionConfig, TextBranch, TokenMatrix};

const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TalConfig {
    pub levels: usize,
    pub hidden: usize,
    /// Raw samples summarised into one frame.
    pub window: usize,
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
}

impl Default for TalConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            hidden: 16,
            window: 8,
            score_threshold: 0.05,
            nms_iou: 0.5,
            max_detections: 50,
        }
    }
}

impl TalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.hidden == 0 || self.window == 0 {
            return Err(invalid("levels, hidden and window must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) || !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(invalid("score threshold in [0, 1] and NMS IoU in (0, 1] required"));
        }
        Ok(())
    }
}

/// Frame rate of [`frame_features`] output.
pub fn frame_rate(seq: &FeatureSequence, window: usize) -> f64 {
    seq.sample_rate / window as f64
}

/// Non-overlapping windows of `window` samples, each summarised per channel.
/// A trailing partial window is dropped.
pub fn frame_features(seq: &FeatureSequence, window: usize) -> Result<Matrix> {
    let (t, c) = seq.values.shape();
    let frames = t / window.max(1);
    if window == 0 || frames == 0 {
        return Err(invalid(format!("{t} samples do not fill one window of {window}")));
    }
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|f| {
            let start = f * window * c;
            let chunk = seq.values.data()[start..start + window * c].to_vec();
            summarize(&FeatureSequence {
                sample_rate: seq.sample_rate,
                values: Matrix::from_vec(window, c, chunk),
            })
        })
        .collect();
    Ok(Matrix::from_rows(&rows))
}

/// Per-column z-scoring fitted on training frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FrameNormalizer {
    pub fn fit(frames: &[Matrix]) -> Result<Self> {
        let d = frames.first().ok_or_else(|| invalid("no recordings"))?.cols();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0.0;
        for m in frames {
            if m.cols() != d {
                return Err(Error::Shape("recordings differ in feature width".into()));
            }
            for r in 0..m.rows() {
                for (j, &x) in m.row(r).iter().enumerate() {
                    sum[j] += x;
                    sq[j] += x * x;
                }
                n += 1.0;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let v = (s / n - m * m).max(0.0);
                if v > 1e-24 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, frames: &Matrix) -> Result<Matrix> {
        if frames.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "{} columns, normalizer fitted on {}",
                frames.cols(),
                self.mean.len()
            )));
        }
        let mut out = frames.clone();
        for r in 0..out.rows() {
            for (j, x) in out.row_mut(r).iter_mut().enumerate() {
                *x = (*x - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }
}

/// Training targets of one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTargets {
    /// Class per position; `num_classes` marks background.
    pub classes: Vec<usize>,
    pub positives: Vec<usize>,
    /// `(to_start, to_end)` in units of the level stride, one row per positive.
    pub offsets: Matrix,
}

pub fn level_length(frames: usize, level: usize) -> usize {
    let mut len = frames;
    for _ in 0..level {
        len = len.div_ceil(2);
    }
    len
}

/// A position is positive when its frame lies inside a ground-truth
/// segment; overlapping segments resolve to the shortest.
pub fn build_targets(
    frames: usize,
    segments: &[Segment],
    fps: f64,
    levels: usize,
    num_classes: usize,
) -> Vec<LevelTargets> {
    (0..levels)
        .map(|level| {
            let stride = (1usize << level) as f64;
            let len = level_length(frames, level);
            let mut classes = vec![num_classes; len];
            let mut positives = Vec::new();
            let mut offsets = Vec::new();
            for (j, class) in classes.iter_mut().enumerate() {
                let p = j as f64 * stride;
                let hit = segments
                    .iter()
                    .map(|s| (s, s.start * fps, s.end * fps))
                    .filter(|&(_, s, e)| s <= p && p <= e)
                    .min_by(|a, b| (a.2 - a.1).total_cmp(&(b.2 - b.1)));
                if let Some((seg, s, e)) = hit {
                    *class = seg.class_id;
                    positives.push(j);
                    offsets.push([(p - s) / stride, (e - p) / stride]);
                }
            }
            let offsets = if offsets.is_empty() {
                Matrix::zeros(0, 2)
            } else {
                Matrix::from_rows(&offsets)
            };
            LevelTargets {
                classes,
                positives,
                offsets,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TalPyramid {
    pub num_classes: usize,
    pub stem_w: Matrix,
    pub stem_b: Matrix,
    pub down_w: Vec<Matrix>,
    pub down_b: Vec<Matrix>,
    pub cls_w: Matrix,
    pub cls_b: Matrix,
    pub loc_w: Matrix,
    pub loc_b: Matrix,
    pub text: Option<TextBranch>,
}

/// Per-level head outputs on a tape.
pub struct PyramidOutputs {
    pub logits: Vec<Var>,
    pub offsets: Vec<Var>,
}

impl TalPyramid {
    pub fn new(
        input: usize,
        num_classes: usize,
        cfg: &TalConfig,
        text: Option<(TokenMatrix, FusionConfig)>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if input == 0 || num_classes == 0 {
            return Err(invalid("pyramid needs input width and classes >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(HEAD_STREAM);
        let f = cfg.hidden;
        let conv = |fan_in: usize, rng: &mut ChaCha8Rng| {
            let b = 1.0 / (fan_in as f64).sqrt();
            (Matrix::uniform(fan_in, f, b, rng), Matrix::uniform(1, f, b, rng))
        };
        let (stem_w, stem_b) = conv(KERNEL * input, &mut rng);
        let (down_w, down_b): (Vec<_>, Vec<_>) = (1..cfg.levels).map(|_| conv(KERNEL * f, &mut rng)).unzip();
        let b = 1.0 / (f as f64).sqrt();
        let cls_w = Matrix::uniform(f, num_classes + 1, b, &mut rng);
        let cls_b = Matrix::uniform(1, num_classes + 1, b, &mut rng);
        let loc_w = Matrix::uniform(f, 2, b, &mut rng);
        let loc_b = Matrix::filled(1, 2, rng.random_range(0.0..b));
        let text = match text {
            Some((tokens, fusion)) => {
                let mut text_rng = ChaCha8Rng::seed_from_u64(seed);
                text_rng.set_stream(TEXT_STREAM);
                Some(TextBranch::init(tokens, f, fusion, &mut text_rng)?)
            }
            None => None,
        };
        Ok(Self {
            num_classes,
            stem_w,
            stem_b,
            down_w,
            down_b,
            cls_w,
            cls_b,
            loc_w,
            loc_b,
            text,
        })
    }

    pub fn levels(&self) -> usize {
        self.down_w.len() + 1
    }

    pub fn input_dim(&self) -> usize {
        self.stem_w.rows() / KERNEL
    }

    fn head_param_count(&self) -> usize {
        2 + 2 * self.down_w.len() + 4
    }

    pub fn params(&self) -> Vec<Matrix> {
        let mut p = vec![self.stem_w.clone(), self.stem_b.clone()];
        for (w, b) in self.down_w.iter().zip(&self.down_b) {
            p.push(w.clone());
            p.push(b.clone());
        }
        p.extend([
            self.cls_w.clone(),
            self.cls_b.clone(),
            self.loc_w.clone(),
            self.loc_b.clone(),
        ]);
        if let Some(t) = &self.text {
            p.extend(t.params().into_iter().cloned());
        }
        p
    }

    pub fn set_params(&mut self, p: &[Matrix]) {
        self.stem_w = p[0].clone();
        self.stem_b = p[1].clone();
        let k = self.down_w.len();
        for i in 0..k {
            self.down_w[i] = p[2 + 2 * i].clone();
            self.down_b[i] = p[3 + 2 * i].clone();
        }
        let h = 2 + 2 * k;
        self.cls_w = p[h].clone();
        self.cls_b = p[h + 1].clone();
        self.loc_w = p[h + 2].clone();
        self.loc_b = p[h + 3].clone();
        if let Some(t) = &mut self.text {
            t.set_params(&p[h + 4..]);
        }
    }

    /// Runs the pyramid on one `frames x input` recording.
    pub fn forward_on_tape(&self, tape: &mut Tape, vars: &[Var], x: Var) -> PyramidOutputs {
        let conv = |tape: &mut Tape, input: Var, w: Var, b: Var, stride: usize| {
            let cols = tape.im2col(input, KERNEL, stride, 1);
            let h = tape.matmul(cols, w);
            let h = tape.add_row(h, b);
            tape.relu(h)
        };
        let mut features = vec![conv(tape, x, vars[0], vars[1], 1)];
        for i in 0..self.down_w.len() {
            let prev = *features.last().unwrap();
            features.push(conv(tape, prev, vars[2 + 2 * i], vars[3 + 2 * i], 2));
        }
        let h = self.head_param_count() - 4;
        let text = self.text.as_ref().map(|t| (t, t.bind(&vars[h + 4..])));
        let mut logits = Vec::with_capacity(features.len());
        let mut offsets = Vec::with_capacity(features.len());
        for f in features {
            let f = match &text {
                Some((t, tv)) => t.fuse_on_tape(tape, tv, f),
                None => f,
            };
            let z = tape.matmul(f, vars[h]);
            logits.push(tape.add_row(z, vars[h + 1]));
            let o = tape.matmul(f, vars[h + 2]);
            let o = tape.add_row(o, vars[h + 3]);
            offsets.push(tape.softplus(o));
        }
        PyramidOutputs { logits, offsets }
    }

    /// `sum_levels (ALPHA_CLS * focal + ALPHA_LOC * (1 - tIoU))` on a tape.
    pub fn loss_on_tape(&self, tape: &mut Tape, vars: &[Var], x: Var, targets: &[LevelTargets]) -> Var {
        let out = self.forward_on_tape(tape, vars, x);
        assert_eq!(targets.len(), out.logits.len(), "one target set per level");
        let flip = tape.leaf(Matrix::from_rows(&[[-1.0, 0.0], [0.0, 1.0]]));
        let mut terms = Vec::new();
        for ((&z, &o), t) in out.logits.iter().zip(&out.offsets).zip(targets) {
            let cls = tape.focal(z, &t.classes, FOCAL_GAMMA, FOCAL_ALPHA);
            terms.push(tape.scale(cls, ALPHA_CLS));
            if !t.positives.is_empty() {
                let pos = tape.select_rows(o, &t.positives);
                let seg = tape.matmul(pos, flip);
                let mut gt = t.offsets.clone();
                for r in 0..gt.rows() {
                    gt[(r, 0)] = -gt[(r, 0)];
                }
                let loc = tape.tiou_loss(seg, &gt);
                terms.push(tape.scale(loc, ALPHA_LOC));
            }
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t);
        }
        total
    }

    /// Decoded, class-wise NMS-filtered detections in seconds.
    pub fn detect(&self, frames: &Matrix, fps: f64, duration: f64, cfg: &TalConfig) -> Result<Vec<Detection>> {
        if frames.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "{} input columns, pyramid expects {}",
                frames.cols(),
                self.input_dim()
            )));
        }
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params().into_iter().map(|p| tape.leaf(p)).collect();
        let x = tape.leaf(frames.clone());
        let out = self.forward_on_tape(&mut tape, &vars, x);
        let mut candidates = Vec::new();
        for (level, (&z, &o)) in out.logits.iter().zip(&out.offsets).enumerate() {
            let stride = (1usize << level) as f64;
            let z = tape.value(z);
            let o = tape.value(o);
            for j in 0..z.rows() {
                let mut p = z.row(j).to_vec();
                softmax_in_place(&mut p);
                let fg = &p[..self.num_classes];
                let class = super::har::argmax(fg);
                let score = fg[class];
                if score < cfg.score_threshold {
                    continue;
                }
                let centre = j as f64 * stride;
                let start = ((centre - o[(j, 0)] * stride) / fps).max(0.0);
                let end = ((centre + o[(j, 1)] * stride) / fps).min(duration);
                if end > start {
                    candidates.push(Detection {
                        segment: Segment {
                            start,
                            end,
                            class_id: class,
                        },
                        score,
                    });
                }
            }
        }
        Ok(nms(candidates, cfg.nms_iou, cfg.max_detections))
    }
}

/// Greedy class-wise non-maximum suppression.
pub fn nms(mut dets: Vec<Detection>, iou: f64, max: usize) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept.len() >= max {
            break;
        }
        let suppressed = kept
            .iter()
            .any(|k| k.segment.class_id == d.segment.class_id && tiou(&k.segment, &d.segment) > iou);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Mean pyramid loss over recordings.
pub struct TalObjective<'a> {
    pub model: &'a TalPyramid,
    pub inputs: &'a [Matrix],
    pub targets: &'a [Vec<LevelTargets>],
}

impl Objective for TalObjective<'_> {
    fn num_samples(&self) -> usize {
        self.inputs.len()
    }

    fn params(&self) -> Vec<Matrix> {
        self.model.params()
    }

    fn loss(&self, tape: &mut Tape, params: &[Var], batch: &[usize]) -> Var {
        let losses: Vec<Var> = batch
            .iter()
            .map(|&i| {
                let x = tape.leaf(self.inputs[i].clone());
                self.model.loss_on_tape(tape, params, x, &self.targets[i])
            })
            .collect();
        let stacked = tape.concat_rows(&losses);
        tape.mean_rows(stacked)
    }
}

pub fn train_tal(
    model: &mut TalPyramid,
    inputs: &[Matrix],
    targets: &[Vec<LevelTargets>],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if inputs.len() != targets.len() {
        return Err(invalid("one target set per recording required"));
    }
    if targets.iter().any(|t| t.len() != model.levels()) {
        return Err(invalid("target level count differs from the pyramid"));
    }
    let outcome = {
        let objective = TalObjective {
            model,
            inputs,
            targets,
        };
        train(&objective, objective.params(), cfg, seed)?
    };
    model.set_params(&outcome.params);
    Ok(outcome)
}
