//! Clip-level activity classifier with an optional text branch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::one_hot;
use super::train::{train_monitored, Objective, TrainConfig, TrainOutcome};
use super::{HEAD_STREAM, TEXT_STREAM};
use crate::autodiff::{softmax_in_place, Matrix, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::metrics::accuracy;
use crate::signal::FeatureSequence;
use crate::text::{FusionConfig, TextBranch, TokenMatrix};

/// Per-channel mean, standard deviation, and mean absolute first difference
/// of a sequence.
pub fn summarize(seq: &FeatureSequence) -> Vec<f64> {
    let m = &seq.values;
    let (t, c) = m.shape();
    let mut out = vec![0.0; 3 * c];
    if t == 0 {
        return out;
    }
    for ch in 0..c {
        let col: Vec<f64> = (0..t).map(|r| m[(r, ch)]).collect();
        let mean = col.iter().sum::<f64>() / t as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t as f64;
        let diff = if t > 1 {
            col.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (t - 1) as f64
        } else {
            0.0
        };
        out[ch] = mean;
        out[c + ch] = var.sqrt();
        out[2 * c + ch] = diff;
    }
    out
}

/// Summary statistics z-scored with training-set moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirelessEncoder {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl WirelessEncoder {
    pub fn fit(train: &[FeatureSequence]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = train.iter().map(summarize).collect();
        let first = rows.first().ok_or_else(|| invalid("cannot fit an encoder on no sequences"))?;
        let d = first.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("sequences differ in channel count".into()));
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let v = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 1e-24 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn encode(&self, seq: &FeatureSequence) -> Result<Vec<f64>> {
        let s = summarize(seq);
        if s.len() != self.dim() {
            return Err(Error::Shape(format!(
                "sequence summarises to {} features, encoder expects {}",
                s.len(),
                self.dim()
            )));
        }
        Ok(s.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, sd))| (x - m) / sd)
            .collect())
    }

    /// One encoded row per sequence.
    pub fn encode_all(&self, seqs: &[FeatureSequence]) -> Result<Matrix> {
        let rows = seqs.iter().map(|s| self.encode(s)).collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Err(invalid("no sequences to encode"));
        }
        Ok(Matrix::from_rows(&rows))
    }
}

/// `input -> hidden -> classes` with ReLU between the affine maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarHead {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl HarHead {
    pub fn init<R: rand::Rng + ?Sized>(input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let b_in = 1.0 / (input as f64).sqrt();
        let b_hid = 1.0 / (hidden as f64).sqrt();
        Self {
            w1: Matrix::uniform(input, hidden, b_in, rng),
            b1: Matrix::uniform(1, hidden, b_in, rng),
            w2: Matrix::uniform(hidden, classes, b_hid, rng),
            b2: Matrix::uniform(1, classes, b_hid, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn classes(&self) -> usize {
        self.w2.cols()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn set_params(&mut self, p: &[Matrix]) {
        self.w1 = p[0].clone();
        self.b1 = p[1].clone();
        self.w2 = p[2].clone();
        self.b2 = p[3].clone();
    }

    /// `vars` are the four head leaves in [`params`](Self::params) order.
    pub fn logits_on_tape(tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let h = tape.matmul(x, vars[0]);
        let h = tape.add_row(h, vars[1]);
        let h = tape.relu(h);
        let z = tape.matmul(h, vars[2]);
        tape.add_row(z, vars[3])
    }
}

const HEAD_PARAMS: usize = 4;

/// A classifier head, optionally preceded by text fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarModel {
    pub head: HarHead,
    pub text: Option<TextBranch>,
}

impl HarModel {
    /// Head weights come from `seed`'s head stream and text weights from
    /// its text stream, so the head is identical with or without text.
    pub fn new(
        input: usize,
        hidden: usize,
        classes: usize,
        text: Option<(TokenMatrix, FusionConfig)>,
        seed: u64,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 || classes < 2 {
            return Err(invalid("HAR head needs input, hidden >= 1 and >= 2 classes"));
        }
        let mut head_rng = ChaCha8Rng::seed_from_u64(seed);
        head_rng.set_stream(HEAD_STREAM);
        let head = HarHead::init(input, hidden, classes, &mut head_rng);
        let text = match text {
            Some((tokens, cfg)) => {
                let mut text_rng = ChaCha8Rng::seed_from_u64(seed);
                text_rng.set_stream(TEXT_STREAM);
                Some(TextBranch::init(tokens, input, cfg, &mut text_rng)?)
            }
            None => None,
        };
        Ok(Self { head, text })
    }

    pub fn params(&self) -> Vec<Matrix> {
        let mut p: Vec<Matrix> = self.head.params().into_iter().cloned().collect();
        if let Some(t) = &self.text {
            p.extend(t.params().into_iter().cloned());
        }
        p
    }

    pub fn set_params(&mut self, p: &[Matrix]) {
        self.head.set_params(&p[..HEAD_PARAMS]);
        if let Some(t) = &mut self.text {
            t.set_params(&p[HEAD_PARAMS..]);
        }
    }

    pub fn logits_on_tape(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let features = match &self.text {
            Some(text) => {
                let tv = text.bind(&vars[HEAD_PARAMS..]);
                text.fuse_on_tape(tape, &tv, x)
            }
            None => x,
        };
        HarHead::logits_on_tape(tape, &vars[..HEAD_PARAMS], features)
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.head.input_dim() {
            return Err(Error::Shape(format!(
                "features have {} columns, model expects {}",
                features.cols(),
                self.head.input_dim()
            )));
        }
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params().into_iter().map(|p| tape.leaf(p)).collect();
        let x = tape.leaf(features.clone());
        let z = self.logits_on_tape(&mut tape, &vars, x);
        Ok(tape.value(z).clone())
    }

    pub fn probabilities(&self, features: &Matrix) -> Result<Matrix> {
        let mut z = self.logits(features)?;
        for r in 0..z.rows() {
            softmax_in_place(z.row_mut(r));
        }
        Ok(z)
    }

    /// Argmax class per row; ties resolve to the lower index.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        let z = self.logits(features)?;
        Ok((0..z.rows()).map(|r| argmax(z.row(r))).collect())
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of a [`HarModel`] on labelled feature rows.
pub struct HarObjective<'a> {
    pub model: &'a HarModel,
    pub features: &'a Matrix,
    pub labels: &'a [usize],
}

impl Objective for HarObjective<'_> {
    fn num_samples(&self) -> usize {
        self.labels.len()
    }

    fn params(&self) -> Vec<Matrix> {
        self.model.params()
    }

    fn loss(&self, tape: &mut Tape, params: &[Var], batch: &[usize]) -> Var {
        let rows: Vec<&[f64]> = batch.iter().map(|&i| self.features.row(i)).collect();
        let x = tape.leaf(Matrix::from_rows(&rows));
        let z = self.model.logits_on_tape(tape, params, x);
        let p = tape.softmax_rows(z);
        let labels: Vec<usize> = batch.iter().map(|&i| self.labels[i]).collect();
        tape.cross_entropy(p, &one_hot(&labels, self.model.head.classes()))
    }
}

/// Trains `model` in place and returns the loss and training-accuracy
/// curves.
pub fn train_har(
    model: &mut HarModel,
    features: &Matrix,
    labels: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if features.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= model.head.classes()) {
        return Err(invalid(format!("label {bad} out of range")));
    }
    let outcome = {
        let objective = HarObjective {
            model,
            features,
            labels,
        };
        let mut probe = model.clone();
        train_monitored(&objective, objective.params(), cfg, seed, |_, params| {
            probe.set_params(params);
            let pred = probe.predict(features)?;
            accuracy(&pred, labels).map(Some)
        })?
    };
    model.set_params(&outcome.params);
    Ok(outcome)
}
