//! Classification and localization losses as plain functions.

use crate::autodiff::{Matrix, Tape};
use crate::error::{invalid, Error, Result};

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;
/// Classification weight in the pyramid loss.
pub const ALPHA_CLS: f64 = 1.0;
/// Localization weight in the pyramid loss.
pub const ALPHA_LOC: f64 = 1000.0;

const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// A loss value with the number of probabilities clamped at the epsilon floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub clamped: usize,
}

/// Localization loss over positive positions; `empty` flags a batch that had
/// none.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationLoss {
    pub value: f64,
    pub empty: bool,
}

/// One-hot rows for `labels`.
pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (r, &c) in labels.iter().enumerate() {
        m[(r, c)] = 1.0;
    }
    m
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for {rows} rows", labels.len())));
    }
    if rows == 0 {
        return Err(invalid("loss over an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
        return Err(invalid(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under row distributions `probs`.
pub fn cross_entropy_loss(probs: &Matrix, labels: &[usize]) -> Result<LossValue> {
    check_labels(labels, probs.rows(), probs.cols())?;
    for r in 0..probs.rows() {
        let row = probs.row(r);
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid(format!("row {r} is not a probability vector")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(invalid(format!("row {r} sums to {s}")));
        }
    }
    let mut tape = Tape::new();
    let p = tape.leaf(probs.clone());
    let loss = tape.cross_entropy(p, &one_hot(labels, probs.cols()));
    Ok(LossValue {
        value: tape.scalar(loss),
        clamped: tape.clamped(),
    })
}

fn check_focal(gamma: f64, alpha: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("focal gamma {gamma} must be >= 0")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("focal alpha {alpha} outside (0, 1]")));
    }
    Ok(())
}

/// Mean focal loss of per-position logits against target classes.
pub fn focal_loss(logits: &Matrix, targets: &[usize], gamma: f64, alpha: f64) -> Result<LossValue> {
    check_focal(gamma, alpha)?;
    check_labels(targets, logits.rows(), logits.cols())?;
    if !logits.is_finite() {
        return Err(invalid("logits must be finite"));
    }
    let mut tape = Tape::new();
    let z = tape.leaf(logits.clone());
    let loss = tape.focal(z, targets, gamma, alpha);
    Ok(LossValue {
        value: tape.scalar(loss),
        clamped: tape.clamped(),
    })
}

/// `[start, end]` rows relative to the anchor from `(to_start, to_end)`
/// offsets.
pub fn decode_offsets(offsets: &Matrix) -> Matrix {
    let mut out = offsets.clone();
    for r in 0..out.rows() {
        out[(r, 0)] = -offsets[(r, 0)];
    }
    out
}

/// Mean `1 - tIoU` of segments decoded from predicted and true offsets at
/// positive positions.
pub fn localization_loss(pred: &Matrix, gt: &Matrix) -> Result<LocalizationLoss> {
    if pred.shape() != gt.shape() || pred.cols() != 2 {
        return Err(Error::Shape(format!(
            "offsets must be matching P x 2, got {:?} and {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    if pred.data().iter().chain(gt.data()).any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(invalid("offsets must be finite and non-negative"));
    }
    if pred.rows() == 0 {
        return Ok(LocalizationLoss {
            value: 0.0,
            empty: true,
        });
    }
    let mut tape = Tape::new();
    let p = tape.leaf(decode_offsets(pred));
    let loss = tape.tiou_loss(p, &decode_offsets(gt));
    Ok(LocalizationLoss {
        value: tape.scalar(loss),
        empty: false,
    })
}

/// `sum_i (ALPHA_CLS * cls_i + ALPHA_LOC * loc_i)` over pyramid levels.
pub fn tal_total_loss(cls: &[f64], loc: &[f64]) -> Result<f64> {
    if cls.len() != loc.len() {
        return Err(invalid(format!(
            "{} classification levels but {} localization levels",
            cls.len(),
            loc.len()
        )));
    }
    Ok(cls.iter().zip(loc).map(|(c, l)| ALPHA_CLS * c + ALPHA_LOC * l).sum())
}
