//! Weighted fusion of wireless features with the pooled text representation.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{combine_on_tape, mhsa_on_tape, MhsaVars, MhsaWeights, TokenMatrix, TokenRole};
use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    #[default]
    CrossAttention,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::CrossAttention => "cross_attention",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "cross_attention" => Ok(Pooling::CrossAttention),
            other => Err(invalid(format!("unknown pooling {other:?}"))),
        }
    }
}

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub w_signal: f64,
    pub w_text: f64,
    pub pooling: Pooling,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            w_signal: 0.9,
            w_text: 0.1,
            pooling: Pooling::CrossAttention,
        }
    }
}

impl FusionConfig {
    /// Config with `w_text` set and `w_signal = 1 - w_text`.
    pub fn with_text_weight(w_text: f64, pooling: Pooling) -> Result<Self> {
        let cfg = Self {
            w_signal: 1.0 - w_text,
            w_text,
            pooling,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_signal.is_finite() && self.w_text.is_finite()) {
            return Err(invalid("fusion weights must be finite"));
        }
        if self.w_signal < 0.0 || self.w_text < 0.0 {
            return Err(invalid("fusion weights must be non-negative"));
        }
        if (self.w_signal + self.w_text - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(invalid(format!(
                "fusion weights sum to {}, expected 1",
                self.w_signal + self.w_text
            )));
        }
        Ok(())
    }
}

/// Learnable maps of the fusion stage: the cross-attention query
/// (`D x C`) and the text projection (`C x D`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub query: Matrix,
    pub projection: Matrix,
}

impl FusionParams {
    pub fn init<R: Rng + ?Sized>(signal_dim: usize, text_dim: usize, rng: &mut R) -> Self {
        let query = Matrix::uniform(signal_dim, text_dim, 1.0 / (signal_dim as f64).sqrt(), rng);
        let projection = Matrix::uniform(text_dim, signal_dim, 1.0 / (text_dim as f64).sqrt(), rng);
        Self { query, projection }
    }

    pub fn signal_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn text_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (c, d) = self.projection.shape();
        if self.query.shape() != (d, c) {
            return Err(Error::Shape(format!(
                "query map is {:?}, expected {:?}",
                self.query.shape(),
                (d, c)
            )));
        }
        if !(self.query.is_finite() && self.projection.is_finite()) {
            return Err(invalid("fusion parameters must be finite"));
        }
        Ok(())
    }
}

/// `w_signal * wireless + w_text * pool(tokens) P` on a tape.
///
/// `wireless` is `N x D`; `tokens` holds every label token as a row.
/// Mean pooling yields the same text vector for all rows; cross-attention
/// pooling queries the tokens with each wireless row.
pub fn fuse_on_tape(
    tape: &mut Tape,
    wireless: Var,
    tokens: Var,
    query: Var,
    projection: Var,
    cfg: &FusionConfig,
) -> Var {
    let n = tape.value(wireless).rows();
    let pooled = match cfg.pooling {
        Pooling::Mean => {
            let mean = tape.mean_rows(tokens);
            tape.select_rows(mean, &vec![0; n])
        }
        Pooling::CrossAttention => {
            let c = tape.value(tokens).cols();
            let q = tape.matmul(wireless, query);
            let kt = tape.transpose(tokens);
            let scores = tape.matmul(q, kt);
            let scores = tape.scale(scores, 1.0 / (c as f64).sqrt());
            let attn = tape.softmax_rows(scores);
            tape.matmul(attn, tokens)
        }
    };
    let text = tape.matmul(pooled, projection);
    let text = tape.scale(text, cfg.w_text);
    let signal = tape.scale(wireless, cfg.w_signal);
    tape.add(signal, text)
}

/// Fused feature for one wireless vector.
pub fn fuse(
    wireless: &[f64],
    combined: &TokenMatrix,
    cfg: &FusionConfig,
    params: &FusionParams,
) -> Result<Vec<f64>> {
    fuse_batch(&Matrix::row_vector(wireless), combined, cfg, params).map(Matrix::into_vec)
}

/// Fused features for every row of `wireless`.
pub fn fuse_batch(
    wireless: &Matrix,
    combined: &TokenMatrix,
    cfg: &FusionConfig,
    params: &FusionParams,
) -> Result<Matrix> {
    cfg.validate()?;
    params.validate()?;
    if combined.role() != TokenRole::Combined {
        return Err(invalid("fusion expects combined tokens"));
    }
    if combined.dim() != params.text_dim() {
        return Err(invalid(format!(
            "text dim {} but projection expects {}",
            combined.dim(),
            params.text_dim()
        )));
    }
    if wireless.cols() != params.signal_dim() {
        return Err(invalid(format!(
            "wireless dim {} but projection produces {}",
            wireless.cols(),
            params.signal_dim()
        )));
    }
    if !wireless.is_finite() {
        return Err(invalid("wireless features must be finite"));
    }
    let mut tape = Tape::new();
    let w = tape.leaf(wireless.clone());
    let t = tape.leaf(combined.flatten());
    let q = tape.leaf(params.query.clone());
    let p = tape.leaf(params.projection.clone());
    let out = fuse_on_tape(&mut tape, w, t, q, p, cfg);
    Ok(tape.value(out).clone())
}

/// Trainable text side: label tokens, attention weights, and fusion maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextBranch {
    pub tokens: TokenMatrix,
    pub mhsa: MhsaWeights,
    pub fusion: FusionParams,
    pub cfg: FusionConfig,
}

/// Tape handles for a [`TextBranch`].
#[derive(Debug, Clone)]
pub struct TextBranchVars {
    pub mhsa: MhsaVars,
    pub query: Var,
    pub projection: Var,
}

impl TextBranch {
    pub fn init<R: Rng + ?Sized>(
        tokens: TokenMatrix,
        signal_dim: usize,
        cfg: FusionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if tokens.role() != TokenRole::Initial {
            return Err(invalid("text branch starts from initial tokens"));
        }
        let c = tokens.dim();
        let (h, dk) = MhsaWeights::default_shape(c);
        let mhsa = MhsaWeights::init(c, h, dk, rng);
        let fusion = FusionParams::init(signal_dim, c, rng);
        Ok(Self {
            tokens,
            mhsa,
            fusion,
            cfg,
        })
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut p = self.mhsa.params();
        p.push(&self.fusion.query);
        p.push(&self.fusion.projection);
        p
    }

    pub fn set_params(&mut self, params: &[Matrix]) {
        let m = self.mhsa.param_count();
        self.mhsa.set_params(&params[..m]);
        self.fusion.query = params[m].clone();
        self.fusion.projection = params[m + 1].clone();
    }

    pub fn bind(&self, vars: &[Var]) -> TextBranchVars {
        let m = self.mhsa.param_count();
        TextBranchVars {
            mhsa: MhsaVars::from_slice(&vars[..m], self.mhsa.num_heads, self.mhsa.head_dim),
            query: vars[m],
            projection: vars[m + 1],
        }
    }

    /// All combined tokens, `B (L + 1) x C`, built on the tape.
    pub fn combined_on_tape(&self, tape: &mut Tape, vars: &TextBranchVars) -> Var {
        let parts: Vec<Var> = (0..self.tokens.batch())
            .map(|b| {
                let init = tape.leaf(self.tokens.sample(b));
                let (att, _) = mhsa_on_tape(tape, &vars.mhsa, init);
                combine_on_tape(tape, att, init)
            })
            .collect();
        tape.concat_rows(&parts)
    }

    pub fn fuse_on_tape(&self, tape: &mut Tape, vars: &TextBranchVars, wireless: Var) -> Var {
        let tokens = self.combined_on_tape(tape, vars);
        fuse_on_tape(tape, wireless, tokens, vars.query, vars.projection, &self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn combined(b: usize, l: usize, c: usize, seed: u64) -> TokenMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Matrix::uniform(b * (l + 1), c, 1.0, &mut rng).into_vec();
        TokenMatrix::new(b, l + 1, c, data, TokenRole::Combined).unwrap()
    }

    #[test]
    fn degenerate_weights_return_wireless() {
        let tokens = combined(3, 1, 4, 0);
        let params = FusionParams::init(5, 4, &mut ChaCha8Rng::seed_from_u64(1));
        let w = [0.3, -1.2, 4.0, 0.0, 7.5];
        for pooling in [Pooling::Mean, Pooling::CrossAttention] {
            let cfg = FusionConfig::with_text_weight(0.0, pooling).unwrap();
            assert_eq!(fuse(&w, &tokens, &cfg, &params).unwrap(), w);
        }
    }

    #[test]
    fn zero_text_scales_wireless() {
        let tokens = TokenMatrix::new(2, 2, 3, vec![0.0; 12], TokenRole::Combined).unwrap();
        let params = FusionParams::init(3, 3, &mut ChaCha8Rng::seed_from_u64(2));
        let w = [1.0, -2.0, 0.5];
        let out = fuse(&w, &tokens, &FusionConfig::default(), &params).unwrap();
        for (o, x) in out.iter().zip(w) {
            assert!((o - 0.9 * x).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_pooling_identity_projection() {
        let tokens = TokenMatrix::new(
            1,
            2,
            2,
            vec![1.0, 2.0, 3.0, 6.0],
            TokenRole::Combined,
        )
        .unwrap();
        let params = FusionParams {
            query: Matrix::zeros(2, 2),
            projection: Matrix::identity(2),
        };
        let cfg = FusionConfig {
            pooling: Pooling::Mean,
            ..FusionConfig::default()
        };
        let out = fuse(&[10.0, 20.0], &tokens, &cfg, &params).unwrap();
        assert!((out[0] - (9.0 + 0.2)).abs() < 1e-12);
        assert!((out[1] - (18.0 + 0.4)).abs() < 1e-12);
    }

    #[test]
    fn cross_attention_depends_on_query() {
        let tokens = combined(3, 2, 4, 3);
        let params = FusionParams::init(4, 4, &mut ChaCha8Rng::seed_from_u64(4));
        let cfg = FusionConfig::default();
        let a = fuse(&[1.0, 0.0, 0.0, 0.0], &tokens, &cfg, &params).unwrap();
        let b = fuse(&[0.0, 0.0, 0.0, 1.0], &tokens, &cfg, &params).unwrap();
        let text_a: Vec<f64> = a.iter().zip([1.0, 0.0, 0.0, 0.0]).map(|(o, w)| o - 0.9 * w).collect();
        let text_b: Vec<f64> = b.iter().zip([0.0, 0.0, 0.0, 1.0]).map(|(o, w)| o - 0.9 * w).collect();
        assert!(text_a.iter().zip(&text_b).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn config_validation() {
        assert!(FusionConfig::default().validate().is_ok());
        let bad = FusionConfig {
            w_signal: 0.8,
            w_text: 0.1,
            pooling: Pooling::Mean,
        };
        assert!(bad.validate().is_err());
        assert!(FusionConfig::with_text_weight(1.5, Pooling::Mean).is_err());
        assert_eq!("cross_attention".parse::<Pooling>().unwrap(), Pooling::CrossAttention);
        assert!("max".parse::<Pooling>().is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let tokens = combined(2, 1, 4, 5);
        let params = FusionParams::init(3, 4, &mut ChaCha8Rng::seed_from_u64(6));
        assert!(fuse(&[1.0, 2.0], &tokens, &FusionConfig::default(), &params).is_err());
        let params = FusionParams::init(2, 5, &mut ChaCha8Rng::seed_from_u64(6));
        assert!(fuse(&[1.0, 2.0], &tokens, &FusionConfig::default(), &params).is_err());
    }
}
