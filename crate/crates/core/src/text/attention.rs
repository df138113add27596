//! Multi-head self-attention over label descriptions, and the combined
//! `L + 1` token representation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingCache;
use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenRole {
    Initial,
    Attended,
    Combined,
}

/// `B x L x C` text features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMatrix {
    batch: usize,
    tokens: usize,
    dim: usize,
    data: Vec<f64>,
    role: TokenRole,
}

impl TokenMatrix {
    pub fn new(batch: usize, tokens: usize, dim: usize, data: Vec<f64>, role: TokenRole) -> Result<Self> {
        if batch == 0 || tokens == 0 || dim == 0 {
            return Err(invalid("token matrix dimensions must be >= 1"));
        }
        if data.len() != batch * tokens * dim {
            return Err(Error::Shape(format!(
                "{} values for a {batch}x{tokens}x{dim} token matrix",
                data.len()
            )));
        }
        if role == TokenRole::Combined && tokens < 2 {
            return Err(invalid("a combined token matrix has L + 1 >= 2 tokens"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(invalid("token matrix entries must be finite"));
        }
        Ok(Self {
            batch,
            tokens,
            dim,
            data,
            role,
        })
    }

    /// Stacks per-sample `L x C` matrices.
    pub fn from_samples(samples: &[Matrix], role: TokenRole) -> Result<Self> {
        let first = samples.first().ok_or_else(|| invalid("no samples"))?;
        let (tokens, dim) = first.shape();
        let mut data = Vec::with_capacity(samples.len() * tokens * dim);
        for s in samples {
            if s.shape() != (tokens, dim) {
                return Err(Error::Shape(format!(
                    "sample is {:?}, expected {:?}",
                    s.shape(),
                    (tokens, dim)
                )));
            }
            data.extend_from_slice(s.data());
        }
        Self::new(samples.len(), tokens, dim, data, role)
    }

    /// Initial tokens for `labels`, in order, from a cache.
    pub fn from_cache(cache: &EmbeddingCache, labels: &[String]) -> Result<Self> {
        let samples = labels
            .iter()
            .map(|label| {
                let vectors = cache
                    .get(label)
                    .ok_or_else(|| invalid(format!("label {label:?} missing from embedding cache")))?;
                Ok(Matrix::from_rows(vectors))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_samples(&samples, TokenRole::Initial)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn role(&self) -> TokenRole {
        self.role
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn token(&self, b: usize, l: usize) -> &[f64] {
        let start = (b * self.tokens + l) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// The `L x C` block of sample `b`.
    pub fn sample(&self, b: usize) -> Matrix {
        let n = self.tokens * self.dim;
        Matrix::from_vec(self.tokens, self.dim, self.data[b * n..(b + 1) * n].to_vec())
    }

    /// All `B * L` tokens as rows.
    pub fn flatten(&self) -> Matrix {
        Matrix::from_vec(self.batch * self.tokens, self.dim, self.data.clone())
    }

    pub fn permute_tokens(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.tokens {
            return Err(Error::Shape("permutation length differs from L".into()));
        }
        let samples: Vec<Matrix> = (0..self.batch)
            .map(|b| {
                let rows: Vec<&[f64]> = perm.iter().map(|&p| self.token(b, p)).collect();
                Matrix::from_rows(&rows)
            })
            .collect();
        Self::from_samples(&samples, self.role)
    }
}

/// Per-head query/key/value projections (`C x d_k` each) and the output
/// projection (`H d_k x C`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhsaWeights {
    pub num_heads: usize,
    pub head_dim: usize,
    pub w_q: Vec<Matrix>,
    pub w_k: Vec<Matrix>,
    pub w_v: Vec<Matrix>,
    pub w_o: Matrix,
}

impl MhsaWeights {
    /// `H = 4` heads of width `C / 4` (at least 1).
    pub fn default_shape(dim: usize) -> (usize, usize) {
        (4, (dim / 4).max(1))
    }

    /// Uniform `±1/sqrt(fan_in)` initialisation.
    pub fn init<R: Rng + ?Sized>(dim: usize, num_heads: usize, head_dim: usize, rng: &mut R) -> Self {
        let b_in = 1.0 / (dim as f64).sqrt();
        let b_out = 1.0 / ((num_heads * head_dim) as f64).sqrt();
        let mut heads = |n: usize| -> Vec<Matrix> {
            (0..n).map(|_| Matrix::uniform(dim, head_dim, b_in, rng)).collect()
        };
        let w_q = heads(num_heads);
        let w_k = heads(num_heads);
        let w_v = heads(num_heads);
        let w_o = Matrix::uniform(num_heads * head_dim, dim, b_out, rng);
        Self {
            num_heads,
            head_dim,
            w_q,
            w_k,
            w_v,
            w_o,
        }
    }

    pub fn zeros(dim: usize, num_heads: usize, head_dim: usize) -> Self {
        let z = || vec![Matrix::zeros(dim, head_dim); num_heads];
        Self {
            num_heads,
            head_dim,
            w_q: z(),
            w_k: z(),
            w_v: z(),
            w_o: Matrix::zeros(num_heads * head_dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_o.cols()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let h = self.num_heads;
        if h == 0 || self.head_dim == 0 {
            return Err(invalid("need at least one head of width >= 1"));
        }
        if self.w_q.len() != h || self.w_k.len() != h || self.w_v.len() != h {
            return Err(Error::Shape(format!("expected {h} per-head projections")));
        }
        for m in self.w_q.iter().chain(&self.w_k).chain(&self.w_v) {
            if m.shape() != (dim, self.head_dim) {
                return Err(Error::Shape(format!(
                    "head projection is {:?}, expected {:?}",
                    m.shape(),
                    (dim, self.head_dim)
                )));
            }
        }
        if self.w_o.shape() != (h * self.head_dim, dim) {
            return Err(Error::Shape(format!(
                "output projection is {:?}, expected {:?}",
                self.w_o.shape(),
                (h * self.head_dim, dim)
            )));
        }
        if !self.params().iter().all(|m| m.is_finite()) {
            return Err(invalid("attention weights must be finite"));
        }
        Ok(())
    }

    /// Flat parameter list: queries, keys, values, then the output projection.
    pub fn params(&self) -> Vec<&Matrix> {
        self.w_q
            .iter()
            .chain(&self.w_k)
            .chain(&self.w_v)
            .chain(std::iter::once(&self.w_o))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        3 * self.num_heads + 1
    }

    /// Inverse of [`params`](Self::params).
    pub fn set_params(&mut self, params: &[Matrix]) {
        let h = self.num_heads;
        assert_eq!(params.len(), self.param_count());
        self.w_q = params[..h].to_vec();
        self.w_k = params[h..2 * h].to_vec();
        self.w_v = params[2 * h..3 * h].to_vec();
        self.w_o = params[3 * h].clone();
    }
}

/// Attention weights bound to tape leaves.
#[derive(Debug, Clone)]
pub struct MhsaVars {
    pub w_q: Vec<Var>,
    pub w_k: Vec<Var>,
    pub w_v: Vec<Var>,
    pub w_o: Var,
    pub head_dim: usize,
}

impl MhsaVars {
    /// Binds vars laid out as in [`MhsaWeights::params`].
    pub fn from_slice(vars: &[Var], num_heads: usize, head_dim: usize) -> Self {
        let h = num_heads;
        Self {
            w_q: vars[..h].to_vec(),
            w_k: vars[h..2 * h].to_vec(),
            w_v: vars[2 * h..3 * h].to_vec(),
            w_o: vars[3 * h],
            head_dim,
        }
    }

    pub fn leaves(tape: &mut Tape, weights: &MhsaWeights) -> Self {
        let vars: Vec<Var> = weights.params().into_iter().map(|m| tape.leaf(m.clone())).collect();
        Self::from_slice(&vars, weights.num_heads, weights.head_dim)
    }
}

/// `T + Concat_h(softmax(Q_h K_h^T / sqrt(d_k)) V_h) W^O` for one `L x C`
/// sample. Returns the attended tokens and each head's `L x L` weights.
pub fn mhsa_on_tape(tape: &mut Tape, w: &MhsaVars, t_init: Var) -> (Var, Vec<Var>) {
    let inv_sqrt_dk = 1.0 / (w.head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(w.w_q.len());
    let mut maps = Vec::with_capacity(w.w_q.len());
    for h in 0..w.w_q.len() {
        let q = tape.matmul(t_init, w.w_q[h]);
        let k = tape.matmul(t_init, w.w_k[h]);
        let v = tape.matmul(t_init, w.w_v[h]);
        let kt = tape.transpose(k);
        let logits = tape.matmul(q, kt);
        let logits = tape.scale(logits, inv_sqrt_dk);
        let attn = tape.softmax_rows(logits);
        heads.push(tape.matmul(attn, v));
        maps.push(attn);
    }
    let concat = tape.concat_cols(&heads);
    let projected = tape.matmul(concat, w.w_o);
    (tape.add(projected, t_init), maps)
}

/// Summary token (mean of the attended tokens) prepended to the initial
/// tokens: `L x C, L x C -> (L + 1) x C`.
pub fn combine_on_tape(tape: &mut Tape, t_att: Var, t_init: Var) -> Var {
    let summary = tape.mean_rows(t_att);
    tape.concat_rows(&[summary, t_init])
}

fn check_initial(t_init: &TokenMatrix, weights: &MhsaWeights) -> Result<()> {
    if t_init.role() != TokenRole::Initial {
        return Err(invalid("attention input must be initial tokens"));
    }
    weights.validate(t_init.dim())
}

/// Attended tokens `T_att = MHSA(T_init) + T_init`, shape `B x L x C`.
pub fn mhsa_forward(t_init: &TokenMatrix, weights: &MhsaWeights) -> Result<TokenMatrix> {
    check_initial(t_init, weights)?;
    let mut out = Vec::with_capacity(t_init.batch());
    for b in 0..t_init.batch() {
        let mut tape = Tape::new();
        let vars = MhsaVars::leaves(&mut tape, weights);
        let t = tape.leaf(t_init.sample(b));
        let (att, _) = mhsa_on_tape(&mut tape, &vars, t);
        out.push(tape.value(att).clone());
    }
    TokenMatrix::from_samples(&out, TokenRole::Attended)
}

/// Per-sample, per-head `L x L` attention weights.
pub fn attention_weights(t_init: &TokenMatrix, weights: &MhsaWeights) -> Result<Vec<Vec<Matrix>>> {
    check_initial(t_init, weights)?;
    (0..t_init.batch())
        .map(|b| {
            let mut tape = Tape::new();
            let vars = MhsaVars::leaves(&mut tape, weights);
            let t = tape.leaf(t_init.sample(b));
            let (_, maps) = mhsa_on_tape(&mut tape, &vars, t);
            Ok(maps.into_iter().map(|m| tape.value(m).clone()).collect())
        })
        .collect()
}

/// `B x (L + 1) x C` combined representation.
pub fn combine(t_att: &TokenMatrix, t_init: &TokenMatrix) -> Result<TokenMatrix> {
    if t_att.role() != TokenRole::Attended || t_init.role() != TokenRole::Initial {
        return Err(invalid("combine expects attended and initial tokens"));
    }
    if (t_att.batch(), t_att.tokens(), t_att.dim()) != (t_init.batch(), t_init.tokens(), t_init.dim()) {
        return Err(Error::Shape("attended and initial tokens differ in shape".into()));
    }
    let samples: Vec<Matrix> = (0..t_att.batch())
        .map(|b| {
            let mut tape = Tape::new();
            let att = tape.leaf(t_att.sample(b));
            let init = tape.leaf(t_init.sample(b));
            let c = combine_on_tape(&mut tape, att, init);
            tape.value(c).clone()
        })
        .collect();
    TokenMatrix::from_samples(&samples, TokenRole::Combined)
}
