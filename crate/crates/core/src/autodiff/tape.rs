//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints into a [`Gradients`]
//! table indexed by [`Var`]. Losses are 1x1 matrices.

use super::Matrix;

/// Probability floor used by the log-likelihood losses.
pub const PROB_EPSILON: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softplus(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    MeanRows(Var),
    Sum(Var),
    SelectRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Im2Col {
        input: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    CrossEntropy {
        probs: Var,
        targets: Matrix,
    },
    Focal {
        logits: Var,
        targets: Vec<usize>,
        gamma: f64,
        alpha: f64,
    },
    TiouLoss {
        pred: Var,
        gt: Matrix,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    clamped: usize,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Adjoint of `v`, or zeros of `shape` when `v` does not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of probabilities clamped at [`PROB_EPSILON`] by loss nodes.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on a {:?} node", m.shape());
        m.data()[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (parameter or data). Constants are leaves too;
    /// their adjoints are simply never read.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let mut v = va.clone();
        v.add_assign(vb);
        self.push(v, Op::Add(a, b))
    }

    /// `a + b` with the 1xN row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(vb.rows(), 1, "add_row expects a row vector");
        assert_eq!(va.cols(), vb.cols(), "add_row width mismatch");
        let mut v = va.clone();
        for r in 0..v.rows() {
            for (x, y) in v.row_mut(r).iter_mut().zip(vb.data()) {
                *x += y;
            }
        }
        self.push(v, Op::AddRow(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let v = Matrix::from_vec(va.rows(), va.cols(), data);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Column means: `n x m -> 1 x m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.rows() as f64;
        let mut out = vec![0.0; va.cols()];
        for r in 0..va.rows() {
            for (o, x) in out.iter_mut().zip(va.row(r)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= n);
        self.push(Matrix::row_vector(&out), Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let va = self.value(a);
        let picked: Vec<&[f64]> = rows.iter().map(|&r| va.row(r)).collect();
        let v = if picked.is_empty() {
            Matrix::zeros(0, va.cols())
        } else {
            Matrix::from_rows(&picked)
        };
        self.push(v, Op::SelectRows(a, rows.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows width mismatch");
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols height mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Unfolds a `T x C` sequence into `T_out x (kernel * C)` windows with
    /// zero padding, so that a strided 1-D convolution becomes a matmul.
    pub fn im2col(&mut self, input: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let x = self.value(input);
        let (t, c) = x.shape();
        assert!(kernel >= 1 && stride >= 1);
        assert!(t + 2 * pad >= kernel, "sequence shorter than kernel");
        let t_out = (t + 2 * pad - kernel) / stride + 1;
        let mut out = Matrix::zeros(t_out, kernel * c);
        for j in 0..t_out {
            for k in 0..kernel {
                let src = (j * stride + k) as isize - pad as isize;
                if src >= 0 && (src as usize) < t {
                    out.row_mut(j)[k * c..(k + 1) * c].copy_from_slice(x.row(src as usize));
                }
            }
        }
        self.push(
            out,
            Op::Im2Col {
                input,
                kernel,
                stride,
                pad,
            },
        )
    }

    /// Mean over rows of `sum_c -y[i,c] * ln p[i,c]`. Probabilities below
    /// [`PROB_EPSILON`] at positive targets are clamped and counted.
    pub fn cross_entropy(&mut self, probs: Var, targets: &Matrix) -> Var {
        let p = self.value(probs);
        assert_eq!(p.shape(), targets.shape(), "cross_entropy shape mismatch");
        let n = p.rows().max(1) as f64;
        let mut total = 0.0;
        let mut clamped = 0;
        for (&pv, &y) in p.data().iter().zip(targets.data()) {
            if y == 0.0 {
                continue;
            }
            if pv < PROB_EPSILON {
                clamped += 1;
            }
            total -= y * pv.max(PROB_EPSILON).ln();
        }
        self.clamped += clamped;
        self.push(
            Matrix::from_vec(1, 1, vec![total / n]),
            Op::CrossEntropy {
                probs,
                targets: targets.clone(),
            },
        )
    }

    /// Mean over rows of `-alpha * (1 - p_t)^gamma * ln p_t`, with `p_t` the
    /// softmax probability of row `i`'s target class.
    pub fn focal(&mut self, logits: Var, targets: &[usize], gamma: f64, alpha: f64) -> Var {
        let z = self.value(logits);
        assert_eq!(z.rows(), targets.len(), "focal: one target per row");
        let n = z.rows().max(1) as f64;
        let mut total = 0.0;
        let mut clamped = 0;
        for (r, &t) in targets.iter().enumerate() {
            let (log_pt, pt, was_clamped) = target_log_prob(z.row(r), t);
            clamped += usize::from(was_clamped);
            total += -alpha * (1.0 - pt).powf(gamma) * log_pt;
        }
        self.clamped += clamped;
        self.push(
            Matrix::from_vec(1, 1, vec![total / n]),
            Op::Focal {
                logits,
                targets: targets.to_vec(),
                gamma,
                alpha,
            },
        )
    }

    /// Mean `1 - tIoU` between predicted `[start, end]` rows and fixed
    /// ground-truth rows. An empty prediction set yields 0.
    pub fn tiou_loss(&mut self, pred: Var, gt: &Matrix) -> Var {
        let p = self.value(pred);
        assert_eq!(p.cols(), 2, "tiou_loss expects [start, end] rows");
        assert_eq!(p.shape(), gt.shape(), "tiou_loss shape mismatch");
        let mut total = 0.0;
        for r in 0..p.rows() {
            let (i, u) = overlap(p.row(r), gt.row(r));
            total += 1.0 - ratio(i, u);
        }
        let v = if p.rows() == 0 {
            0.0
        } else {
            total / p.rows() as f64
        };
        self.push(
            Matrix::from_vec(1, 1, vec![v]),
            Op::TiouLoss {
                pred,
                gt: gt.clone(),
            },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose());
                    let gb = self.value(*a).transpose().matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, b) => {
                    let mut gb = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (o, x) in gb.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, Matrix::row_vector(&gb));
                }
                Op::Mul(a, b) => {
                    let ga = hadamard(&g, self.value(*b));
                    let gb = hadamard(&g, self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g.scale(*k)),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
                }
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, &xv)| gv * sigmoid(xv))
                        .collect();
                    accumulate(&mut grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for ((o, gv), yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r))
                        {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(g.data()) {
                            *o = x / rows as f64;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(rows, cols, g.data()[0]));
                }
                Op::SelectRows(a, rows) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for (i, &src) in rows.iter().enumerate() {
                        for (o, x) in ga.row_mut(src).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.value(p).shape();
                        let slice = g.data()[offset * c..(offset + r) * c].to_vec();
                        accumulate(&mut grads, p, Matrix::from_vec(r, c, slice));
                        offset += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.value(p).shape();
                        let mut gp = Matrix::zeros(r, c);
                        for row in 0..r {
                            gp.row_mut(row)
                                .copy_from_slice(&g.row(row)[offset..offset + c]);
                        }
                        accumulate(&mut grads, p, gp);
                        offset += c;
                    }
                }
                Op::Im2Col {
                    input,
                    kernel,
                    stride,
                    pad,
                } => {
                    let (t, c) = self.value(*input).shape();
                    let mut gi = Matrix::zeros(t, c);
                    for j in 0..g.rows() {
                        for k in 0..*kernel {
                            let src = (j * stride + k) as isize - *pad as isize;
                            if src >= 0 && (src as usize) < t {
                                let window = &g.row(j)[k * c..(k + 1) * c];
                                for (o, x) in gi.row_mut(src as usize).iter_mut().zip(window) {
                                    *o += x;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::CrossEntropy { probs, targets } => {
                    let p = self.value(*probs);
                    let scale = g.data()[0] / p.rows().max(1) as f64;
                    let data = p
                        .data()
                        .iter()
                        .zip(targets.data())
                        .map(|(&pv, &y)| {
                            if y == 0.0 || pv < PROB_EPSILON {
                                0.0
                            } else {
                                -scale * y / pv
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *probs, Matrix::from_vec(p.rows(), p.cols(), data));
                }
                Op::Focal {
                    logits,
                    targets,
                    gamma,
                    alpha,
                } => {
                    let z = self.value(*logits);
                    let scale = g.data()[0] / z.rows().max(1) as f64;
                    let mut gz = Matrix::zeros(z.rows(), z.cols());
                    for (r, &t) in targets.iter().enumerate() {
                        let (log_pt, pt, was_clamped) = target_log_prob(z.row(r), t);
                        if was_clamped {
                            continue;
                        }
                        // d(loss)/d(p_t) * p_t, then chain through the softmax.
                        let q = 1.0 - pt;
                        let focusing = if *gamma != 0.0 && q > 0.0 {
                            -gamma * q.powf(gamma - 1.0) * pt * log_pt
                        } else {
                            0.0
                        };
                        let w = -alpha * (focusing + q.powf(*gamma));
                        let mut probs = z.row(r).to_vec();
                        softmax_in_place(&mut probs);
                        for (k, (o, pk)) in gz.row_mut(r).iter_mut().zip(&probs).enumerate() {
                            let delta = if k == t { 1.0 } else { 0.0 };
                            *o = scale * w * (delta - pk);
                        }
                    }
                    accumulate(&mut grads, *logits, gz);
                }
                Op::TiouLoss { pred, gt } => {
                    let p = self.value(*pred);
                    let n = p.rows().max(1) as f64;
                    let mut gp = Matrix::zeros(p.rows(), 2);
                    for r in 0..p.rows() {
                        let (s_hat, e_hat) = (p[(r, 0)], p[(r, 1)]);
                        let (s, e) = (gt[(r, 0)], gt[(r, 1)]);
                        let (i, u) = overlap(p.row(r), gt.row(r));
                        if u <= 0.0 {
                            continue;
                        }
                        let (di_ds, di_de) = if i > 0.0 {
                            (
                                if s_hat > s { -1.0 } else { 0.0 },
                                if e_hat < e { 1.0 } else { 0.0 },
                            )
                        } else {
                            (0.0, 0.0)
                        };
                        let du_ds = if s_hat < s { -1.0 } else { 0.0 };
                        let du_de = if e_hat > e { 1.0 } else { 0.0 };
                        let d_ratio = |di: f64, du: f64| (di * u - i * du) / (u * u);
                        let scale = -g.data()[0] / n;
                        gp[(r, 0)] = scale * d_ratio(di_ds, du_ds);
                        gp[(r, 1)] = scale * d_ratio(di_de, du_de);
                    }
                    accumulate(&mut grads, *pred, gp);
                }
            }
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `(ln p_t, p_t, clamped)` for one row of logits.
fn target_log_prob(row: &[f64], target: usize) -> (f64, f64, bool) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    let log_pt = row[target] - lse;
    if log_pt < PROB_EPSILON.ln() {
        (PROB_EPSILON.ln(), PROB_EPSILON, true)
    } else {
        (log_pt, log_pt.exp(), false)
    }
}

/// Intersection and union lengths of two `[start, end]` intervals.
fn overlap(a: &[f64], b: &[f64]) -> (f64, f64) {
    let inter = (a[1].min(b[1]) - a[0].max(b[0])).max(0.0);
    let union = a[1].max(b[1]) - a[0].min(b[0]);
    (inter, union)
}

fn ratio(i: f64, u: f64) -> f64 {
    if u > 0.0 {
        i / u
    } else {
        0.0
    }
}
