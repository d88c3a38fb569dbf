//! Minimal reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node to a [`Tape`]; node order is therefore a
//! topological order and [`Tape::backward`] visits each node exactly once,
//! from the output back to the leaves.

use std::rc::Rc;

use ndarray::{s, Array2, Axis};

pub type Mat = Array2<f64>;

pub const BCE_EPS: f64 = 1e-7;
const LN_EPS: f64 = 1e-5;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// `a · b`
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    /// `a + 1·row` where `row` is `1 × n`
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    /// elementwise product with a constant
    Scale(Var, Rc<Mat>),
    Sigmoid(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    /// out row i = mean of input rows `groups[i]` (zero row when empty)
    RowMean(Var, Rc<Vec<Vec<usize>>>),
    /// out row i = input row `idx[i]`, or zeros for `None`
    Gather(Var, Rc<Vec<Option<usize>>>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    /// row-wise select: `mask[i] ? new[i] : old[i]`
    Blend(Var, Var, Rc<Vec<bool>>),
    /// mean weighted binary cross-entropy of a probability column
    Bce {
        p: Var,
        targets: Rc<Vec<f64>>,
        weights: Rc<Vec<f64>>,
    },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` for nodes the output does not depend on.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads[v.0].take()
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1 x n row");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: Rc<Mat>) -> Var {
        let v = self.value(a) * &*factor;
        self.push(v, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Row-wise layer normalization with learnable `1 × d` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn row_mean(&mut self, x: Var, groups: Rc<Vec<Vec<usize>>>) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros((groups.len(), xv.ncols()));
        for (i, g) in groups.iter().enumerate() {
            if g.is_empty() {
                continue;
            }
            let mut row = out.row_mut(i);
            for &j in g {
                row += &xv.row(j);
            }
            row /= g.len() as f64;
        }
        self.push(out, Op::RowMean(x, groups))
    }

    pub fn gather(&mut self, x: Var, idx: Rc<Vec<Option<usize>>>) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros((idx.len(), xv.ncols()));
        for (i, j) in idx.iter().enumerate() {
            if let Some(j) = j {
                out.row_mut(i).assign(&xv.row(*j));
            }
        }
        self.push(out, Op::Gather(x, idx))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat rows must agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let v = self.value(x).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(x, start, end))
    }

    pub fn blend(&mut self, new: Var, old: Var, mask: Rc<Vec<bool>>) -> Var {
        let mut v = self.value(old).clone();
        let nv = self.value(new);
        for (i, keep_new) in mask.iter().enumerate() {
            if *keep_new {
                v.row_mut(i).assign(&nv.row(i));
            }
        }
        self.push(v, Op::Blend(new, old, mask))
    }

    /// Mean over rows of `-w_i [y_i ln p_i + (1-y_i) ln(1-p_i)]`, with `p`
    /// clamped to `[eps, 1-eps]`. Returns a `1 × 1` node.
    pub fn bce(&mut self, p: Var, targets: Rc<Vec<f64>>, weights: Rc<Vec<f64>>) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.ncols(), 1);
        let n = pv.nrows() as f64;
        let total: f64 = pv
            .column(0)
            .iter()
            .zip(targets.iter().zip(weights.iter()))
            .map(|(p, (y, w))| bce_loss(*p, *y, *w))
            .sum();
        self.push(Mat::from_elem((1, 1), total / n), Op::Bce { p, targets, weights })
    }

    /// Reverse pass seeded with ones at `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Mat::ones(self.nodes[output.0].value.raw_dim()));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[row.0], gr);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Scale(a, factor) => accumulate(&mut grads[a.0], &g * &**factor),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = &g * &y.mapv(|v| v * (1.0 - v));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = &g * &y.mapv(|v| 1.0 - v * v);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gain_v = self.value(*gain);
                    accumulate(&mut grads[bias.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(
                        &mut grads[gain.0],
                        (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    let dxhat = &g * gain_v;
                    let d = xhat.ncols() as f64;
                    let mut gx = Mat::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_xh = dh.dot(&xh);
                        let k = inv_std[r] / d;
                        gx.row_mut(r).assign(
                            &dh.iter()
                                .zip(xh.iter())
                                .map(|(a, b)| k * (d * a - sum_dh - b * sum_dh_xh))
                                .collect::<ndarray::Array1<f64>>(),
                        );
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::RowMean(x, groups) => {
                    let mut gx = Mat::zeros(self.value(*x).raw_dim());
                    for (r, grp) in groups.iter().enumerate() {
                        if grp.is_empty() {
                            continue;
                        }
                        let share = g.row(r).mapv(|v| v / grp.len() as f64);
                        for &j in grp {
                            let mut row = gx.row_mut(j);
                            row += &share;
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Gather(x, idx) => {
                    let mut gx = Mat::zeros(self.value(*x).raw_dim());
                    for (r, j) in idx.iter().enumerate() {
                        if let Some(j) = j {
                            let mut row = gx.row_mut(*j);
                            row += &g.row(r);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        accumulate(&mut grads[p.0], g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::SliceCols(x, start, end) => {
                    let mut gx = Mat::zeros(self.value(*x).raw_dim());
                    gx.slice_mut(s![.., *start..*end]).assign(&g);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Blend(new, old, mask) => {
                    let mut gn = Mat::zeros(g.raw_dim());
                    let mut go = Mat::zeros(g.raw_dim());
                    for (r, m) in mask.iter().enumerate() {
                        if *m {
                            gn.row_mut(r).assign(&g.row(r));
                        } else {
                            go.row_mut(r).assign(&g.row(r));
                        }
                    }
                    accumulate(&mut grads[new.0], gn);
                    accumulate(&mut grads[old.0], go);
                }
                Op::Bce { p, targets, weights } => {
                    let pv = self.value(*p);
                    let n = pv.nrows() as f64;
                    let upstream = g[[0, 0]];
                    let mut gp = Mat::zeros(pv.raw_dim());
                    for r in 0..pv.nrows() {
                        gp[[r, 0]] =
                            upstream * bce_grad(pv[[r, 0]], targets[r], weights[r]) / n;
                    }
                    accumulate(&mut grads[p.0], gp);
                }
            }
        }
        Gradients { grads }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-w [y ln p + (1-y) ln(1-p)]` with `p` clamped to `[eps, 1-eps]`.
pub fn bce_loss(p: f64, y: f64, w: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -w * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`bce_loss`] with respect to `p` (zero where clamped).
pub fn bce_grad(p: f64, y: f64, w: f64) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        return 0.0;
    }
    -w * (y / p - (1.0 - y) / (1.0 - p))
}
