//! Reverse-mode automatic differentiation over 2-D `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value and
//! enough context to back-propagate. Sequences are laid out as `time x channels`.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{Gradients, ParamId, ParamStore};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sqrt(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    Unfold { x: Var, kernel: usize, stride: usize, pad: usize },
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    SumAll(Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    SliceRows(Var, usize),
    L2NormRows { x: Var, norms: Vec<f64> },
    Aam { cos: Var, dcos: Mat },
    Transpose(Var),
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf. Repeated requests for the same parameter share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMulNt(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    /// Adds the `1 x N` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(b).0, 1, "add_row expects a single row");
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::AddRow(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::sqrt);
        let rg = self.rg(a);
        self.push(v, Op::Sqrt(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let rg = self.rg(a);
        self.push(v, Op::SoftmaxRows(a), rg)
    }

    /// Row-wise layer normalization with `1 x N` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, rg)
    }

    /// im2col for 1-D convolution over rows: output row `t` concatenates input
    /// rows `t*stride - pad .. t*stride - pad + kernel` (zeros outside).
    pub fn unfold(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let (t_in, c) = xv.dim();
        let t_out = (t_in + 2 * pad).saturating_sub(kernel) / stride + 1;
        let mut out = Mat::zeros((t_out, kernel * c));
        for t in 0..t_out {
            for j in 0..kernel {
                let src = (t * stride + j) as isize - pad as isize;
                if src >= 0 && (src as usize) < t_in {
                    out.slice_mut(s![t, j * c..(j + 1) * c]).assign(&xv.row(src as usize));
                }
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::Unfold { x, kernel, stride, pad }, rg)
    }

    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let v = self.value(x).select(Axis(0), &idx);
        let rg = self.rg(x);
        self.push(v, Op::GatherRows(x, idx), rg)
    }

    /// Repeats a `1 x N` row `n` times.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Var {
        self.gather_rows(x, vec![0; n])
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        let rg = self.rg(x);
        self.push(v, Op::MeanRows(x), rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(x).sum());
        let rg = self.rg(x);
        self.push(v, Op::SumAll(x), rg)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(x).iter().copied().collect();
        let v = Mat::from_shape_vec((rows, cols), flat).expect("reshape size");
        let rg = self.rg(x);
        self.push(v, Op::Reshape(x), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()]).expect("rows");
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::ConcatCols(a, b), rg)
    }

    /// First `n` rows.
    pub fn slice_rows(&mut self, x: Var, n: usize) -> Var {
        let v = self.value(x).slice(s![..n, ..]).to_owned();
        let rg = self.rg(x);
        self.push(v, Op::SliceRows(x, n), rg)
    }

    pub fn l2_normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let mut v = self.value(x).clone();
        let mut norms = Vec::with_capacity(v.nrows());
        for mut row in v.rows_mut() {
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt().max(eps);
            row.mapv_inplace(|a| a / n);
            norms.push(n);
        }
        let rg = self.rg(x);
        self.push(v, Op::L2NormRows { x, norms }, rg)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).t().to_owned();
        let rg = self.rg(x);
        self.push(v, Op::Transpose(x), rg)
    }

    /// Additive angular margin softmax cross-entropy (mean over rows), from a
    /// `B x C` matrix of cosines between normalized embeddings and class centers.
    pub fn aam_softmax_loss(&mut self, cos: Var, labels: &[usize], margin: f64, scale: f64) -> Var {
        let cv = self.value(cos);
        let (b, c) = cv.dim();
        assert_eq!(labels.len(), b);
        let (cos_m, sin_m) = (margin.cos(), margin.sin());
        let threshold = (std::f64::consts::PI - margin).cos();
        let mut logits = cv * scale;
        let mut dlogit_dcos = Mat::from_elem((b, c), scale);
        for (i, &y) in labels.iter().enumerate() {
            let ct = cv[[i, y]].clamp(-1.0 + 1e-7, 1.0 - 1e-7);
            let st = (1.0 - ct * ct).sqrt();
            if ct > threshold {
                logits[[i, y]] = scale * (ct * cos_m - st * sin_m);
                dlogit_dcos[[i, y]] = scale * (cos_m + ct * sin_m / st);
            } else {
                logits[[i, y]] = scale * (ct - margin * sin_m);
            }
        }
        let mut loss = 0.0;
        let mut dcos = Mat::zeros((b, c));
        for (i, &y) in labels.iter().enumerate() {
            let row = logits.row(i);
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            loss += -(row[y] - m - z.ln());
            for j in 0..c {
                let p = (row[j] - m).exp() / z;
                let target = if j == y { 1.0 } else { 0.0 };
                dcos[[i, j]] = (p - target) / b as f64 * dlogit_dcos[[i, j]];
            }
        }
        let rg = self.rg(cos);
        self.push(Mat::from_elem((1, 1), loss / b as f64), Op::Aam { cos, dcos }, rg)
    }

    /// Back-propagates from the scalar `loss`, adding parameter gradients into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) {
        assert_eq!(self.shape(loss), (1, 1), "loss must be a scalar");
        let mut g: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Mat::from_elem((1, 1), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => grads.accumulate(*id, &dy),
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        self.acc(&mut g, *a, dy.dot(&self.value(*b).t()));
                    }
                    if self.rg(*b) {
                        self.acc(&mut g, *b, self.value(*a).t().dot(&dy));
                    }
                }
                Op::MatMulNt(a, b) => {
                    if self.rg(*a) {
                        self.acc(&mut g, *a, dy.dot(self.value(*b)));
                    }
                    if self.rg(*b) {
                        self.acc(&mut g, *b, dy.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut g, *a, dy.clone());
                    self.acc(&mut g, *b, dy);
                }
                Op::AddRow(a, b) => {
                    self.acc(&mut g, *b, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    self.acc(&mut g, *a, dy);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut g, *b, -&dy);
                    self.acc(&mut g, *a, dy);
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        self.acc(&mut g, *a, &dy * self.value(*b));
                    }
                    if self.rg(*b) {
                        self.acc(&mut g, *b, &dy * self.value(*a));
                    }
                }
                Op::Scale(a, c) => self.acc(&mut g, *a, dy * *c),
                Op::AddScalar(a) => self.acc(&mut g, *a, dy),
                Op::Relu(a) => {
                    let mut d = dy;
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    self.acc(&mut g, *a, d);
                }
                Op::Sqrt(a) => {
                    let mut d = dy;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d = if y > 0.0 { *d / (2.0 * y) } else { 0.0 });
                    self.acc(&mut g, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = &dy * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let s = drow.sum();
                        Zip::from(&mut drow).and(&yrow).for_each(|d, &y| *d -= y * s);
                    }
                    self.acc(&mut g, *a, d);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    if self.rg(*gamma) {
                        self.acc(&mut g, *gamma, (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.rg(*beta) {
                        self.acc(&mut g, *beta, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.rg(*x) {
                        let mut dxhat = &dy * self.value(*gamma);
                        let n = dxhat.ncols() as f64;
                        for ((mut row, xr), &is) in dxhat.rows_mut().into_iter().zip(xhat.rows()).zip(inv_std) {
                            let s1 = row.sum();
                            let s2 = row.iter().zip(xr.iter()).map(|(a, b)| a * b).sum::<f64>();
                            Zip::from(&mut row).and(&xr).for_each(|d, &xh| *d = is * (*d - s1 / n - xh * s2 / n));
                        }
                        self.acc(&mut g, *x, dxhat);
                    }
                }
                Op::Unfold { x, kernel, stride, pad } => {
                    let (t_in, c) = self.shape(*x);
                    let mut dx = Mat::zeros((t_in, c));
                    for t in 0..dy.nrows() {
                        for j in 0..*kernel {
                            let src = (t * stride + j) as isize - *pad as isize;
                            if src >= 0 && (src as usize) < t_in {
                                let mut r = dx.row_mut(src as usize);
                                r += &dy.slice(s![t, j * c..(j + 1) * c]);
                            }
                        }
                    }
                    self.acc(&mut g, *x, dx);
                }
                Op::GatherRows(x, idx) => {
                    let mut dx = Mat::zeros(self.shape(*x));
                    for (i, &j) in idx.iter().enumerate() {
                        let mut r = dx.row_mut(j);
                        r += &dy.row(i);
                    }
                    self.acc(&mut g, *x, dx);
                }
                Op::MeanRows(x) => {
                    let (t, c) = self.shape(*x);
                    let row = dy.row(0).to_owned() / t as f64;
                    let dx = row.broadcast((t, c)).expect("broadcast").to_owned();
                    self.acc(&mut g, *x, dx);
                }
                Op::SumAll(x) => {
                    let dx = Mat::from_elem(self.shape(*x), dy[[0, 0]]);
                    self.acc(&mut g, *x, dx);
                }
                Op::Reshape(x) => {
                    let flat: Vec<f64> = dy.iter().copied().collect();
                    let dx = Mat::from_shape_vec(self.shape(*x), flat).expect("reshape back");
                    self.acc(&mut g, *x, dx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.shape(*a).1;
                    self.acc(&mut g, *a, dy.slice(s![.., ..ca]).to_owned());
                    self.acc(&mut g, *b, dy.slice(s![.., ca..]).to_owned());
                }
                Op::SliceRows(x, n) => {
                    let mut dx = Mat::zeros(self.shape(*x));
                    dx.slice_mut(s![..*n, ..]).assign(&dy);
                    self.acc(&mut g, *x, dx);
                }
                Op::L2NormRows { x, norms } => {
                    let y = &node.value;
                    let mut dx = dy.clone();
                    for ((mut drow, yrow), &n) in dx.rows_mut().into_iter().zip(y.rows()).zip(norms) {
                        let dot = drow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>();
                        Zip::from(&mut drow).and(&yrow).for_each(|d, &yv| *d = (*d - yv * dot) / n);
                    }
                    self.acc(&mut g, *x, dx);
                }
                Op::Aam { cos, dcos } => self.acc(&mut g, *cos, dcos * dy[[0, 0]]),
                Op::Transpose(x) => self.acc(&mut g, *x, dy.t().to_owned()),
            }
        }
    }

    fn acc(&self, g: &mut [Option<Mat>], v: Var, d: Mat) {
        if !self.rg(v) {
            return;
        }
        match &mut g[v.0] {
            Some(existing) => *existing += &d,
            slot @ None => *slot = Some(d),
        }
    }
}
