use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Mat, Var};
use super::params::{ParamId, ParamStore};

const LN_EPS: f64 = 1e-5;

/// Forward-pass context: a fresh graph, read-only parameters, and optional dropout.
pub struct Ctx<'a> {
    pub g: Graph,
    pub ps: &'a ParamStore,
    dropout: f64,
    rng: Option<ChaCha8Rng>,
}

impl<'a> Ctx<'a> {
    pub fn eval(ps: &'a ParamStore) -> Self {
        Self { g: Graph::new(), ps, dropout: 0.0, rng: None }
    }

    pub fn train(ps: &'a ParamStore, dropout: f64, rng: ChaCha8Rng) -> Self {
        Self { g: Graph::new(), ps, dropout, rng: Some(rng) }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        self.g.param(self.ps, id)
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.g.constant(m)
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Inverted dropout; identity in eval mode.
    pub fn dropout(&mut self, x: Var) -> Var {
        let p = self.dropout;
        match self.rng.as_mut() {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 - p;
                let mask = Mat::from_shape_simple_fn(self.g.shape(x), || if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
                let m = self.g.constant(mask);
                self.g.mul(x, m)
            }
            _ => x,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let w = ps.add_glorot(format!("{name}.w"), d_in, d_out, rng);
        let b = ps.add_zeros(format!("{name}.b"), 1, d_out);
        Self { w, b }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let w = cx.p(self.w);
        let b = cx.p(self.b);
        let y = cx.g.matmul(x, w);
        cx.g.add_row(y, b)
    }
}

/// 1-D convolution over the time (row) axis.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    pub fn new<R: Rng>(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let w = ps.add_glorot(format!("{name}.w"), kernel * c_in, c_out, rng);
        let b = ps.add_zeros(format!("{name}.b"), 1, c_out);
        Self { w, b, kernel, stride, pad: kernel / 2 }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let cols = cx.g.unfold(x, self.kernel, self.stride, self.pad);
        let w = cx.p(self.w);
        let b = cx.p(self.b);
        let y = cx.g.matmul(cols, w);
        cx.g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = ps.add_ones(format!("{name}.gamma"), 1, dim);
        let beta = ps.add_zeros(format!("{name}.beta"), 1, dim);
        Self { gamma, beta }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let g = cx.p(self.gamma);
        let b = cx.p(self.beta);
        cx.g.layer_norm(x, g, b, LN_EPS)
    }
}

/// Post-norm transformer layer: single-head self-attention followed by a
/// two-layer convolutional feed-forward block.
#[derive(Debug, Clone)]
pub struct FftBlock {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln1: LayerNorm,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub ln2: LayerNorm,
    head_dim: usize,
}

impl FftBlock {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, hidden: usize, head_dim: usize, filter: usize, kernel: usize, rng: &mut R) -> Self {
        Self {
            q: Linear::new(ps, &format!("{name}.attn.q"), hidden, head_dim, rng),
            k: Linear::new(ps, &format!("{name}.attn.k"), hidden, head_dim, rng),
            v: Linear::new(ps, &format!("{name}.attn.v"), hidden, head_dim, rng),
            o: Linear::new(ps, &format!("{name}.attn.o"), head_dim, hidden, rng),
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), hidden),
            conv1: Conv1d::new(ps, &format!("{name}.ff.conv1"), hidden, filter, kernel, 1, rng),
            conv2: Conv1d::new(ps, &format!("{name}.ff.conv2"), filter, hidden, kernel, 1, rng),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), hidden),
            head_dim,
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let q = self.q.forward(cx, x);
        let k = self.k.forward(cx, x);
        let v = self.v.forward(cx, x);
        let scores = cx.g.matmul_nt(q, k);
        let scores = cx.g.scale(scores, 1.0 / (self.head_dim as f64).sqrt());
        let attn = cx.g.softmax_rows(scores);
        let ctx = cx.g.matmul(attn, v);
        let a = self.o.forward(cx, ctx);
        let a = cx.dropout(a);
        let x = cx.g.add(x, a);
        let x = self.ln1.forward(cx, x);
        let f = self.conv1.forward(cx, x);
        let f = cx.g.relu(f);
        let f = self.conv2.forward(cx, f);
        let f = cx.dropout(f);
        let x2 = cx.g.add(x, f);
        self.ln2.forward(cx, x2)
    }
}

/// Two (conv, ReLU, layer norm) blocks and a projection to one scalar per row.
#[derive(Debug, Clone)]
pub struct ConvPredictor {
    pub conv1: Conv1d,
    pub ln1: LayerNorm,
    pub conv2: Conv1d,
    pub ln2: LayerNorm,
    pub out: Linear,
}

impl ConvPredictor {
    pub fn new<R: Rng>(ps: &mut ParamStore, name: &str, hidden: usize, filter: usize, kernel: usize, rng: &mut R) -> Self {
        Self {
            conv1: Conv1d::new(ps, &format!("{name}.conv1"), hidden, filter, kernel, 1, rng),
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), filter),
            conv2: Conv1d::new(ps, &format!("{name}.conv2"), filter, filter, kernel, 1, rng),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), filter),
            out: Linear::new(ps, &format!("{name}.out"), filter, 1, rng),
        }
    }

    /// Returns a `T x 1` column.
    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let h = self.conv1.forward(cx, x);
        let h = cx.g.relu(h);
        let h = self.ln1.forward(cx, h);
        let h = cx.dropout(h);
        let h = self.conv2.forward(cx, h);
        let h = cx.g.relu(h);
        let h = self.ln2.forward(cx, h);
        let h = cx.dropout(h);
        self.out.forward(cx, h)
    }
}

/// Standard sinusoidal position table, `t x d`.
pub fn sinusoidal_positions(t: usize, d: usize) -> Mat {
    Mat::from_shape_fn((t, d), |(pos, i)| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let a = pos as f64 * rate;
        if i % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}
