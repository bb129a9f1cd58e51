use std::sync::Arc;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::fisher::{encode_rows, encode_vjp, GmmModel};
use crate::imaging::{conv_raw, conv_raw_backward, Boundary};

use super::tensor::{matmul, matmul_nt, matmul_tn, ParamSet, Tensor};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index value that makes [`Graph::gather`] emit a zero.
pub const GATHER_ZERO: u32 = u32::MAX;

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Gelu(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    ClampMin(Var, f64),
    SoftmaxRows(Var),
    LayerNorm { x: Var, g: Var, b: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gather(Var, Vec<u32>),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Conv2d { img: Var, kernel: Var, h: usize, w: usize },
    MeanRows(Var),
    SumAll(Var),
    Bce(Var, Vec<f64>),
    Fisher(Var, Arc<GmmModel>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode autodiff tape over 2-D tensors.
///
/// Nodes are appended in evaluation order, so the tape is already
/// topologically sorted and the backward pass is a single reverse sweep.
pub struct Graph {
    nodes: Vec<Node>,
    params: IndexMap<String, Var>,
    trainable: bool,
}

/// Gradients of a scalar with respect to every parameter used on the tape.
pub type Gradients = IndexMap<String, Tensor>;

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A tape whose parameters receive gradients.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: IndexMap::new(),
            trainable: true,
        }
    }

    /// A tape for inference: parameters are treated as constants.
    pub fn inference() -> Self {
        Self {
            trainable: false,
            ..Self::new()
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Places parameter `name` on the tape once; later calls return the same
    /// node so its gradient accumulates over every use.
    pub fn param(&mut self, name: &str, params: &ParamSet) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
        self.nodes.push(Node {
            value: t.clone(),
            op: Op::Leaf,
            needs_grad: self.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn shapes_match(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: shape mismatch");
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul: {n}x{k} · {k2}x{m}");
        let out = matmul(&self.value(a).data, &self.value(b).data, n, k, m);
        self.push(Tensor::new(n, m, out), Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (m, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_nt: {n}x{k} · ({m}x{k2})ᵀ");
        let out = matmul_nt(&self.value(a).data, &self.value(b).data, n, k, m);
        self.push(Tensor::new(n, m, out), Op::MatMulNt(a, b), &[a, b])
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, what: &str) -> Var {
        self.shapes_match(a, b, what);
        let (r, c) = self.shape(a);
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(Tensor::new(r, c, data), op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b), "div")
    }

    /// Adds the `1×m` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(b), (1, c), "add_row: bias shape");
        let bias = &self.value(b).data;
        let data = self
            .value(a)
            .data
            .chunks_exact(c)
            .flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y))
            .collect();
        self.push(Tensor::new(r, c, data), Op::AddRow(a, b), &[a, b])
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let data = self.value(a).data.iter().map(|&x| f(x)).collect();
        self.push(Tensor::new(r, c, data), op, &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    /// Multiplies `a` by the `1×1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "scale_by: scalar expected");
        let sv = self.value(s).data[0];
        let (r, c) = self.shape(a);
        let data = self.value(a).data.iter().map(|&x| x * sv).collect();
        self.push(Tensor::new(r, c, data), Op::ScaleBy(a, s), &[a, s])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
            Op::Gelu(a),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// `max(a, floor)`; the gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| x.max(floor), Op::ClampMin(a, floor))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut data = self.value(a).data.clone();
        for row in data.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(Tensor::new(r, c, data), Op::SoftmaxRows(a), &[a])
    }

    /// Row-wise layer normalization with `1×m` gain and bias.
    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(g), (1, c), "layer_norm: gain shape");
        assert_eq!(self.shape(b), (1, c), "layer_norm: bias shape");
        let xv = &self.value(x).data;
        let gv = &self.value(g).data;
        let bv = &self.value(b).data;
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let xh = (row[j] - mean) * rs;
                xhat[i * c + j] = xh;
                out[i * c + j] = xh * gv[j] + bv[j];
            }
        }
        self.push(Tensor::new(r, c, out), Op::LayerNorm { x, g, b, xhat, rstd }, &[x, g, b])
    }

    /// `out.data[i] = a.data[idx[i]]`, or zero for [`GATHER_ZERO`].
    pub fn gather(&mut self, a: Var, idx: Vec<u32>, rows: usize, cols: usize) -> Var {
        assert_eq!(idx.len(), rows * cols, "gather: index count");
        let src = &self.value(a).data;
        let data = idx
            .iter()
            .map(|&i| if i == GATHER_ZERO { 0.0 } else { src[i as usize] })
            .collect();
        self.push(Tensor::new(rows, cols, data), Op::Gather(a, idx), &[a])
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let t = self.value(a);
        assert_eq!(t.len(), rows * cols, "reshape: element count");
        let data = t.data.clone();
        self.push(Tensor::new(rows, cols, data), Op::Reshape(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows, r, "concat_cols: row mismatch");
                data.extend_from_slice(t.row_slice(i));
            }
        }
        self.push(Tensor::new(r, total, data), Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.shape(parts[0]).1;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, c, "concat_rows: column mismatch");
            data.extend_from_slice(&t.data);
        }
        let r = data.len() / c;
        self.push(Tensor::new(r, c, data), Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Convolves an image stored as an `(h·w)×C` matrix with a `k×k` kernel,
    /// channel by channel, using reflect boundaries.
    pub fn conv2d(&mut self, img: Var, kernel: Var, h: usize, w: usize) -> Var {
        let (hw, c) = self.shape(img);
        assert_eq!(hw, h * w, "conv2d: image rows");
        let (k, k2) = self.shape(kernel);
        assert_eq!(k, k2, "conv2d: square kernel expected");
        let out = conv_raw(
            &self.value(img).data,
            h,
            w,
            c,
            &self.value(kernel).data,
            k,
            Boundary::Reflect,
        );
        self.push(Tensor::new(hw, c, out), Op::Conv2d { img, kernel, h, w }, &[img, kernel])
    }

    /// Correlation: convolution with the kernel rotated by 180°.
    pub fn correlate2d(&mut self, img: Var, kernel: Var, h: usize, w: usize) -> Var {
        let (k, _) = self.shape(kernel);
        let n = (k * k) as u32;
        let idx = (0..n).rev().collect();
        let flipped = self.gather(kernel, idx, k, k);
        self.conv2d(img, flipped, h, w)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; c];
        for row in self.value(a).data.chunks_exact(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        self.push(Tensor::new(1, c, out), Op::MeanRows(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    /// Mean binary cross-entropy of logits against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, target: Vec<f64>) -> Var {
        let z = &self.value(logits).data;
        assert_eq!(z.len(), target.len(), "bce: target length");
        let n = z.len() as f64;
        let loss = z
            .iter()
            .zip(&target)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        self.push(Tensor::scalar(loss), Op::Bce(logits, target), &[logits])
    }

    /// Fisher-vector encodes every row of `patches`.
    pub fn fisher_encode(&mut self, patches: Var, gmm: Arc<GmmModel>) -> Result<Var> {
        let (r, _) = self.shape(patches);
        let out = encode_rows(&gmm, &self.value(patches).data)?;
        let cols = out.len() / r.max(1);
        Ok(self.push(Tensor::new(r, cols, out), Op::Fisher(patches, gmm), &[patches]))
    }

    /// Reverse sweep from the scalar `loss`; returns gradients keyed by
    /// parameter name.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.params
            .iter()
            .filter(|(_, v)| v.0 <= loss.0)
            .map(|(name, v)| {
                let (r, c) = self.shape(*v);
                let g = grads[v.0].clone().unwrap_or_else(|| vec![0.0; r * c]);
                (name.clone(), Tensor::new(r, c, g))
            })
            .collect()
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = val(*a).shape();
                let m = val(*b).cols;
                if needs(*a) {
                    acc(*a, matmul_nt(g, &val(*b).data, n, m, k));
                }
                if needs(*b) {
                    acc(*b, matmul_tn(&val(*a).data, g, n, k, m));
                }
            }
            Op::MatMulNt(a, b) => {
                let (n, k) = val(*a).shape();
                let m = val(*b).rows;
                if needs(*a) {
                    acc(*a, matmul(g, &val(*b).data, n, m, k));
                }
                if needs(*b) {
                    acc(*b, matmul_tn(g, &val(*a).data, n, m, k));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&val(*a).data, &val(*b).data);
                acc(*a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                acc(*b, g.iter().zip(av).map(|(g, a)| g * a).collect());
            }
            Op::Div(a, b) => {
                let (av, bv) = (&val(*a).data, &val(*b).data);
                acc(*a, g.iter().zip(bv).map(|(g, b)| g / b).collect());
                acc(
                    *b,
                    g.iter()
                        .zip(av.iter().zip(bv))
                        .map(|(g, (a, b))| -g * a / (b * b))
                        .collect(),
                );
            }
            Op::AddRow(a, b) => {
                acc(*a, g.to_vec());
                if needs(*b) {
                    let c = out.cols;
                    let mut gb = vec![0.0; c];
                    for row in g.chunks_exact(c) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    acc(*b, gb);
                }
            }
            Op::Scale(a, s) => acc(*a, g.iter().map(|v| v * s).collect()),
            Op::ScaleBy(a, s) => {
                let sv = val(*s).data[0];
                acc(*a, g.iter().map(|v| v * sv).collect());
                if needs(*s) {
                    let d = g.iter().zip(&val(*a).data).map(|(g, a)| g * a).sum();
                    acc(*s, vec![d]);
                }
            }
            Op::Gelu(a) => {
                let d = g
                    .iter()
                    .zip(&val(*a).data)
                    .map(|(g, &x)| {
                        let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        g * (0.5 * (1.0 + t) + 0.5 * x * dt)
                    })
                    .collect();
                acc(*a, d);
            }
            Op::Exp(a) => acc(*a, g.iter().zip(&out.data).map(|(g, y)| g * y).collect()),
            Op::Log(a) => acc(*a, g.iter().zip(&val(*a).data).map(|(g, x)| g / x).collect()),
            Op::Tanh(a) => acc(*a, g.iter().zip(&out.data).map(|(g, y)| g * (1.0 - y * y)).collect()),
            Op::ClampMin(a, floor) => acc(
                *a,
                g.iter()
                    .zip(&val(*a).data)
                    .map(|(g, &x)| if x > *floor { *g } else { 0.0 })
                    .collect(),
            ),
            Op::SoftmaxRows(a) => {
                let c = out.cols;
                let mut d = vec![0.0; g.len()];
                for ((drow, grow), yrow) in d
                    .chunks_exact_mut(c)
                    .zip(g.chunks_exact(c))
                    .zip(out.data.chunks_exact(c))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for j in 0..c {
                        drow[j] = yrow[j] * (grow[j] - dot);
                    }
                }
                acc(*a, d);
            }
            Op::LayerNorm { x, g: gain, b, xhat, rstd } => {
                let c = out.cols;
                let gv = &val(*gain).data;
                if needs(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for (r, rs) in rstd.iter().enumerate() {
                        let gy = &g[r * c..(r + 1) * c];
                        let xh = &xhat[r * c..(r + 1) * c];
                        let gxh: Vec<f64> = gy.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let m1 = gxh.iter().sum::<f64>() / c as f64;
                        let m2 = gxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            dx[r * c + j] = rs * (gxh[j] - m1 - xh[j] * m2);
                        }
                    }
                    acc(*x, dx);
                }
                if needs(*gain) || needs(*b) {
                    let mut gg = vec![0.0; c];
                    let mut gb = vec![0.0; c];
                    for (gy, xh) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            gg[j] += gy[j] * xh[j];
                            gb[j] += gy[j];
                        }
                    }
                    acc(*gain, gg);
                    acc(*b, gb);
                }
            }
            Op::Gather(a, idx) => {
                let mut d = vec![0.0; val(*a).len()];
                for (&i, gv) in idx.iter().zip(g) {
                    if i != GATHER_ZERO {
                        d[i as usize] += gv;
                    }
                }
                acc(*a, d);
            }
            Op::Reshape(a) => acc(*a, g.to_vec()),
            Op::ConcatCols(parts) => {
                let r = out.rows;
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).cols;
                    if needs(p) {
                        let mut d = Vec::with_capacity(r * pc);
                        for row in 0..r {
                            let s = row * out.cols + offset;
                            d.extend_from_slice(&g[s..s + pc]);
                        }
                        acc(p, d);
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    acc(p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::Conv2d { img, kernel, h, w } => {
                let c = out.cols;
                let k = val(*kernel).rows;
                let mut gs = needs(*img).then(|| vec![0.0; h * w * c]);
                let mut gk = needs(*kernel).then(|| vec![0.0; k * k]);
                conv_raw_backward(
                    &val(*img).data,
                    *h,
                    *w,
                    c,
                    &val(*kernel).data,
                    k,
                    Boundary::Reflect,
                    g,
                    gs.as_deref_mut(),
                    gk.as_deref_mut(),
                );
                if let Some(gs) = gs {
                    acc(*img, gs);
                }
                if let Some(gk) = gk {
                    acc(*kernel, gk);
                }
            }
            Op::MeanRows(a) => {
                let (r, c) = val(*a).shape();
                let d = (0..r * c).map(|i| g[i % c] / r as f64).collect();
                acc(*a, d);
            }
            Op::SumAll(a) => acc(*a, vec![g[0]; val(*a).len()]),
            Op::Bce(z, target) => {
                let n = target.len() as f64;
                let d = val(*z)
                    .data
                    .iter()
                    .zip(target)
                    .map(|(&z, &t)| g[0] * (sigmoid(z) - t) / n)
                    .collect();
                acc(*z, d);
            }
            Op::Fisher(x, gmm) => {
                let xv = val(*x);
                let dim = xv.cols;
                let oc = out.cols;
                let mut d = Vec::with_capacity(xv.len());
                for r in 0..xv.rows {
                    d.extend(encode_vjp(gmm, xv.row_slice(r), &g[r * oc..(r + 1) * oc]));
                }
                debug_assert_eq!(d.len(), xv.rows * dim);
                acc(*x, d);
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
