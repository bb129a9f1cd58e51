//! Pre-norm transformer blocks on the autodiff tape, shared by the
//! segmentation encoder and the unrolled deconvolution stages.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::nn::{Graph, ParamSet, Tensor, Var, GATHER_ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
}

impl BlockShape {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.dim > 0 && self.heads > 0 && self.mlp_dim > 0,
            Config,
            "transformer dims must be positive"
        );
        ensure!(
            self.dim % self.heads == 0,
            Config,
            "embed dim {} is not divisible by {} heads",
            self.dim,
            self.heads
        );
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// `rows×cols` weight, uniform in `±1/√rows`.
pub(crate) fn init_weight(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::uniform(rows, cols, 1.0 / (rows as f64).sqrt(), rng)
}

pub(crate) fn init_layer_norm(params: &mut ParamSet, prefix: &str, dim: usize) {
    params.insert(format!("{prefix}.g"), Tensor::filled(1, dim, 1.0));
    params.insert(format!("{prefix}.b"), Tensor::zeros(1, dim));
}

pub(crate) fn init_attention(params: &mut ParamSet, prefix: &str, s: BlockShape, rng: &mut impl Rng) {
    let dh = s.head_dim();
    for h in 0..s.heads {
        for w in ["wq", "wk", "wv"] {
            params.insert(format!("{prefix}.{w}.{h}"), init_weight(s.dim, dh, rng));
        }
        params.insert(format!("{prefix}.wo.{h}"), init_weight(dh, s.dim, rng));
    }
    params.insert(format!("{prefix}.bo"), Tensor::zeros(1, s.dim));
}

pub(crate) fn init_mlp(params: &mut ParamSet, prefix: &str, s: BlockShape, rng: &mut impl Rng) {
    params.insert(format!("{prefix}.w1"), init_weight(s.dim, s.mlp_dim, rng));
    params.insert(format!("{prefix}.b1"), Tensor::zeros(1, s.mlp_dim));
    params.insert(format!("{prefix}.w2"), init_weight(s.mlp_dim, s.dim, rng));
    params.insert(format!("{prefix}.b2"), Tensor::zeros(1, s.dim));
}

/// Parameters of a self-attention block under `prefix`.
pub(crate) fn init_block(params: &mut ParamSet, prefix: &str, s: BlockShape, rng: &mut impl Rng) {
    init_layer_norm(params, &format!("{prefix}.ln1"), s.dim);
    init_attention(params, &format!("{prefix}.attn"), s, rng);
    init_layer_norm(params, &format!("{prefix}.ln2"), s.dim);
    init_mlp(params, &format!("{prefix}.mlp"), s, rng);
}

/// Parameters of a cross-attention block; the key/value side gets its own
/// layer norm.
pub(crate) fn init_cross_block(params: &mut ParamSet, prefix: &str, s: BlockShape, rng: &mut impl Rng) {
    init_block(params, prefix, s, rng);
    init_layer_norm(params, &format!("{prefix}.ln_kv"), s.dim);
}

pub(crate) fn linear(g: &mut Graph, p: &ParamSet, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(&format!("{prefix}.w"), p)?;
    let b = g.param(&format!("{prefix}.b"), p)?;
    let y = g.matmul(x, w);
    Ok(g.add_row(y, b))
}

pub(crate) fn layer_norm(g: &mut Graph, p: &ParamSet, prefix: &str, x: Var) -> Result<Var> {
    let gain = g.param(&format!("{prefix}.g"), p)?;
    let bias = g.param(&format!("{prefix}.b"), p)?;
    Ok(g.layer_norm(x, gain, bias))
}

/// Multi-head attention of `q_in` rows over `kv_in` rows. Returns the output
/// and each head's attention matrix.
pub(crate) fn attention(
    g: &mut Graph,
    p: &ParamSet,
    prefix: &str,
    q_in: Var,
    kv_in: Var,
    s: BlockShape,
) -> Result<(Var, Vec<Var>)> {
    let scale = 1.0 / (s.head_dim() as f64).sqrt();
    let mut out = None;
    let mut maps = Vec::with_capacity(s.heads);
    for h in 0..s.heads {
        let wq = g.param(&format!("{prefix}.wq.{h}"), p)?;
        let wk = g.param(&format!("{prefix}.wk.{h}"), p)?;
        let wv = g.param(&format!("{prefix}.wv.{h}"), p)?;
        let wo = g.param(&format!("{prefix}.wo.{h}"), p)?;
        let q = g.matmul(q_in, wq);
        let k = g.matmul(kv_in, wk);
        let v = g.matmul(kv_in, wv);
        let scores = g.matmul_nt(q, k);
        let scores = g.scale(scores, scale);
        let a = g.softmax_rows(scores);
        maps.push(a);
        let head = g.matmul(a, v);
        let proj = g.matmul(head, wo);
        out = Some(match out {
            None => proj,
            Some(acc) => g.add(acc, proj),
        });
    }
    let bo = g.param(&format!("{prefix}.bo"), p)?;
    let y = g.add_row(out.expect("at least one head"), bo);
    Ok((y, maps))
}

fn mlp(g: &mut Graph, p: &ParamSet, prefix: &str, x: Var) -> Result<Var> {
    let w1 = g.param(&format!("{prefix}.w1"), p)?;
    let b1 = g.param(&format!("{prefix}.b1"), p)?;
    let w2 = g.param(&format!("{prefix}.w2"), p)?;
    let b2 = g.param(&format!("{prefix}.b2"), p)?;
    let h = g.matmul(x, w1);
    let h = g.add_row(h, b1);
    let h = g.gelu(h);
    let y = g.matmul(h, w2);
    Ok(g.add_row(y, b2))
}

/// `z' = z + MSA(LN(z)); z'' = z' + MLP(LN(z'))`.
pub(crate) fn block(g: &mut Graph, p: &ParamSet, prefix: &str, z: Var, s: BlockShape) -> Result<(Var, Vec<Var>)> {
    let n1 = layer_norm(g, p, &format!("{prefix}.ln1"), z)?;
    let (a, maps) = attention(g, p, &format!("{prefix}.attn"), n1, n1, s)?;
    let z1 = g.add(z, a);
    let n2 = layer_norm(g, p, &format!("{prefix}.ln2"), z1)?;
    let m = mlp(g, p, &format!("{prefix}.mlp"), n2)?;
    Ok((g.add(z1, m), maps))
}

/// Same as [`block`] but the queries come from `q` and keys/values from `kv`.
pub(crate) fn cross_block(g: &mut Graph, p: &ParamSet, prefix: &str, q: Var, kv: Var, s: BlockShape) -> Result<Var> {
    let nq = layer_norm(g, p, &format!("{prefix}.ln1"), q)?;
    let nkv = layer_norm(g, p, &format!("{prefix}.ln_kv"), kv)?;
    let (a, _) = attention(g, p, &format!("{prefix}.attn"), nq, nkv, s)?;
    let z1 = g.add(q, a);
    let n2 = layer_norm(g, p, &format!("{prefix}.ln2"), z1)?;
    let m = mlp(g, p, &format!("{prefix}.mlp"), n2)?;
    Ok(g.add(z1, m))
}

/// Gather table that cuts an `(h·w)×c` image matrix into `N×(p·p·c)` patch
/// rows (row-major patches, channel-last inside a patch).
pub(crate) fn patchify_index(h: usize, w: usize, c: usize, p: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(h * w * c);
    for py in 0..h / p {
        for px in 0..w / p {
            for y in 0..p {
                for x in 0..p {
                    let base = ((py * p + y) * w + px * p + x) * c;
                    idx.extend((0..c).map(|ch| (base + ch) as u32));
                }
            }
        }
    }
    idx
}

/// Inverse of [`patchify_index`]: maps patch rows back to the image matrix.
pub(crate) fn depatchify_index(h: usize, w: usize, c: usize, p: usize) -> Vec<u32> {
    let fwd = patchify_index(h, w, c, p);
    let mut inv = vec![GATHER_ZERO; fwd.len()];
    for (i, &src) in fwd.iter().enumerate() {
        inv[src as usize] = i as u32;
    }
    inv
}

pub(crate) fn patchify(g: &mut Graph, img: Var, h: usize, w: usize, p: usize) -> Result<Var> {
    let c = g.shape(img).1;
    ensure!(
        p > 0 && h % p == 0 && w % p == 0,
        Contract,
        "image {h}x{w} is not divisible by patch size {p}; center-crop it first"
    );
    let n = (h / p) * (w / p);
    Ok(g.gather(img, patchify_index(h, w, c, p), n, p * p * c))
}

pub(crate) fn depatchify(g: &mut Graph, tokens: Var, h: usize, w: usize, p: usize) -> Var {
    let c = g.shape(tokens).1 / (p * p);
    g.gather(tokens, depatchify_index(h, w, c, p), h * w, c)
}
