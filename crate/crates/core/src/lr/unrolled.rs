use rand::Rng;

use crate::error::{ensure, Result};
use crate::imaging::{ImagePlane, Psf};
use crate::nn::{Graph, ParamSet, Tensor, Var, GATHER_ZERO};
use crate::transformer::{
    block, cross_block, depatchify, init_block, init_cross_block, init_weight, linear, patchify,
    BlockShape,
};

use super::{psf_plane_origin, LrState, LR_FLOOR};

/// Number of learned query tokens the PSF block attends with.
pub const PSF_QUERY_TOKENS: usize = 4;

/// Bound on the pre-activation of the multiplicative correction.
const PRE_BOUND: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnrollConfig {
    pub stages: usize,
    pub psf_size: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub patch_size: usize,
}

impl Default for UnrollConfig {
    fn default() -> Self {
        Self {
            stages: 3,
            psf_size: 9,
            embed_dim: 32,
            heads: 2,
            mlp_dim: 64,
            patch_size: 4,
        }
    }
}

impl UnrollConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.stages >= 1, Config, "unrolled decoder needs at least one stage");
        ensure!(
            self.psf_size % 2 == 1,
            Config,
            "PSF size must be odd, got {}",
            self.psf_size
        );
        ensure!(self.patch_size > 0, Config, "patch size must be positive");
        self.block_shape().validate()
    }

    pub fn block_shape(&self) -> BlockShape {
        BlockShape {
            dim: self.embed_dim,
            heads: self.heads,
            mlp_dim: self.mlp_dim,
        }
    }

    fn check_image(&self, h: usize, w: usize) -> Result<()> {
        let p = self.patch_size;
        ensure!(
            h % p == 0 && w % p == 0,
            Contract,
            "image {h}x{w} is not divisible by patch size {p}; center-crop it first"
        );
        ensure!(
            self.psf_size <= h.min(w),
            Dimension,
            "PSF size {} exceeds image {h}x{w}",
            self.psf_size
        );
        Ok(())
    }
}

/// Parameters of every stage for `h×w×channels` inputs, under `lr.{s}.`.
/// The final projections (`update`, `update_h`) start at zero, which makes a
/// fresh decoder the identity.
pub fn init_unroll_params(
    cfg: &UnrollConfig,
    h: usize,
    w: usize,
    channels: usize,
    rng: &mut impl Rng,
) -> Result<ParamSet> {
    cfg.validate()?;
    cfg.check_image(h, w)?;
    let p = cfg.patch_size;
    let e = cfg.embed_dim;
    let kk = cfg.psf_size * cfg.psf_size;
    let n = (h / p) * (w / p);
    let in_dim = p * p * (3 * channels + 1);
    let s = cfg.block_shape();
    let mut params = ParamSet::new();
    for st in 0..cfg.stages {
        let pre = format!("lr.{st}");
        params.insert(format!("{pre}.embed.w"), init_weight(in_dim, e, rng));
        params.insert(format!("{pre}.embed.b"), Tensor::zeros(1, e));
        params.insert(format!("{pre}.pos"), Tensor::uniform(n, e, 0.02, rng));
        init_block(&mut params, &format!("{pre}.img"), s, rng);
        params.insert(format!("{pre}.psf.query"), Tensor::uniform(PSF_QUERY_TOKENS, e, 0.02, rng));
        params.insert(format!("{pre}.psf.hq.w"), init_weight(kk, e, rng));
        params.insert(format!("{pre}.psf.hq.b"), Tensor::zeros(1, e));
        init_cross_block(&mut params, &format!("{pre}.psf"), s, rng);
        params.insert(format!("{pre}.update.w"), Tensor::zeros(e, p * p * channels));
        params.insert(format!("{pre}.update.b"), Tensor::zeros(1, p * p * channels));
        params.insert(format!("{pre}.update.gain"), Tensor::scalar(0.0));
        params.insert(format!("{pre}.update_h.w"), Tensor::zeros(e, kk));
        params.insert(format!("{pre}.update_h.b"), Tensor::zeros(1, kk));
    }
    Ok(params)
}

/// Gather table placing a `1×k²` PSF row into an `(h·w)×1` plane centered at
/// `(h/2, w/2)`.
fn psf_plane_index(h: usize, w: usize, k: usize) -> Vec<u32> {
    let (oy, ox) = psf_plane_origin(h, w, k);
    let mut idx = vec![GATHER_ZERO; h * w];
    for i in 0..k {
        for j in 0..k {
            idx[(oy + i) * w + ox + j] = (i * k + j) as u32;
        }
    }
    idx
}

/// One unrolled stage on the tape. `f` and `g_obs` are `(h·w)×C`, `h_row` is
/// `1×k²`; returns the updated `(f, h_row)`.
#[allow(clippy::too_many_arguments)]
fn stage_on_graph(
    g: &mut Graph,
    p: &ParamSet,
    cfg: &UnrollConfig,
    stage: usize,
    f: Var,
    h_row: Var,
    g_obs: Var,
    h: usize,
    w: usize,
) -> Result<(Var, Var)> {
    let k = cfg.psf_size;
    let pre = format!("lr.{stage}");
    let s = cfg.block_shape();

    let hk = g.reshape(h_row, k, k);
    let fh = g.conv2d(f, hk, h, w);
    let h_plane = g.gather(h_row, psf_plane_index(h, w, k), h * w, 1);
    let feats = g.concat_cols(&[f, h_plane, g_obs, fh]);

    let tokens = patchify(g, feats, h, w, cfg.patch_size)?;
    let x = linear(g, p, &format!("{pre}.embed"), tokens)?;
    let pos = g.param(&format!("{pre}.pos"), p)?;
    ensure!(
        g.shape(pos) == g.shape(x),
        Checkpoint,
        "stage {stage} position table is {:?}, tokens are {:?}",
        g.shape(pos),
        g.shape(x)
    );
    let x = g.add(x, pos);
    let (xi, _) = block(g, p, &format!("{pre}.img"), x, s)?;

    let query = g.param(&format!("{pre}.psf.query"), p)?;
    let hq = linear(g, p, &format!("{pre}.psf.hq"), h_row)?;
    let q0 = g.add_row(query, hq);
    let xp = cross_block(g, p, &format!("{pre}.psf"), q0, xi, s)?;

    // multiplicative correction: learned field plus a gated classical LR bracket
    let upd = linear(g, p, &format!("{pre}.update"), xi)?;
    let learned = depatchify(g, upd, h, w, cfg.patch_size);
    let denom = g.clamp_min(fh, LR_FLOOR);
    let ratio = g.div(g_obs, denom);
    let corr = g.correlate2d(ratio, hk, h, w);
    let corr = g.clamp_min(corr, LR_FLOOR);
    let log_bracket = g.log(corr);
    let gain = g.param(&format!("{pre}.update.gain"), p)?;
    let gated = g.scale_by(log_bracket, gain);
    let pre_act = g.add(learned, gated);
    let t = g.scale(pre_act, 1.0 / PRE_BOUND);
    let t = g.tanh(t);
    let t = g.scale(t, PRE_BOUND);
    let m = g.exp(t);
    let f_new = g.mul(f, m);

    let pooled = g.mean_rows(xp);
    let logits = linear(g, p, &format!("{pre}.update_h"), pooled)?;
    let hs = g.clamp_min(h_row, LR_FLOOR);
    let log_h = g.log(hs);
    let z = g.add(log_h, logits);
    let h_new = g.softmax_rows(z);
    Ok((f_new, h_new))
}

/// Runs every stage from `f = max(g, floor)` and a flat PSF; `img` is the
/// observed `(h·w)×C` image. Returns the final `(f, h_row)` and the
/// intermediate pairs.
pub(crate) fn decode_on_graph(
    g: &mut Graph,
    p: &ParamSet,
    cfg: &UnrollConfig,
    img: Var,
    h: usize,
    w: usize,
) -> Result<Vec<(Var, Var)>> {
    cfg.validate()?;
    cfg.check_image(h, w)?;
    let kk = cfg.psf_size * cfg.psf_size;
    let mut f = g.clamp_min(img, LR_FLOOR);
    let mut h_row = g.constant(Tensor::filled(1, kk, 1.0 / kk as f64));
    let mut trace = Vec::with_capacity(cfg.stages);
    for st in 0..cfg.stages {
        (f, h_row) = stage_on_graph(g, p, cfg, st, f, h_row, img, h, w)?;
        trace.push((f, h_row));
    }
    Ok(trace)
}

fn to_plane(g: &Graph, v: Var, h: usize, w: usize) -> ImagePlane {
    let t = g.value(v);
    ImagePlane::from_raw(h, w, t.cols, t.data.clone())
}

fn to_psf(g: &Graph, v: Var, k: usize) -> Result<Psf> {
    Psf::normalized(k, g.value(v).data.clone())
}

fn image_var(g: &mut Graph, img: &ImagePlane) -> Var {
    let (h, w, c) = img.shape();
    g.constant(Tensor::new(h * w, c, img.data().to_vec()))
}

/// Applies stage `stage` to `state` with frozen parameters.
pub fn unrolled_stage(state: &LrState, params: &ParamSet, cfg: &UnrollConfig, stage: usize) -> Result<LrState> {
    ensure!(stage < cfg.stages, Contract, "stage {stage} out of range");
    ensure!(
        state.h.size() == cfg.psf_size,
        Dimension,
        "state PSF is {}x{0}, decoder expects {1}x{1}",
        state.h.size(),
        cfg.psf_size
    );
    let (h, w, _) = state.f.shape();
    cfg.check_image(h, w)?;
    let mut g = Graph::inference();
    let f = image_var(&mut g, &state.f);
    let obs = image_var(&mut g, &state.g);
    let h_row = g.constant(Tensor::row(state.h.weights().to_vec()));
    let (f2, h2) = stage_on_graph(&mut g, params, cfg, stage, f, h_row, obs, h, w)?;
    Ok(LrState {
        f: to_plane(&g, f2, h, w),
        h: to_psf(&g, h2, cfg.psf_size)?,
        g: state.g.clone(),
        iteration: state.iteration + 1,
    })
}

/// `(f, h)` after every stage.
pub fn unrolled_trace(img: &ImagePlane, cfg: &UnrollConfig, params: &ParamSet) -> Result<Vec<(ImagePlane, Psf)>> {
    let (h, w, _) = img.shape();
    let mut g = Graph::inference();
    let v = image_var(&mut g, img);
    let trace = decode_on_graph(&mut g, params, cfg, v, h, w)?;
    trace
        .into_iter()
        .map(|(f, hr)| Ok((to_plane(&g, f, h, w), to_psf(&g, hr, cfg.psf_size)?)))
        .collect()
}

/// Deblurs `img` with the learned stages; returns the final latent estimate
/// and PSF.
pub fn unrolled_lr_decode(img: &ImagePlane, cfg: &UnrollConfig, params: &ParamSet) -> Result<(ImagePlane, Psf)> {
    Ok(unrolled_trace(img, cfg, params)?.pop().expect("at least one stage"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> UnrollConfig {
        UnrollConfig {
            stages: 2,
            psf_size: 3,
            embed_dim: 8,
            heads: 2,
            mlp_dim: 8,
            patch_size: 4,
        }
    }

    fn image(seed: u64, c: usize) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImagePlane::from_fn(8, 8, c, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn zero_init_is_identity() {
        let cfg = small_cfg();
        let img = image(1, 1);
        let params = init_unroll_params(&cfg, 8, 8, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (f, h) = unrolled_lr_decode(&img, &cfg, &params).unwrap();
        for (a, b) in f.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
        for &v in h.weights() {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn random_params_keep_estimates_valid() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..50 {
            let mut params = init_unroll_params(&cfg, 8, 8, 3, &mut rng).unwrap();
            for t in params.values_mut() {
                for v in &mut t.data {
                    *v += rng.random_range(-2.0..2.0);
                }
            }
            let img = image(trial, 3);
            let (f, h) = unrolled_lr_decode(&img, &cfg, &params).unwrap();
            assert!(f.data().iter().all(|&v| v >= 0.0 && v.is_finite()));
            assert!((h.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_stage_matches_decode() {
        let cfg = UnrollConfig { stages: 1, ..small_cfg() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = init_unroll_params(&cfg, 8, 8, 1, &mut rng).unwrap();
        params["lr.0.update.gain"].data[0] = 0.7;
        let img = image(3, 1);
        let (f, h) = unrolled_lr_decode(&img, &cfg, &params).unwrap();
        let state = LrState::new(img, Psf::flat(3).unwrap()).unwrap();
        let next = unrolled_stage(&state, &params, &cfg, 0).unwrap();
        assert_eq!(next.f, f);
        assert_eq!(next.h, h);
    }

    #[test]
    fn unit_gain_reproduces_classical_step() {
        // with the learned field at zero and gain 1, a stage is an LR step
        // passed through the bounded exponential
        let cfg = UnrollConfig { stages: 1, ..small_cfg() };
        let mut params = init_unroll_params(&cfg, 8, 8, 1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        params["lr.0.update.gain"].data[0] = 1.0;
        let img = image(8, 1).map(|v| 0.2 + 0.6 * v);
        let state = LrState::new(img.clone(), Psf::flat(3).unwrap()).unwrap();
        let learned = unrolled_stage(&state, &params, &cfg, 0).unwrap();
        let classical = super::super::lr_step(&state);
        for ((a, b), f0) in learned.f.data().iter().zip(classical.f.data()).zip(img.data()) {
            let bracket = b / f0;
            let expected = f0 * (4.0 * (bracket.ln() / 4.0).tanh()).exp();
            assert!((a - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn divisibility_is_checked() {
        let cfg = small_cfg();
        let params = init_unroll_params(&cfg, 8, 8, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let odd = ImagePlane::zeros(10, 8, 1);
        assert!(unrolled_lr_decode(&odd, &cfg, &params).is_err());
    }

    #[test]
    fn stage_gradients_match_finite_differences() {
        let cfg = UnrollConfig { stages: 2, psf_size: 5, embed_dim: 8, heads: 2, mlp_dim: 8, patch_size: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = init_unroll_params(&cfg, 16, 16, 1, &mut rng).unwrap();
        for t in params.values_mut() {
            for v in &mut t.data {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let img = ImagePlane::from_fn(16, 16, 1, |_, _, _| rng.random_range(0.1..0.9));
        let weights: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss_on = |g: &mut Graph, p: &ParamSet| -> Result<Var> {
            let v = image_var(g, &img);
            let (f, _) = *decode_on_graph(g, p, &cfg, v, 16, 16)?.last().unwrap();
            let w = g.constant(Tensor::new(256, 1, weights.clone()));
            let prod = g.mul(f, w);
            Ok(g.sum_all(prod))
        };
        let mut g = Graph::new();
        let loss = loss_on(&mut g, &params).unwrap();
        let grads = g.backward(loss);
        let names: Vec<String> = params.keys().cloned().collect();
        let checks = crate::nn::check_gradients(&params, &grads, &names, 1e-5, 6, |p| {
            let mut g = Graph::inference();
            let l = loss_on(&mut g, p)?;
            Ok(g.value(l).item())
        })
        .unwrap();
        assert_eq!(checks.len(), names.len());
        for c in checks {
            assert!(c.rel_error <= 1e-3, "{}: {:e}", c.name, c.rel_error);
        }
    }
}
