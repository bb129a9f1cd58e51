//! Lucy-Richardson deconvolution: the classical and blind iterations and the
//! learned unrolled decoder.

mod unrolled;

pub use unrolled::{
    init_unroll_params, unrolled_lr_decode, unrolled_stage, unrolled_trace, UnrollConfig,
    PSF_QUERY_TOKENS,
};
pub(crate) use unrolled::decode_on_graph;

use crate::error::{ensure, Result};
use crate::imaging::{conv_raw, conv_raw_backward, Boundary, ImagePlane, Psf};

/// Floor applied to denominators and to the latent estimate.
pub const LR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LrState {
    /// Current latent estimate.
    pub f: ImagePlane,
    /// Current PSF estimate.
    pub h: Psf,
    /// Observed blurred image.
    pub g: ImagePlane,
    pub iteration: usize,
}

impl LrState {
    /// Starts from `f = g`.
    pub fn new(g: ImagePlane, h: Psf) -> Result<Self> {
        ensure!(
            h.size() <= g.height().min(g.width()),
            Dimension,
            "PSF of size {} larger than {}x{} image",
            h.size(),
            g.height(),
            g.width()
        );
        let f = g.map(|v| v.max(LR_FLOOR));
        Ok(Self { f, h, g, iteration: 0 })
    }

    /// `f ⊛ h` with reflect boundaries.
    pub fn reblurred(&self) -> ImagePlane {
        blur(&self.f, &self.h)
    }
}

fn blur(img: &ImagePlane, h: &Psf) -> ImagePlane {
    let (hh, w, c) = img.shape();
    let out = conv_raw(img.data(), hh, w, c, h.weights(), h.size(), Boundary::Reflect);
    ImagePlane::from_raw(hh, w, c, out)
}

/// `g ⊘ max(est, floor)`.
fn ratio(g: &ImagePlane, est: &ImagePlane) -> Vec<f64> {
    g.data()
        .iter()
        .zip(est.data())
        .map(|(g, e)| g / e.max(LR_FLOOR))
        .collect()
}

/// `f ← f ⊙ correlate(g ⊘ (f ⊛ h), h)`, floored at [`LR_FLOOR`].
pub fn lr_step(state: &LrState) -> LrState {
    let (h, w, c) = state.f.shape();
    let r = ratio(&state.g, &state.reblurred());
    let psf = state.h.rot180();
    let corr = conv_raw(&r, h, w, c, psf.weights(), psf.size(), Boundary::Reflect);
    let f: Vec<f64> = state
        .f
        .data()
        .iter()
        .zip(&corr)
        .map(|(f, b)| (f * b).max(LR_FLOOR))
        .collect();
    LrState {
        f: ImagePlane::from_raw(h, w, c, f),
        h: state.h.clone(),
        g: state.g.clone(),
        iteration: state.iteration + 1,
    }
}

/// `iters` classical LR steps from `f = g` with a known PSF. Channels are
/// processed independently with the shared PSF.
pub fn lr_deconv(g: &ImagePlane, h: &Psf, iters: usize) -> Result<ImagePlane> {
    Ok(lr_trace(g, h, iters)?.pop().expect("trace holds f0"))
}

/// Every iterate `f0 = g, f1, …, f_iters`.
pub fn lr_trace(g: &ImagePlane, h: &Psf, iters: usize) -> Result<Vec<ImagePlane>> {
    ensure!(iters >= 1, Contract, "need at least one LR iteration");
    let mut state = LrState::new(g.clone(), h.clone())?;
    let mut out = vec![state.f.clone()];
    for _ in 0..iters {
        state = lr_step(&state);
        out.push(state.f.clone());
    }
    Ok(out)
}

/// Multiplicative PSF update on the `k×k` support:
/// `h(i,j) ← h(i,j) · Σ ratio(y,x) f(y+r−i, x+r−j) / Σ f`, floored at zero
/// and renormalized.
pub fn psf_step(state: &LrState) -> Result<LrState> {
    let (h, w, c) = state.f.shape();
    let k = state.h.size();
    let r = ratio(&state.g, &state.reblurred());
    let mut bracket = vec![0.0; k * k];
    conv_raw_backward(
        state.f.data(),
        h,
        w,
        c,
        state.h.weights(),
        k,
        Boundary::Reflect,
        &r,
        None,
        Some(&mut bracket),
    );
    let mass: f64 = state.f.data().iter().sum();
    ensure!(mass > 0.0, DegeneratePsf, "latent estimate has no mass");
    let updated: Vec<f64> = state
        .h
        .weights()
        .iter()
        .zip(&bracket)
        .map(|(h, b)| h * b / mass)
        .collect();
    let h_new = Psf::normalized(k, updated)?;
    Ok(LrState {
        h: h_new,
        ..state.clone()
    })
}

#[derive(Debug, Clone)]
pub struct BlindResult {
    pub f: ImagePlane,
    pub h: Psf,
    pub rounds: usize,
}

/// Alternates one [`lr_step`] and one [`psf_step`] per round, starting from
/// `f = g` and a flat `psf_size×psf_size` kernel.
pub fn blind_deconv(g: &ImagePlane, psf_size: usize, rounds: usize) -> Result<BlindResult> {
    let mut state = LrState::new(g.clone(), Psf::flat(psf_size)?)?;
    for _ in 0..rounds {
        state = lr_step(&state);
        state = psf_step(&state)?;
    }
    Ok(BlindResult {
        f: state.f,
        h: state.h,
        rounds,
    })
}

/// Offset of the PSF center when it is embedded in an `h×w` plane.
pub(crate) fn psf_plane_origin(h: usize, w: usize, k: usize) -> (usize, usize) {
    (h / 2 - k / 2, w / 2 - k / 2)
}

/// Channel stack `[f, h-plane, g, f⊛h]` with `2C + 1 + C` channels; the PSF is
/// zero-padded with its center at `(H/2, W/2)`.
pub fn build_features(state: &LrState) -> ImagePlane {
    let (h, w, c) = state.f.shape();
    let k = state.h.size();
    let (oy, ox) = psf_plane_origin(h, w, k);
    let fh = state.reblurred();
    let channels = 3 * c + 1;
    let mut data = vec![0.0; h * w * channels];
    for y in 0..h {
        for x in 0..w {
            let px = &mut data[(y * w + x) * channels..(y * w + x + 1) * channels];
            for ch in 0..c {
                px[ch] = state.f.get(y, x, ch);
                px[c + 1 + ch] = state.g.get(y, x, ch);
                px[2 * c + 1 + ch] = fh.get(y, x, ch);
            }
            if (oy..oy + k).contains(&y) && (ox..ox + k).contains(&x) {
                px[c] = state.h.kernel().get(y - oy, x - ox);
            }
        }
    }
    ImagePlane::from_raw(h, w, channels, data)
}

/// The four parts of a feature stack built from `c`-channel images.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParts {
    pub f: ImagePlane,
    pub h_plane: ImagePlane,
    pub g: ImagePlane,
    pub reblurred: ImagePlane,
}

pub fn split_features(stack: &ImagePlane, c: usize) -> Result<FeatureParts> {
    ensure!(
        stack.channels() == 3 * c + 1,
        Dimension,
        "feature stack has {} channels, expected {}",
        stack.channels(),
        3 * c + 1
    );
    let pick = |from: usize, n: usize| {
        let planes: Vec<ImagePlane> = (from..from + n).map(|i| stack.channel(i)).collect();
        ImagePlane::from_channels(&planes)
    };
    Ok(FeatureParts {
        f: pick(0, c)?,
        h_plane: stack.channel(c),
        g: pick(c + 1, c)?,
        reblurred: pick(2 * c + 1, c)?,
    })
}
