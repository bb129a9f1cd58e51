//! Gaussian-mixture fitting and Fisher-vector patch tokens.

mod gmm;

pub use gmm::{fit_gmm, GmmFit, GmmFitOptions, GmmModel, VARIANCE_FLOOR};

use crate::error::{ensure, Result};
use crate::imaging::{extract_patches, ImagePlane};

/// Fisher-vector encoding of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherToken {
    /// Soft assignment of the patch to each mixture component.
    pub posterior: Vec<f64>,
    /// `2·K·D` values: for each component, a first-order block then a
    /// second-order block.
    pub descriptor: Vec<f64>,
}

impl FisherToken {
    pub fn max_posterior(&self) -> f64 {
        self.posterior.iter().copied().fold(0.0, f64::max)
    }
}

pub fn descriptor_len(gmm: &GmmModel) -> usize {
    2 * gmm.components() * gmm.dim()
}

/// Gradient statistics before signed square root and L2 normalization.
fn raw_into(gmm: &GmmModel, f: &[f64], post: &mut [f64], desc: &mut [f64]) {
    let d = gmm.dim();
    gmm.posterior_into(f, post);
    for k in 0..gmm.components() {
        let mu = gmm.mean(k);
        let var = gmm.variance(k);
        let scale = post[k] / gmm.weight(k).sqrt();
        let block = &mut desc[2 * k * d..2 * (k + 1) * d];
        for i in 0..d {
            let u = (f[i] - mu[i]) / var[i].sqrt();
            block[i] = scale * u;
            block[d + i] = scale * (u * u - 1.0);
        }
    }
}

fn power_l2(desc: &mut [f64]) {
    for v in desc.iter_mut() {
        *v = v.signum() * v.abs().sqrt();
    }
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in desc.iter_mut() {
            *v /= norm;
        }
    }
}

fn check_dim(gmm: &GmmModel, f: &[f64]) -> Result<()> {
    ensure!(
        f.len() == gmm.dim(),
        Dimension,
        "patch feature has {} dims, GMM expects {}",
        f.len(),
        gmm.dim()
    );
    Ok(())
}

/// The unnormalized descriptor (no signed square root, no L2).
pub fn raw_descriptor(gmm: &GmmModel, f: &[f64]) -> Result<FisherToken> {
    check_dim(gmm, f)?;
    let mut posterior = vec![0.0; gmm.components()];
    let mut descriptor = vec![0.0; descriptor_len(gmm)];
    raw_into(gmm, f, &mut posterior, &mut descriptor);
    Ok(FisherToken { posterior, descriptor })
}

pub fn encode_patch(gmm: &GmmModel, f: &[f64]) -> Result<FisherToken> {
    let mut tok = raw_descriptor(gmm, f)?;
    power_l2(&mut tok.descriptor);
    Ok(tok)
}

/// Encodes each row of a flat `N×D` patch matrix into a row of the returned
/// `N×2KD` descriptor matrix.
pub fn encode_rows(gmm: &GmmModel, patches: &[f64]) -> Result<Vec<f64>> {
    let d = gmm.dim();
    ensure!(
        patches.len() % d == 0,
        Dimension,
        "patch matrix length {} is not a multiple of {d}",
        patches.len()
    );
    let len = descriptor_len(gmm);
    let mut out = vec![0.0; patches.len() / d * len];
    let mut post = vec![0.0; gmm.components()];
    for (f, desc) in patches.chunks_exact(d).zip(out.chunks_exact_mut(len)) {
        raw_into(gmm, f, &mut post, desc);
        power_l2(desc);
    }
    Ok(out)
}

/// Cuts `img` into `p×p` patches (row-major) and encodes each one.
pub fn fv_tokenize(img: &ImagePlane, gmm: &GmmModel, p: usize) -> Result<Vec<FisherToken>> {
    ensure!(
        p * p * img.channels() == gmm.dim(),
        Dimension,
        "GMM dimension {} does not match {p}x{p}x{} patches",
        gmm.dim(),
        img.channels()
    );
    let patches = extract_patches(img, p)?;
    patches.chunks_exact(gmm.dim()).map(|f| encode_patch(gmm, f)).collect()
}

/// Vector-Jacobian product of [`encode_patch`]'s descriptor with respect to
/// the patch features: returns `Jᵀ·grad`.
///
/// The signed square root has an unbounded slope at zero; entries that are
/// exactly zero contribute no gradient.
pub fn encode_vjp(gmm: &GmmModel, f: &[f64], grad: &[f64]) -> Vec<f64> {
    let d = gmm.dim();
    let k_n = gmm.components();
    let mut post = vec![0.0; k_n];
    let mut x = vec![0.0; descriptor_len(gmm)];
    raw_into(gmm, f, &mut post, &mut x);

    let s: Vec<f64> = x.iter().map(|v| v.signum() * v.abs().sqrt()).collect();
    let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; d];
    }
    let y: Vec<f64> = s.iter().map(|v| v / norm).collect();
    let ydg: f64 = y.iter().zip(grad).map(|(a, b)| a * b).sum();
    let gx: Vec<f64> = (0..x.len())
        .map(|i| {
            let gs = (grad[i] - y[i] * ydg) / norm;
            if x[i] == 0.0 {
                0.0
            } else {
                gs / (2.0 * x[i].abs().sqrt())
            }
        })
        .collect();

    let mut g_rho = vec![0.0; k_n];
    let mut g_u = vec![0.0; k_n * d];
    let mut u = vec![0.0; k_n * d];
    for k in 0..k_n {
        let mu = gmm.mean(k);
        let var = gmm.variance(k);
        let inv_sv = 1.0 / gmm.weight(k).sqrt();
        let (ga, gb) = gx[2 * k * d..2 * (k + 1) * d].split_at(d);
        for i in 0..d {
            let uk = (f[i] - mu[i]) / var[i].sqrt();
            u[k * d + i] = uk;
            g_rho[k] += (ga[i] * uk + gb[i] * (uk * uk - 1.0)) * inv_sv;
            g_u[k * d + i] = (ga[i] + gb[i] * 2.0 * uk) * post[k] * inv_sv;
        }
    }
    let mean_g: f64 = post.iter().zip(&g_rho).map(|(p, g)| p * g).sum();
    let mut gf = vec![0.0; d];
    for k in 0..k_n {
        let gl = post[k] * (g_rho[k] - mean_g);
        let var = gmm.variance(k);
        for i in 0..d {
            gf[i] += (g_u[k * d + i] - gl * u[k * d + i]) / var[i].sqrt();
        }
    }
    gf
}
