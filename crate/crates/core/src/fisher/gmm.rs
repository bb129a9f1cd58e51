use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};

/// Lower bound on every per-dimension variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Diagonal-covariance Gaussian mixture with `K` components in `D` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    components: usize,
    dim: usize,
    means: Vec<f64>,
    variances: Vec<f64>,
    weights: Vec<f64>,
    /// `log v_k − ½ Σ_d log(2π σ²_kd)`, cached per component.
    log_norm: Vec<f64>,
}

impl GmmModel {
    pub fn new(
        components: usize,
        dim: usize,
        means: Vec<f64>,
        variances: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        ensure!(components > 0 && dim > 0, Contract, "GMM needs K >= 1 and D >= 1");
        ensure!(
            means.len() == components * dim && variances.len() == components * dim,
            Dimension,
            "means/variances must hold K*D = {} values",
            components * dim
        );
        ensure!(weights.len() == components, Dimension, "weights must hold K values");
        ensure!(means.iter().all(|m| m.is_finite()), Contract, "GMM means must be finite");
        ensure!(
            variances.iter().all(|&v| v.is_finite() && v >= VARIANCE_FLOOR),
            Contract,
            "GMM variances must be finite and >= {VARIANCE_FLOOR}"
        );
        ensure!(
            weights.iter().all(|&w| w.is_finite() && w > 0.0),
            Contract,
            "GMM weights must be positive"
        );
        let s: f64 = weights.iter().sum();
        ensure!((s - 1.0).abs() <= 1e-9, Contract, "GMM weights sum to {s}, not 1");
        Ok(Self::from_parts(components, dim, means, variances, weights))
    }

    fn from_parts(
        components: usize,
        dim: usize,
        means: Vec<f64>,
        variances: Vec<f64>,
        weights: Vec<f64>,
    ) -> Self {
        let log_norm = (0..components)
            .map(|k| {
                weights[k].ln()
                    - 0.5
                        * variances[k * dim..(k + 1) * dim]
                            .iter()
                            .map(|v| (2.0 * PI * v).ln())
                            .sum::<f64>()
            })
            .collect();
        Self {
            components,
            dim,
            means,
            variances,
            weights,
            log_norm,
        }
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check_dim(&self, f: &[f64]) -> Result<()> {
        ensure!(
            f.len() == self.dim,
            Dimension,
            "feature has {} dims, GMM expects {}",
            f.len(),
            self.dim
        );
        Ok(())
    }

    /// `log(v_k · N(f | μ_k, σ²_k))` for every component.
    pub(crate) fn log_joint_into(&self, f: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for k in 0..self.components {
            let mu = &self.means[k * d..(k + 1) * d];
            let var = &self.variances[k * d..(k + 1) * d];
            let mut q = 0.0;
            for i in 0..d {
                let diff = f[i] - mu[i];
                q += diff * diff / var[i];
            }
            out[k] = self.log_norm[k] - 0.5 * q;
        }
    }

    /// Soft assignment `ρ(k) = v_k N(f|μ_k,σ²_k) / Σ_j v_j N(f|μ_j,σ²_j)`,
    /// evaluated in log space with max subtraction.
    pub fn posterior(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(f)?;
        let mut out = vec![0.0; self.components];
        self.posterior_into(f, &mut out);
        Ok(out)
    }

    pub(crate) fn posterior_into(&self, f: &[f64], out: &mut [f64]) -> f64 {
        self.log_joint_into(f, out);
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in out.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in out.iter_mut() {
            *v /= sum;
        }
        max + sum.ln()
    }

    /// Total log-likelihood of the rows of a flat `N×D` feature matrix.
    pub fn log_likelihood(&self, features: &[f64]) -> Result<f64> {
        ensure!(
            features.len() % self.dim == 0,
            Dimension,
            "feature matrix length is not a multiple of D"
        );
        let mut scratch = vec![0.0; self.components];
        Ok(features
            .chunks_exact(self.dim)
            .map(|f| self.posterior_into(f, &mut scratch))
            .sum())
    }

    /// The same mixture with components reordered: new component `i` is old
    /// component `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> GmmModel {
        assert_eq!(perm.len(), self.components);
        let d = self.dim;
        let mut means = Vec::with_capacity(self.means.len());
        let mut variances = Vec::with_capacity(self.variances.len());
        let mut weights = Vec::with_capacity(self.components);
        for &p in perm {
            means.extend_from_slice(self.mean(p));
            variances.extend_from_slice(self.variance(p));
            weights.push(self.weights[p]);
        }
        Self::from_parts(self.components, d, means, variances, weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmFitOptions {
    pub components: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the log-likelihood gain of an iteration falls below this.
    pub tol: f64,
}

impl Default for GmmFitOptions {
    fn default() -> Self {
        Self {
            components: 8,
            seed: 0,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Log-likelihood before each M-step, plus the final model's value.
    pub log_likelihood_trace: Vec<f64>,
    /// Number of M-steps performed.
    pub iterations: usize,
    pub converged: bool,
    /// Components re-seeded because they lost all responsibility.
    pub rescued: usize,
}

fn column_variance(features: &[f64], dim: usize) -> Vec<f64> {
    let n = (features.len() / dim) as f64;
    let mut mean = vec![0.0; dim];
    for row in features.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for row in features.chunks_exact(dim) {
        for i in 0..dim {
            let d = row[i] - mean[i];
            var[i] += d * d;
        }
    }
    var.iter().map(|v| (v / n).max(VARIANCE_FLOOR)).collect()
}

fn kmeans_pp(features: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = features.len() / dim;
    let row = |i: usize| &features[i * dim..(i + 1) * dim];
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| dist2(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.extend_from_slice(row(pick));
        for i in 0..n {
            d2[i] = d2[i].min(dist2(row(i), row(pick)));
        }
    }
    centers
}

/// E-step: fills `resp` (N×K) and returns the total log-likelihood.
fn e_step(model: &GmmModel, features: &[f64], resp: &mut [f64]) -> f64 {
    let k = model.components;
    features
        .chunks_exact(model.dim)
        .zip(resp.chunks_exact_mut(k))
        .map(|(f, r)| model.posterior_into(f, r))
        .sum()
}

/// Fits a diagonal GMM by EM from a seeded k-means++ start.
///
/// `features` is a flat row-major `N×dim` matrix. Runs single-threaded in a
/// fixed reduction order, so equal inputs give bit-identical models.
pub fn fit_gmm(features: &[f64], dim: usize, opts: &GmmFitOptions) -> Result<GmmFit> {
    ensure!(dim >= 1, Contract, "feature dimension must be >= 1");
    ensure!(
        features.len() % dim == 0,
        Dimension,
        "feature matrix length {} is not a multiple of {dim}",
        features.len()
    );
    ensure!(
        features.iter().all(|v| v.is_finite()),
        Contract,
        "features must be finite"
    );
    let n = features.len() / dim;
    let k = opts.components;
    ensure!(k >= 1, Contract, "need at least one component");
    ensure!(n >= k, Contract, "need N >= K, got N = {n}, K = {k}");

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let global_var = column_variance(features, dim);
    let means = kmeans_pp(features, dim, k, &mut rng);
    let variances: Vec<f64> = (0..k).flat_map(|_| global_var.iter().copied()).collect();
    let weights = vec![1.0 / k as f64; k];
    let mut model = GmmModel::from_parts(k, dim, means, variances, weights);

    let mut resp = vec![0.0; n * k];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut rescued = 0;
    for it in 0..opts.max_iters {
        let ll = e_step(&model, features, &mut resp);
        trace.push(ll);
        if it > 0 && ll - trace[it - 1] < opts.tol {
            converged = true;
            break;
        }
        let (next, r) = m_step(features, dim, k, &resp, &global_var);
        model = next;
        rescued += r;
        iterations += 1;
    }
    if !converged {
        trace.push(e_step(&model, features, &mut resp));
    }
    Ok(GmmFit {
        model,
        log_likelihood_trace: trace,
        iterations,
        converged,
        rescued,
    })
}

fn m_step(
    features: &[f64],
    dim: usize,
    k: usize,
    resp: &[f64],
    global_var: &[f64],
) -> (GmmModel, usize) {
    let n = features.len() / dim;
    let mut nk = vec![0.0; k];
    let mut means = vec![0.0; k * dim];
    for (f, r) in features.chunks_exact(dim).zip(resp.chunks_exact(k)) {
        for c in 0..k {
            nk[c] += r[c];
            let m = &mut means[c * dim..(c + 1) * dim];
            for i in 0..dim {
                m[i] += r[c] * f[i];
            }
        }
    }
    for c in 0..k {
        if nk[c] > 0.0 {
            for m in &mut means[c * dim..(c + 1) * dim] {
                *m /= nk[c];
            }
        }
    }
    let mut variances = vec![0.0; k * dim];
    for (f, r) in features.chunks_exact(dim).zip(resp.chunks_exact(k)) {
        for c in 0..k {
            let mu = &means[c * dim..(c + 1) * dim];
            let v = &mut variances[c * dim..(c + 1) * dim];
            for i in 0..dim {
                let d = f[i] - mu[i];
                v[i] += r[c] * d * d;
            }
        }
    }
    let mut weights: Vec<f64> = nk.iter().map(|&x| x / n as f64).collect();
    for c in 0..k {
        for v in &mut variances[c * dim..(c + 1) * dim] {
            *v = if nk[c] > 0.0 { (*v / nk[c]).max(VARIANCE_FLOOR) } else { VARIANCE_FLOOR };
        }
    }

    // Re-seed components that lost all responsibility from the points the
    // current mixture explains worst (lowest maximum posterior).
    let empty: Vec<usize> = (0..k).filter(|&c| nk[c] < 1e-10).collect();
    if !empty.is_empty() {
        let mut order: Vec<(f64, usize)> = resp
            .chunks_exact(k)
            .enumerate()
            .map(|(i, r)| (r.iter().copied().fold(0.0, f64::max), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (slot, &c) in empty.iter().enumerate() {
            let (_, idx) = order[slot.min(order.len() - 1)];
            means[c * dim..(c + 1) * dim].copy_from_slice(&features[idx * dim..(idx + 1) * dim]);
            variances[c * dim..(c + 1) * dim].copy_from_slice(global_var);
            weights[c] = 1.0 / n as f64;
        }
        let s: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= s;
        }
    }
    (GmmModel::from_parts(k, dim, means, variances, weights), empty.len())
}
