//! Minimal reverse-mode autodiff, Adam, and a finite-difference gradient
//! checker. Everything is `f64` and single-threaded.

mod graph;
mod tensor;

pub use graph::{sigmoid, Gradients, Graph, Var, GATHER_ZERO};
pub use tensor::{ParamSet, Tensor};

use indexmap::IndexMap;

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every parameter that has a gradient.
    pub fn update(&mut self, params: &mut ParamSet, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                p.data[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the probed
    /// entries (0 when both vanish).
    pub rel_error: f64,
    pub probed: usize,
}

/// Probes up to `max_entries` evenly spaced entries of each named tensor with
/// central differences of step `h` and compares them with `grads`.
pub fn check_gradients(
    params: &ParamSet,
    grads: &Gradients,
    names: &[String],
    h: f64,
    max_entries: usize,
    loss: impl Fn(&ParamSet) -> Result<f64>,
) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    let mut work = params.clone();
    for name in names {
        let n = params[name].len();
        let stride = n.div_ceil(max_entries.max(1)).max(1);
        let zero = Tensor::zeros(params[name].rows, params[name].cols);
        let analytic = grads.get(name).unwrap_or(&zero);
        let (mut diff, mut an, mut nu, mut probed) = (0.0, 0.0, 0.0, 0);
        for i in (0..n).step_by(stride) {
            let orig = params[name].data[i];
            work[name].data[i] = orig + h;
            let up = loss(&work)?;
            work[name].data[i] = orig - h;
            let down = loss(&work)?;
            work[name].data[i] = orig;
            let num = (up - down) / (2.0 * h);
            let a = analytic.data[i];
            diff += (a - num) * (a - num);
            an += a * a;
            nu += num * num;
            probed += 1;
        }
        let scale = an.sqrt().max(nu.sqrt());
        out.push(GradCheck {
            name: name.clone(),
            analytic_norm: an.sqrt(),
            numeric_norm: nu.sqrt(),
            rel_error: if scale > 0.0 { diff.sqrt() / scale } else { 0.0 },
            probed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    use crate::fisher::GmmModel;

    fn params(seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.insert("a".into(), Tensor::uniform(4, 3, 1.0, &mut rng));
        p.insert("b".into(), Tensor::uniform(3, 5, 1.0, &mut rng));
        p.insert("r".into(), Tensor::uniform(1, 5, 1.0, &mut rng));
        p.insert("g".into(), Tensor::uniform(1, 5, 1.0, &mut rng));
        p.insert("s".into(), Tensor::scalar(0.7));
        p.insert("img".into(), Tensor::uniform(36, 2, 1.0, &mut rng));
        p.insert("k".into(), Tensor::uniform(3, 3, 1.0, &mut rng));
        p
    }

    /// Exercises every op on one tape.
    fn build(g: &mut Graph, p: &ParamSet) -> Result<Var> {
        let a = g.param("a", p)?;
        let b = g.param("b", p)?;
        let r = g.param("r", p)?;
        let gain = g.param("g", p)?;
        let s = g.param("s", p)?;
        let ab = g.matmul(a, b);
        let x = g.add_row(ab, r);
        let x = g.layer_norm(x, gain, r);
        let x = g.gelu(x);
        let sm = g.softmax_rows(x);
        let y = g.matmul_nt(sm, x);
        let y = g.tanh(y);
        let y = g.scale_by(y, s);
        let e = g.exp(y);
        let l = g.clamp_min(e, 0.3);
        let l = g.log(l);
        let q = g.mul(l, y);
        let q = g.sub(q, y);
        let q2 = g.div(q, e);
        let q = g.add(q2, l);
        let cat = g.concat_cols(&[q, y]);
        let cat2 = g.concat_rows(&[cat, cat]);
        let flat = g.reshape(cat2, 2, 32);
        let pick = g.gather(flat, vec![0, 5, GATHER_ZERO, 7, 63, 5], 2, 3);
        let m = g.mean_rows(pick);
        let img = g.param("img", p)?;
        let k = g.param("k", p)?;
        let cv = g.conv2d(img, k, 6, 6);
        let cr = g.correlate2d(cv, k, 6, 6);
        let c = g.scale(cr, 0.5);
        let gm = GmmModel::new(2, 2, vec![0.0, 0.0, 1.0, -1.0], vec![0.5, 1.0, 1.5, 0.7], vec![0.4, 0.6]).unwrap();
        let fv = g.fisher_encode(c, Arc::new(gm))?;
        let t1 = g.sum_all(m);
        let t2 = g.bce_with_logits(fv, (0..288).map(|i| (i % 3 == 0) as u8 as f64).collect());
        let both = g.concat_cols(&[t1, t2]);
        Ok(g.sum_all(both))
    }

    #[test]
    fn all_ops_match_finite_differences() {
        let p = params(3);
        let mut g = Graph::new();
        let loss = build(&mut g, &p).unwrap();
        let grads = g.backward(loss);
        let names: Vec<String> = p.keys().cloned().collect();
        let report = check_gradients(&p, &grads, &names, 1e-5, 1000, |p| {
            let mut g = Graph::inference();
            let l = build(&mut g, p)?;
            Ok(g.value(l).item())
        })
        .unwrap();
        for r in report {
            assert!(r.rel_error < 1e-4, "{r:?}");
            assert!(r.analytic_norm > 0.0, "{r:?}");
        }
    }

    #[test]
    fn inference_tape_has_no_gradients() {
        let p = params(1);
        let mut g = Graph::inference();
        let loss = build(&mut g, &p).unwrap();
        let grads = g.backward(loss);
        assert!(grads.values().all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = ParamSet::new();
        p.insert("x".into(), Tensor::row(vec![3.0, -2.0]));
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let mut g = Graph::new();
            let x = g.param("x", &p).unwrap();
            let sq = g.mul(x, x);
            let l = g.sum_all(sq);
            let grads = g.backward(l);
            opt.update(&mut p, &grads);
        }
        assert!(p["x"].norm() < 1e-2, "{:?}", p["x"]);
    }
}
