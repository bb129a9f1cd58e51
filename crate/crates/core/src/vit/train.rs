use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::fisher::{fit_gmm, GmmFit, GmmFitOptions};
use crate::imaging::{extract_patches, ImagePlane, Mask};
use crate::metrics::{dice, mean_dice};
use crate::nn::{check_gradients, Adam, Gradients, Graph};

use super::SegModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 75,
            learning_rate: 2e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean Dice on the validation split at threshold 0.5, if one was given.
    pub val_dice: Option<f64>,
    pub seconds: f64,
}

/// Fits the patch mixture for the Fisher variants on every `p×p` patch of
/// `images`.
pub fn fit_patch_gmm(images: &[ImagePlane], p: usize, opts: &GmmFitOptions) -> Result<GmmFit> {
    ensure!(!images.is_empty(), Contract, "no images to fit the patch mixture on");
    let mut data = Vec::new();
    for img in images {
        data.extend(extract_patches(img, p)?);
    }
    let dim = p * p * images[0].channels();
    fit_gmm(&data, dim, opts)
}

/// Loss and gradients of one sample.
pub(crate) fn sample_gradients(model: &SegModel, img: &ImagePlane, mask: &Mask) -> Result<(f64, Gradients)> {
    let mut g = Graph::new();
    let out = model.forward_graph(&mut g, img)?;
    let target = mask.data().iter().map(|&b| b as u8 as f64).collect();
    let loss = g.bce_with_logits(out.logits, target);
    Ok((g.value(loss).item(), g.backward(loss)))
}

pub fn validation_dice(model: &SegModel, val: &[(ImagePlane, Mask)]) -> Result<f64> {
    let mut scores = Vec::with_capacity(val.len());
    for (img, gt) in val {
        scores.push(dice(&model.predict_mask(img, 0.5)?, gt)?);
    }
    Ok(mean_dice(&scores))
}

/// Mini-batch Adam on mean per-pixel binary cross-entropy.
///
/// The shuffle order comes from `opts.seed`, so equal inputs give
/// bit-identical parameters. `on_epoch` sees each epoch's log as it completes.
pub fn train(
    model: &mut SegModel,
    data: &[(ImagePlane, Mask)],
    val: &[(ImagePlane, Mask)],
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    ensure!(!data.is_empty(), Contract, "training split is empty");
    ensure!(opts.batch_size >= 1, Config, "batch size must be >= 1");
    ensure!(
        opts.learning_rate.is_finite() && opts.learning_rate >= 0.0,
        Config,
        "learning rate must be finite and non-negative"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new(opts.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(opts.batch_size).enumerate() {
            let mut acc: Option<Gradients> = None;
            for &i in batch {
                let (img, mask) = &data[i];
                let (loss, grads) = sample_gradients(model, img, mask)?;
                if !loss.is_finite() || grads.values().any(|t| !t.all_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite loss or gradient in epoch {epoch}, batch {b} (sample {i})"
                    )));
                }
                total += loss;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (k, t) in grads {
                            for (x, y) in a[&k].data.iter_mut().zip(t.data) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let mut acc = acc.expect("non-empty batch");
            let n = batch.len() as f64;
            for t in acc.values_mut() {
                t.data.iter_mut().for_each(|v| *v /= n);
            }
            adam.update(&mut model.params, &acc);
        }
        let val_dice = if val.is_empty() { None } else { Some(validation_dice(model, val)?) };
        let log = EpochLog {
            epoch,
            train_loss: total / data.len() as f64,
            val_dice,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Finite-difference agreement for one parameter group.
#[derive(Debug, Clone)]
pub struct GroupCheck {
    pub group: String,
    pub tensors: usize,
    pub probed: usize,
    pub rel_error: f64,
}

/// Compares the analytic BCE gradient on `(img, mask)` with central
/// differences of step `h`, probing up to `max_entries` entries per tensor,
/// and reports the norm-relative error per parameter group.
pub fn gradient_check(
    model: &SegModel,
    img: &ImagePlane,
    mask: &Mask,
    h: f64,
    max_entries: usize,
) -> Result<Vec<GroupCheck>> {
    let (_, grads) = sample_gradients(model, img, mask)?;
    let target: Vec<f64> = mask.data().iter().map(|&b| b as u8 as f64).collect();
    let mut out = Vec::new();
    for (group, names) in model.param_groups() {
        let checks = check_gradients(&model.params, &grads, &names, h, max_entries, |params| {
            let probe = SegModel {
                config: model.config,
                params: params.clone(),
                gmm: model.gmm.clone(),
            };
            let mut g = Graph::inference();
            let fwd = probe.forward_graph(&mut g, img)?;
            let loss = g.bce_with_logits(fwd.logits, target.clone());
            Ok(g.value(loss).item())
        })?;
        let (mut diff2, mut an2, mut nu2, mut probed) = (0.0, 0.0, 0.0, 0);
        for c in &checks {
            let scale = c.analytic_norm.max(c.numeric_norm);
            diff2 += (c.rel_error * scale).powi(2);
            an2 += c.analytic_norm.powi(2);
            nu2 += c.numeric_norm.powi(2);
            probed += c.probed;
        }
        let scale = an2.sqrt().max(nu2.sqrt());
        out.push(GroupCheck {
            group,
            tensors: names.len(),
            probed,
            rel_error: if scale > 0.0 { diff2.sqrt() / scale } else { 0.0 },
        });
    }
    Ok(out)
}
