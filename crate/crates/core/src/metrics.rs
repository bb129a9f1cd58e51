//! Dice, PSNR, confusion counts and timing helpers.

use std::time::{Duration, Instant};

use crate::error::{ensure, Result};
use crate::imaging::{ImagePlane, Mask};

/// PSNR reported for identical images (the true value is +∞).
pub const PSNR_CAP_DB: f64 = 99.0;

/// Pixel tallies with foreground as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2·TP / (2·TP + FP + FN)`, with 1.0 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

pub fn confusion(pred: &Mask, gt: &Mask) -> Result<ConfusionCounts> {
    ensure!(
        pred.height() == gt.height() && pred.width() == gt.width(),
        Dimension,
        "mask shapes differ: {}x{} vs {}x{}",
        pred.height(),
        pred.width(),
        gt.height(),
        gt.width()
    );
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    Ok(confusion(pred, gt)?.dice())
}

/// Macro average of per-image Dice scores.
pub fn mean_dice(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

pub fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    ensure!(
        a.same_shape(b),
        Dimension,
        "image shapes differ: {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio for peak 1.0, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// Runs `f` and returns its result with the wall-clock time it took.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}
