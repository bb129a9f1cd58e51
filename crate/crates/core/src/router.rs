//! Per-frame blur/noise measurement and the four-way routing decision.
//!
//! Two statistics are computed on the luminance plane of every frame:
//!
//! * `lap_variance`: population variance of the 4-neighbour Laplacian
//!   response (reflect boundary). Low values mean few sharp transitions.
//! * `hp_mad`: mean absolute deviation, about the median, of the response to
//!   the 3×3 high-pass kernel (identity minus box mean). High values mean
//!   pixel-level noise.
//!
//! White noise of standard deviation σ adds about 20σ² to the Laplacian
//! variance, which would make noisy blurred frames look sharp. The blur
//! decision therefore uses a noise-compensated sharpness,
//! `max(0, lap_variance − NOISE_LAPLACIAN_GAIN · hp_mad²)`, where the gain is
//! the ratio of the two statistics on pure Gaussian noise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imaging::{convolve, laplacian, Boundary, DegradationKind, ImagePlane, Kernel2D};

/// Laplacian variance per squared high-pass MAD on white Gaussian noise:
/// `20σ² / ((8/9)·(2/π)·σ²)`.
pub const NOISE_LAPLACIAN_GAIN: f64 = 20.0 / ((8.0 / 9.0) * (2.0 / PI));

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityThresholds {
    /// Sharpness below this marks a frame as blurred.
    pub lap_var_min: f64,
    /// High-pass MAD above this marks a frame as noisy.
    pub hp_mad_max: f64,
}

impl QualityThresholds {
    pub fn new(lap_var_min: f64, hp_mad_max: f64) -> Result<Self> {
        let t = Self {
            lap_var_min,
            hp_mad_max,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lap_var_min", self.lap_var_min), ("hp_mad_max", self.hp_mad_max)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Contract(format!(
                    "threshold {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Which model variant a frame is sent to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Route {
    Clean,
    Noisy,
    Blurred,
    NoisyBlurred,
}

impl Route {
    pub const ALL: [Route; 4] = [Route::Clean, Route::Noisy, Route::Blurred, Route::NoisyBlurred];

    pub fn from_flags(is_blurred: bool, is_noisy: bool) -> Route {
        match (is_blurred, is_noisy) {
            (false, false) => Route::Clean,
            (false, true) => Route::Noisy,
            (true, false) => Route::Blurred,
            (true, true) => Route::NoisyBlurred,
        }
    }

    pub fn is_blurred(self) -> bool {
        matches!(self, Route::Blurred | Route::NoisyBlurred)
    }

    pub fn is_noisy(self) -> bool {
        matches!(self, Route::Noisy | Route::NoisyBlurred)
    }

    pub fn name(self) -> &'static str {
        match self {
            Route::Clean => "clean",
            Route::Noisy => "noisy",
            Route::Blurred => "blurred",
            Route::NoisyBlurred => "noisy-blurred",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl From<DegradationKind> for Route {
    fn from(k: DegradationKind) -> Route {
        Route::from_flags(k.has_blur(), k.has_noise())
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Route {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Route::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown route '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub lap_variance: f64,
    pub hp_mad: f64,
    /// Noise-compensated Laplacian variance the blur flag is decided on.
    pub sharpness: f64,
    pub is_blurred: bool,
    pub is_noisy: bool,
    pub route: Route,
}

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn laplacian_variance(img: &ImagePlane) -> f64 {
    let gray = img.luminance();
    // single channel by construction
    let lap = laplacian(&gray).expect("luminance plane is single-channel");
    population_variance(lap.data())
}

pub fn highpass_mad(img: &ImagePlane) -> f64 {
    let gray = img.luminance();
    let hp = convolve(&gray, Kernel2D::highpass(), Boundary::Reflect)
        .expect("3x3 kernel fits every frame");
    let m = median(hp.data());
    hp.data().iter().map(|v| (v - m).abs()).sum::<f64>() / hp.data().len() as f64
}

pub fn noise_compensated_sharpness(lap_variance: f64, hp_mad: f64) -> f64 {
    (lap_variance - NOISE_LAPLACIAN_GAIN * hp_mad * hp_mad).max(0.0)
}

pub fn report_from_stats(lap_variance: f64, hp_mad: f64, th: &QualityThresholds) -> QualityReport {
    let sharpness = noise_compensated_sharpness(lap_variance, hp_mad);
    let is_blurred = sharpness < th.lap_var_min;
    let is_noisy = hp_mad > th.hp_mad_max;
    QualityReport {
        lap_variance,
        hp_mad,
        sharpness,
        is_blurred,
        is_noisy,
        route: Route::from_flags(is_blurred, is_noisy),
    }
}

/// Measures both statistics and derives the route.
pub fn classify(img: &ImagePlane, th: &QualityThresholds) -> QualityReport {
    report_from_stats(laplacian_variance(img), highpass_mad(img), th)
}

/// Result of a one-dimensional threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepResult {
    pub threshold: f64,
    pub balanced_accuracy: f64,
}

/// Picks the threshold with the best balanced accuracy among the midpoints
/// of consecutive distinct observed values. `positive_above` says which side
/// of the threshold is the positive class (strict comparison). Ties keep the
/// lowest threshold. A statistic with a single distinct value returns that
/// value.
pub fn sweep_threshold(samples: &[(f64, bool)], positive_above: bool) -> Result<SweepResult> {
    let pos = samples.iter().filter(|s| s.1).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Calibration(format!(
            "sweep needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    let mut values: Vec<f64> = samples.iter().map(|s| s.0).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let candidates: Vec<f64> = if values.len() == 1 {
        values.clone()
    } else {
        values.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    };
    let score = |t: f64| {
        let mut tp = 0usize;
        let mut tn = 0usize;
        for &(v, label) in samples {
            let predicted = if positive_above { v > t } else { v < t };
            match (predicted, label) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                _ => {}
            }
        }
        0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64)
    };
    let mut best = SweepResult {
        threshold: candidates[0],
        balanced_accuracy: score(candidates[0]),
    };
    for &t in &candidates[1..] {
        let acc = score(t);
        if acc > best.balanced_accuracy {
            best = SweepResult {
                threshold: t,
                balanced_accuracy: acc,
            };
        }
    }
    Ok(best)
}

/// Outcome of [`calibrate_from_stats`], with the training accuracies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub thresholds: QualityThresholds,
    pub blur_accuracy: f64,
    pub noise_accuracy: f64,
}

/// Chooses both thresholds from labelled frames.
pub fn calibrate_thresholds(labeled: &[(ImagePlane, Route)]) -> Result<QualityThresholds> {
    let stats: Vec<(f64, f64, Route)> = labeled
        .iter()
        .map(|(img, r)| (laplacian_variance(img), highpass_mad(img), *r))
        .collect();
    Ok(calibrate_from_stats(&stats)?.thresholds)
}

/// Calibration on precomputed `(lap_variance, hp_mad, true route)` triples.
pub fn calibrate_from_stats(stats: &[(f64, f64, Route)]) -> Result<Calibration> {
    let has = |f: &dyn Fn(Route) -> bool| stats.iter().any(|s| f(s.2));
    let missing: Vec<&str> = [
        ("clean", has(&|r| r == Route::Clean)),
        ("blurred", has(&|r| r.is_blurred())),
        ("noisy", has(&|r| r.is_noisy())),
    ]
    .into_iter()
    .filter(|(_, present)| !present)
    .map(|(n, _)| n)
    .collect();
    if !missing.is_empty() {
        return Err(Error::Calibration(format!(
            "calibration corpus has no {} examples",
            missing.join(" or ")
        )));
    }
    let blur: Vec<(f64, bool)> = stats
        .iter()
        .map(|&(lv, mad, r)| (noise_compensated_sharpness(lv, mad), r.is_blurred()))
        .collect();
    let noise: Vec<(f64, bool)> = stats.iter().map(|&(_, mad, r)| (mad, r.is_noisy())).collect();
    let b = sweep_threshold(&blur, false)?;
    let n = sweep_threshold(&noise, true)?;
    Ok(Calibration {
        thresholds: QualityThresholds::new(b.threshold.max(0.0), n.threshold.max(0.0))?,
        blur_accuracy: b.balanced_accuracy,
        noise_accuracy: n.balanced_accuracy,
    })
}

/// Per-route recall and balanced routing accuracy (mean recall over routes
/// present in the truth).
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingScore {
    pub recall: [Option<f64>; 4],
    pub balanced_accuracy: f64,
}

pub fn routing_score(pairs: &[(Route, Route)]) -> RoutingScore {
    let mut hit = [0usize; 4];
    let mut total = [0usize; 4];
    for &(truth, predicted) in pairs {
        total[truth.index()] += 1;
        if truth == predicted {
            hit[truth.index()] += 1;
        }
    }
    let mut recall = [None; 4];
    let mut sum = 0.0;
    let mut n = 0;
    for i in 0..4 {
        if total[i] > 0 {
            let r = hit[i] as f64 / total[i] as f64;
            recall[i] = Some(r);
            sum += r;
            n += 1;
        }
    }
    RoutingScore {
        recall,
        balanced_accuracy: if n > 0 { sum / n as f64 } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{degrade, DegradationSpec};

    fn checkerboard(n: usize) -> ImagePlane {
        ImagePlane::from_fn(n, n, 1, |y, x, _| ((y + x) % 2) as f64)
    }

    fn edge_scene() -> ImagePlane {
        ImagePlane::from_fn(32, 32, 1, |y, x, _| {
            let d = ((x as f64 - 16.0).powi(2) + (y as f64 - 14.0).powi(2)).sqrt();
            if d < 7.0 {
                0.8
            } else if (x * 7 + y * 3) % 13 == 0 {
                0.95
            } else {
                0.25
            }
        })
    }

    #[test]
    fn noise_gain_constant() {
        assert!((NOISE_LAPLACIAN_GAIN - 35.342917).abs() < 1e-5);
    }

    #[test]
    fn constant_image_statistics_vanish() {
        let img = ImagePlane::filled(12, 12, 3, 0.6);
        assert!(laplacian_variance(&img).abs() < 1e-20);
        assert!(highpass_mad(&img).abs() < 1e-12);
    }

    #[test]
    fn blur_lowers_laplacian_variance() {
        let cb = checkerboard(16);
        let blurred = degrade(&cb, &DegradationSpec::blur(5, 0.0, 0)).unwrap();
        assert!(laplacian_variance(&cb) > laplacian_variance(&blurred));
        let s = edge_scene();
        let b = degrade(&s, &DegradationSpec::blur(7, 30.0, 0)).unwrap();
        assert!(laplacian_variance(&s) > laplacian_variance(&b));
    }

    #[test]
    fn highpass_mad_grows_with_noise() {
        let s = edge_scene();
        let clean = highpass_mad(&s);
        let mut prev = clean;
        for sigma in [0.02, 0.05, 0.1] {
            let m = highpass_mad(&degrade(&s, &DegradationSpec::noise(sigma, 9)).unwrap());
            assert!(m > prev, "sigma {sigma}: {m} <= {prev}");
            prev = m;
        }
    }

    #[test]
    fn statistics_ignore_constant_offset() {
        let s = edge_scene();
        let shifted = s.map(|v| v + 0.37);
        assert!((laplacian_variance(&s) - laplacian_variance(&shifted)).abs() < 1e-9);
        assert!((highpass_mad(&s) - highpass_mad(&shifted)).abs() < 1e-9);
    }

    #[test]
    fn route_is_a_function_of_flags() {
        let th = QualityThresholds::new(1.0, 1.0).unwrap();
        let cases = [
            ((2.0, 0.0), Route::Clean),
            ((2.0, 0.0), Route::Clean),
            ((0.5, 0.0), Route::Blurred),
        ];
        for ((lv, mad), want) in cases {
            assert_eq!(report_from_stats(lv, mad, &th).route, want);
        }
        for b in [false, true] {
            for n in [false, true] {
                let r = Route::from_flags(b, n);
                assert_eq!((r.is_blurred(), r.is_noisy()), (b, n));
            }
        }
    }

    #[test]
    fn separable_sweep() {
        let samples = [(1.0, false), (2.0, false), (0.1, true), (0.2, true)];
        let s = sweep_threshold(&samples, false).unwrap();
        assert!(s.threshold > 0.2 && s.threshold < 1.0);
        assert_eq!(s.balanced_accuracy, 1.0);
    }

    #[test]
    fn degenerate_sweep_returns_the_value() {
        let samples = [(0.3, false), (0.3, true), (0.3, false)];
        let s = sweep_threshold(&samples, true).unwrap();
        assert_eq!(s.threshold, 0.3);
        assert_eq!(s.balanced_accuracy, 0.5);
    }

    #[test]
    fn missing_class_is_named() {
        let stats = [(1.0, 0.01, Route::Clean), (0.0, 0.01, Route::Blurred)];
        let err = calibrate_from_stats(&stats).unwrap_err();
        assert!(err.to_string().contains("noisy"), "{err}");
        let stats = [(1.0, 0.01, Route::Noisy), (0.0, 0.01, Route::Blurred)];
        assert!(calibrate_from_stats(&stats).unwrap_err().to_string().contains("clean"));
    }

    #[test]
    fn routing_score_counts() {
        let pairs = [
            (Route::Clean, Route::Clean),
            (Route::Clean, Route::Noisy),
            (Route::Noisy, Route::Noisy),
        ];
        let s = routing_score(&pairs);
        assert_eq!(s.recall[0], Some(0.5));
        assert_eq!(s.recall[1], Some(1.0));
        assert_eq!(s.recall[2], None);
        assert!((s.balanced_accuracy - 0.75).abs() < 1e-15);
    }

    #[test]
    fn thresholds_reject_negative() {
        assert!(QualityThresholds::new(-1.0, 0.0).is_err());
        assert!(QualityThresholds::new(0.0, f64::NAN).is_err());
    }
}
