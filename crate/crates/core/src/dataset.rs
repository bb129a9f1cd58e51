//! Quadrant-format composites, the synthetic weed corpus and seeded splits.
//!
//! A ground-truth composite holds four equal-width columns: the degraded
//! frame, an unused column, the sharp frame and the mask. Result composites
//! add a predicted mask and an overlay, six columns in all.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::imaging::{degrade, load_image, save_image, DegradationKind, DegradationSpec, ImagePlane, Mask};
use crate::router::Route;

/// Values of a loaded mask column must lie within this distance of 0 or 1.
pub const MASK_TOLERANCE: f64 = 0.25;

pub const QUADRANT_COLUMNS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadrantSample {
    pub blurred: ImagePlane,
    pub sharp: ImagePlane,
    pub mask: Mask,
    pub source_path: String,
}

impl QuadrantSample {
    pub fn new(blurred: ImagePlane, sharp: ImagePlane, mask: Mask, source_path: impl Into<String>) -> Result<Self> {
        let (h, w) = (mask.height(), mask.width());
        ensure!(
            blurred.height() == h && blurred.width() == w && blurred.shape() == sharp.shape(),
            Dimension,
            "quadrant planes disagree: blurred {:?}, sharp {:?}, mask {h}x{w}",
            blurred.shape(),
            sharp.shape()
        );
        Ok(Self {
            blurred,
            sharp,
            mask,
            source_path: source_path.into(),
        })
    }

    /// Center-crops all three planes to multiples of `p`.
    pub fn cropped_to_multiple(&self, p: usize) -> Result<Self> {
        let (h, w) = (self.mask.height(), self.mask.width());
        let (ch, cw) = (h / p * p, w / p * p);
        ensure!(ch > 0 && cw > 0, Dimension, "{h}x{w} sample smaller than {p}");
        let (top, left) = ((h - ch) / 2, (w - cw) / 2);
        Ok(Self {
            blurred: self.blurred.crop(top, left, ch, cw)?,
            sharp: self.sharp.crop(top, left, ch, cw)?,
            mask: self.mask.crop(top, left, ch, cw)?,
            source_path: self.source_path.clone(),
        })
    }
}

fn expand(mask: &Mask, channels: usize) -> ImagePlane {
    ImagePlane::from_fn(mask.height(), mask.width(), channels, |y, x, _| mask.get(y, x) as u8 as f64)
}

/// Places equally sized planes side by side.
pub fn hconcat(columns: &[ImagePlane]) -> Result<ImagePlane> {
    ensure!(!columns.is_empty(), Contract, "nothing to concatenate");
    let (h, w, c) = columns[0].shape();
    ensure!(
        columns.iter().all(|p| p.shape() == (h, w, c)),
        Dimension,
        "composite columns must share one shape"
    );
    let n = columns.len();
    Ok(ImagePlane::from_fn(h, w * n, c, |y, x, ch| columns[x / w].get(y, x % w, ch)))
}

fn to_channels(img: &ImagePlane, c: usize) -> ImagePlane {
    if img.channels() == c {
        img.clone()
    } else {
        let gray = img.luminance();
        ImagePlane::from_fn(img.height(), img.width(), c, |y, x, _| gray.get(y, x, 0))
    }
}

/// RGB overlay: predicted pixels tinted green, ground-truth pixels red,
/// overlap yellow.
pub fn overlay(img: &ImagePlane, predicted: &Mask, truth: Option<&Mask>) -> Result<ImagePlane> {
    ensure!(
        predicted.height() == img.height() && predicted.width() == img.width(),
        Dimension,
        "overlay mask does not match the image"
    );
    if let Some(t) = truth {
        ensure!(
            t.height() == img.height() && t.width() == img.width(),
            Dimension,
            "ground-truth mask does not match the image"
        );
    }
    let base = to_channels(img, 3);
    Ok(ImagePlane::from_fn(img.height(), img.width(), 3, |y, x, ch| {
        let v = 0.5 * base.get(y, x, ch);
        let p = predicted.get(y, x);
        let t = truth.is_some_and(|t| t.get(y, x));
        match ch {
            0 if t => v + 0.5,
            1 if p => v + 0.5,
            _ => v,
        }
    }))
}

/// Four-column ground-truth composite; column two is left black.
pub fn quadrant_composite(sample: &QuadrantSample) -> ImagePlane {
    let c = sample.blurred.channels();
    let (h, w) = (sample.mask.height(), sample.mask.width());
    hconcat(&[
        sample.blurred.clone(),
        ImagePlane::zeros(h, w, c),
        sample.sharp.clone(),
        expand(&sample.mask, c),
    ])
    .expect("sample planes share one shape")
}

pub fn write_quadrant_file(path: impl AsRef<Path>, sample: &QuadrantSample) -> Result<()> {
    save_image(path, &quadrant_composite(sample))
}

/// Six-column result composite: degraded input, restored frame, sharp frame,
/// ground truth, prediction and overlay. Written as RGB.
pub fn write_result_composite(
    path: impl AsRef<Path>,
    sample: &QuadrantSample,
    restored: &ImagePlane,
    predicted: &Mask,
) -> Result<()> {
    let cols = [
        to_channels(&sample.blurred, 3),
        to_channels(restored, 3),
        to_channels(&sample.sharp, 3),
        expand(&sample.mask, 3),
        expand(predicted, 3),
        overlay(&sample.blurred, predicted, Some(&sample.mask))?,
    ];
    save_image(path, &hconcat(&cols)?)
}

/// Splits a composite into columns 1, 3 and 4 (blurred, sharp, mask); column
/// 2 is ignored.
pub fn split_quadrants(img: &ImagePlane, path: &Path) -> Result<QuadrantSample> {
    let (h, w, _) = img.shape();
    if w % QUADRANT_COLUMNS != 0 {
        return Err(Error::format(
            path,
            format!("width {w} is not divisible into {QUADRANT_COLUMNS} columns"),
        ));
    }
    let q = w / QUADRANT_COLUMNS;
    let blurred = img.crop(0, 0, h, q)?;
    let sharp = img.crop(0, 2 * q, h, q)?;
    let mask_plane = img.crop(0, 3 * q, h, q)?.luminance();
    if let Some((i, v)) = mask_plane
        .data()
        .iter()
        .enumerate()
        .find(|(_, &v)| v > MASK_TOLERANCE && v < 1.0 - MASK_TOLERANCE)
    {
        return Err(Error::format(
            path,
            format!("mask column is not binary: {v:.3} at ({}, {})", i / q, i % q),
        ));
    }
    let mask = Mask::from_plane(&mask_plane, 0.5);
    QuadrantSample::new(blurred, sharp, mask, path.display().to_string())
}

pub fn load_quadrant_file(path: impl AsRef<Path>) -> Result<QuadrantSample> {
    let path = path.as_ref();
    split_quadrants(&load_image(path)?, path)
}

/// Ranges for the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub size: usize,
    pub channels: usize,
    /// Inclusive range for the mask foreground fraction.
    pub fg_fraction: (f64, f64),
    pub noise_sigma: (f64, f64),
    /// Motion blur lengths, drawn uniformly.
    pub blur_lengths: Vec<usize>,
    /// Fraction of background pixels carrying bright grit.
    pub grit_density: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            size: 64,
            channels: 3,
            fg_fraction: (0.05, 0.4),
            noise_sigma: (0.06, 0.12),
            blur_lengths: vec![7, 9, 11],
            grit_density: 0.015,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.size >= 8, Config, "synthetic size must be >= 8");
        ensure!(matches!(self.channels, 1 | 3), Config, "synthetic channels must be 1 or 3");
        let (lo, hi) = self.fg_fraction;
        ensure!(
            0.0 < lo && lo < hi && hi < 1.0,
            Config,
            "foreground fraction range must satisfy 0 < lo < hi < 1"
        );
        let (s0, s1) = self.noise_sigma;
        ensure!(0.0 < s0 && s0 <= s1, Config, "noise sigma range must satisfy 0 < lo <= hi");
        ensure!(!self.blur_lengths.is_empty(), Config, "no blur lengths given");
        for &l in &self.blur_lengths {
            ensure!(
                l >= 3 && l % 2 == 1 && l <= self.size,
                Config,
                "blur length {l} must be odd, >= 3 and fit the image"
            );
        }
        ensure!(
            (0.0..0.5).contains(&self.grit_density),
            Config,
            "grit density must lie in [0, 0.5)"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub sample: QuadrantSample,
    pub degradation: DegradationSpec,
}

impl SynthSample {
    pub fn route(&self) -> Route {
        Route::from(self.degradation.kind)
    }
}

const SOIL: [f64; 3] = [0.42, 0.33, 0.24];
const LEAF: [f64; 3] = [0.22, 0.62, 0.18];

fn paint_shape(mask: &mut Mask, rng: &mut ChaCha8Rng, n: usize) {
    let s = n as f64 / 64.0;
    let (cx, cy) = (rng.random_range(0.1..0.9) * n as f64, rng.random_range(0.1..0.9) * n as f64);
    let th: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (sin, cos) = th.sin_cos();
    let ribbon = rng.random_bool(0.35);
    let (a, b) = (rng.random_range(4.0..11.0) * s, rng.random_range(2.0..5.0) * s);
    let (amp, freq, phase) = (
        rng.random_range(1.0..4.0) * s,
        rng.random_range(0.1..0.3) / s,
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let (len, thick) = (rng.random_range(20.0..44.0) * s, rng.random_range(1.5..3.0) * s);
    for y in 0..n {
        for x in 0..n {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            let inside = if ribbon {
                u.abs() <= len / 2.0 && (v - amp * (freq * u + phase).sin()).abs() <= thick
            } else {
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            };
            if inside {
                mask.set(y, x, true);
            }
        }
    }
}

fn scene_mask(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Mask {
    let n = spec.size;
    let (lo, hi) = spec.fg_fraction;
    loop {
        let mut mask = Mask::empty(n, n);
        for _ in 0..12 {
            paint_shape(&mut mask, rng, n);
            let f = mask.foreground_fraction();
            if f > hi {
                break;
            }
            if f >= lo && rng.random_bool(0.5) {
                return mask;
            }
        }
        if (lo..=hi).contains(&mask.foreground_fraction()) {
            return mask;
        }
    }
}

/// One sharp scene and its exact mask: leaf-colored shapes over textured
/// soil with sparse bright grit.
pub fn synth_scene(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (ImagePlane, Mask) {
    let n = spec.size;
    let mask = scene_mask(spec, rng);
    let (fx, fy) = (rng.random_range(1.0..3.0), rng.random_range(1.0..3.0));
    let (px, py) = (rng.random_range(0.0..6.0), rng.random_range(0.0..6.0));
    let tone: f64 = rng.random_range(-0.05..0.05);
    let leaf_tone: f64 = rng.random_range(-0.06..0.06);
    let mut rgb = vec![0.0; n * n * 3];
    let tau = std::f64::consts::TAU;
    for y in 0..n {
        for x in 0..n {
            let t = 0.05 * (x as f64 / n as f64 * tau * fx + px).sin() * (y as f64 / n as f64 * tau * fy + py).cos();
            let px_ = &mut rgb[(y * n + x) * 3..(y * n + x + 1) * 3];
            if mask.get(y, x) {
                for c in 0..3 {
                    px_[c] = LEAF[c] + leaf_tone + 0.5 * t;
                }
            } else if rng.random_bool(spec.grit_density) {
                let g = rng.random_range(0.85..1.0);
                px_.fill(g);
            } else {
                for c in 0..3 {
                    px_[c] = SOIL[c] + tone + t;
                }
            }
        }
    }
    let rgb = ImagePlane::new(n, n, 3, rgb).expect("sized buffer").clamp01();
    let img = if spec.channels == 3 { rgb } else { rgb.luminance() };
    (img, mask)
}

fn draw_degradation(kind: DegradationKind, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> DegradationSpec {
    let seed = rng.random();
    let sigma = rng.random_range(spec.noise_sigma.0..=spec.noise_sigma.1);
    let length = *spec.blur_lengths.choose(rng).expect("validated non-empty");
    let angle = rng.random_range(0.0..180.0);
    match kind {
        DegradationKind::None => DegradationSpec::none(seed),
        DegradationKind::GaussianNoise => DegradationSpec::noise(sigma, seed),
        DegradationKind::MotionBlur => DegradationSpec::blur(length, angle, seed),
        DegradationKind::Both => DegradationSpec::both(sigma, length, angle, seed),
    }
}

/// `n` samples; sample `i` carries degradation `DegradationKind::ALL[i % 4]`
/// and is generated from its own stream of `seed`, so a corpus is a prefix of
/// any larger corpus with the same seed.
pub fn synth_corpus(n: usize, spec: &SynthSpec, seed: u64) -> Result<Vec<SynthSample>> {
    ensure!(n >= 4, Contract, "synthetic corpus needs n >= 4, got {n}");
    spec.validate()?;
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (sharp, mask) = synth_scene(spec, &mut rng);
            let degradation = draw_degradation(DegradationKind::ALL[i % 4], spec, &mut rng);
            let blurred = degrade(&sharp, &degradation)?;
            Ok(SynthSample {
                sample: QuadrantSample::new(blurred, sharp, mask, format!("synth:{seed}:{i}"))?,
                degradation,
            })
        })
        .collect()
}

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const LABELS_FILE: &str = "labels.tsv";
pub const VALIDATION_FILE: &str = "validation.txt";

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes every sample as `sample_NNNN.png` under `dir`, plus the manifest
/// (one file name per line) and `labels.tsv` with each degradation.
/// Returns the written paths.
pub fn write_corpus(dir: impl AsRef<Path>, samples: &[SynthSample]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    let mut labels = String::from("file\tkind\tnoise_sigma\tblur_length\tblur_angle\tseed\n");
    let mut paths = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = format!("sample_{i:04}.png");
        let path = dir.join(&name);
        write_quadrant_file(&path, &s.sample)?;
        let d = &s.degradation;
        writeln!(manifest, "{name}").unwrap();
        writeln!(
            labels,
            "{name}\t{}\t{}\t{}\t{}\t{}",
            d.kind, d.noise_sigma, d.blur_length, d.blur_angle, d.seed
        )
        .unwrap();
        paths.push(path);
    }
    write_text(&dir.join(MANIFEST_FILE), &manifest)?;
    write_text(&dir.join(LABELS_FILE), &labels)?;
    Ok(paths)
}

/// Paths listed in a manifest, resolved against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

/// Degradation labels keyed by resolved path, in file order.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<(PathBuf, DegradationSpec)>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let bad = |line: usize, why: &str| Error::format(path, format!("line {line}: {why}"));
    let mut out = Vec::new();
    for (n, line) in read_text(path)?.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad(n + 1, "expected 6 tab-separated fields"));
        }
        let spec = DegradationSpec {
            kind: f[1].parse().map_err(|_| bad(n + 1, "unknown kind"))?,
            noise_sigma: f[2].parse().map_err(|_| bad(n + 1, "bad noise_sigma"))?,
            blur_length: f[3].parse().map_err(|_| bad(n + 1, "bad blur_length"))?,
            blur_angle: f[4].parse().map_err(|_| bad(n + 1, "bad blur_angle"))?,
            seed: f[5].parse().map_err(|_| bad(n + 1, "bad seed"))?,
        };
        spec.validate().map_err(|e| bad(n + 1, &e.to_string()))?;
        out.push((base.join(f[0]), spec));
    }
    Ok(out)
}

/// Records the validation paths of a split for audit.
pub fn write_split_sidecar(path: impl AsRef<Path>, validation: &[PathBuf]) -> Result<()> {
    let text: String = validation.iter().map(|p| format!("{}\n", p.display())).collect();
    write_text(path.as_ref(), &text)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Seeded shuffle of `0..n`, then a prefix of `round(n · train_fraction)`
/// (kept within `1..n`) for training.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    ensure!(n >= 2, Contract, "need at least 2 samples to split, got {n}");
    ensure!(
        spec.train_fraction > 0.0 && spec.train_fraction < 1.0,
        Config,
        "train fraction must lie in (0, 1)"
    );
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let k = ((n as f64 * spec.train_fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(k);
    Ok((idx, val))
}

pub fn split<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    let (tr, va) = split_indices(items.len(), spec)?;
    Ok((
        tr.iter().map(|&i| items[i].clone()).collect(),
        va.iter().map(|&i| items[i].clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> SynthSpec {
        SynthSpec {
            size: 32,
            blur_lengths: vec![5, 7, 9],
            ..SynthSpec::default()
        }
    }

    #[test]
    fn quadrant_roundtrip_on_grid_values() {
        let dir = tempfile::tempdir().unwrap();
        let blurred = ImagePlane::from_fn(6, 5, 3, |y, x, c| ((y * 31 + x * 7 + c * 50) % 256) as f64 / 255.0);
        let sharp = ImagePlane::from_fn(6, 5, 3, |y, x, c| ((y * 13 + x * 3 + c) % 256) as f64 / 255.0);
        let mask = Mask::from_fn(6, 5, |y, x| (y + x) % 3 == 0);
        let s = QuadrantSample::new(blurred, sharp, mask, "fixture").unwrap();
        let path = dir.path().join("q.png");
        write_quadrant_file(&path, &s).unwrap();
        let back = load_quadrant_file(&path).unwrap();
        assert_eq!(back.blurred, s.blurred);
        assert_eq!(back.sharp, s.sharp);
        assert_eq!(back.mask, s.mask);
        assert!(back.source_path.ends_with("q.png"));
    }

    #[test]
    fn column_two_is_ignored() {
        let s = QuadrantSample::new(
            ImagePlane::filled(4, 4, 1, 0.2),
            ImagePlane::filled(4, 4, 1, 0.8),
            Mask::from_fn(4, 4, |y, _| y < 2),
            "",
        )
        .unwrap();
        let mut img = quadrant_composite(&s);
        for y in 0..4 {
            for x in 4..8 {
                img.set(y, x, 0, 0.77);
            }
        }
        let back = split_quadrants(&img, Path::new("x.png")).unwrap();
        assert_eq!(back.mask, s.mask);
        assert_eq!(back.sharp, s.sharp);
    }

    #[test]
    fn rejects_indivisible_width_and_gray_masks() {
        let img = ImagePlane::zeros(4, 10, 1);
        let err = split_quadrants(&img, Path::new("bad.png")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("bad.png"));

        let mut img = ImagePlane::zeros(4, 16, 1);
        img.set(1, 13, 0, 0.5);
        assert!(matches!(split_quadrants(&img, Path::new("m.png")), Err(Error::Format { .. })));
        img.set(1, 13, 0, 1.0);
        let s = split_quadrants(&img, Path::new("m.png")).unwrap();
        assert_eq!(s.mask.count(), 1);
        assert!(s.mask.get(1, 1));
    }

    #[test]
    fn corpus_cycles_categories() {
        let corpus = synth_corpus(100, &small(), 3).unwrap();
        for (i, s) in corpus.iter().enumerate() {
            assert_eq!(s.degradation.kind, DegradationKind::ALL[i % 4]);
        }
        for k in DegradationKind::ALL {
            assert_eq!(corpus.iter().filter(|s| s.degradation.kind == k).count(), 25);
        }
        assert!(synth_corpus(3, &small(), 0).is_err());
    }

    #[test]
    fn foreground_fraction_in_range() {
        let spec = small();
        for s in synth_corpus(200, &spec, 11).unwrap() {
            let f = s.sample.mask.foreground_fraction();
            assert!((spec.fg_fraction.0..=spec.fg_fraction.1).contains(&f), "{f}");
        }
    }

    #[test]
    fn masks_are_exact_paint() {
        // every foreground pixel carries leaf color, every background pixel does not
        for s in synth_corpus(8, &small(), 5).unwrap() {
            let img = &s.sample.sharp;
            let m = &s.sample.mask;
            for y in 0..m.height() {
                for x in 0..m.width() {
                    let (r, g) = (img.get(y, x, 0), img.get(y, x, 1));
                    assert_eq!(m.get(y, x), g - r > 0.2, "pixel ({y},{x})");
                }
            }
        }
    }

    #[test]
    fn corpus_is_deterministic_and_prefix_stable() {
        let a = synth_corpus(12, &small(), 9).unwrap();
        let b = synth_corpus(12, &small(), 9).unwrap();
        assert_eq!(a, b);
        let c = synth_corpus(8, &small(), 9).unwrap();
        assert_eq!(&a[..8], &c[..]);
        assert_ne!(synth_corpus(4, &small(), 10).unwrap()[0], a[0]);
    }

    #[test]
    fn corpus_files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(8, &small(), 1).unwrap();
        let paths = write_corpus(dir.path(), &corpus).unwrap();
        assert_eq!(read_manifest(dir.path().join(MANIFEST_FILE)).unwrap(), paths);
        let labels = read_labels(dir.path().join(LABELS_FILE)).unwrap();
        for ((p, spec), s) in labels.iter().zip(&corpus) {
            assert_eq!(spec, &s.degradation);
            let q = load_quadrant_file(p).unwrap();
            assert_eq!(q.mask, s.sample.mask);
        }
    }

    #[test]
    fn result_composite_has_six_columns() {
        let dir = tempfile::tempdir().unwrap();
        let s = &synth_corpus(4, &small(), 2).unwrap()[0].sample;
        let path = dir.path().join("r.png");
        write_result_composite(&path, s, &s.sharp, &s.mask).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.shape(), (32, 32 * 6, 3));
    }

    #[test]
    fn split_examples() {
        let items: Vec<u32> = (0..10).collect();
        let (tr, va) = split(&items, &SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        assert_eq!(split(&items, &SplitSpec::default()).unwrap(), (tr, va));
        assert!(split(&items[..1], &SplitSpec::default()).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..300, frac in 0.05f64..0.95, seed: u64) {
            let spec = SplitSpec { train_fraction: frac, seed };
            let (tr, va) = split_indices(n, &spec).unwrap();
            prop_assert!(!tr.is_empty() && !va.is_empty());
            let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(split_indices(n, &spec).unwrap(), (tr, va));
        }
    }
}
