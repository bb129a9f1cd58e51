//! The routed system: quality analysis, dispatch to one of four specialist
//! segmenters, corpus runs and the policy ablation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::config::Config;
use crate::dataset::{QuadrantSample, SynthSample};
use crate::error::{ensure, Error, Result};
use crate::fisher::{GmmFit, GmmFitOptions, GmmModel};
use crate::imaging::{ImagePlane, Mask};
use crate::metrics::{dice, mean_dice};
use crate::router::{classify, QualityReport, QualityThresholds, Route};
use crate::vit::{
    fit_patch_gmm, load_checkpoint, save_checkpoint, train, EpochLog, SegModel, TrainOptions, Variant, VitConfig,
};

pub const ROUTER_FILE: &str = "router.conf";

/// The four specialists plus the router thresholds. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBank {
    models: [SegModel; 4],
    pub thresholds: QualityThresholds,
}

fn checkpoint_name(v: Variant) -> String {
    format!("{}.ckpt", v.bank_name())
}

impl ModelBank {
    /// `models` in [`Variant::ALL`] order.
    pub fn new(models: [SegModel; 4], thresholds: QualityThresholds) -> Result<Self> {
        thresholds.validate()?;
        for (m, v) in models.iter().zip(Variant::ALL) {
            ensure!(
                m.variant() == v,
                Contract,
                "bank slot {} holds a {} model",
                v.bank_name(),
                m.variant()
            );
        }
        let c0 = &models[0].config;
        for m in &models[1..] {
            ensure!(
                m.config.image_size == c0.image_size && m.config.channels == c0.channels,
                Contract,
                "bank models disagree on input shape: {}x{0}x{} vs {}x{2}x{}",
                c0.image_size,
                c0.channels,
                m.config.image_size,
                m.config.channels
            );
        }
        Ok(Self { models, thresholds })
    }

    pub fn model(&self, v: Variant) -> &SegModel {
        &self.models[Variant::ALL.iter().position(|&x| x == v).expect("variant in ALL")]
    }

    pub fn models(&self) -> &[SegModel; 4] {
        &self.models
    }

    pub fn image_size(&self) -> usize {
        self.models[0].config.image_size
    }

    pub fn channels(&self) -> usize {
        self.models[0].config.channels
    }

    /// Writes one checkpoint per variant and `router.conf` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for m in &self.models {
            save_checkpoint(dir.join(checkpoint_name(m.variant())), m)?;
        }
        let mut cfg = Config::default();
        cfg.set_thresholds(&self.thresholds);
        let path = dir.join(ROUTER_FILE);
        std::fs::write(&path, cfg.to_string()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut models = Vec::with_capacity(4);
        for v in Variant::ALL {
            models.push(load_checkpoint(dir.join(checkpoint_name(v)))?);
        }
        let path = dir.join(ROUTER_FILE);
        let thresholds = Config::load(&path)?
            .thresholds()?
            .ok_or_else(|| Error::Config(format!("{} holds no router thresholds", path.display())))?;
        Self::new(models.try_into().expect("four models"), thresholds)
    }
}

/// Which model a frame is sent to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Force(Variant),
    Routed,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::Force(Variant::Baseline),
        Policy::Force(Variant::FvEncoder),
        Policy::Force(Variant::LrDecoder),
        Policy::Force(Variant::FvLr),
        Policy::Routed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Force(Variant::Baseline) => "force-baseline",
            Policy::Force(Variant::FvEncoder) => "force-fv",
            Policy::Force(Variant::LrDecoder) => "force-lr",
            Policy::Force(Variant::FvLr) => "force-fv_lr",
            Policy::Routed => "routed",
        }
    }

    /// Row label in the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            Policy::Force(Variant::Baseline) => "ViT",
            Policy::Force(Variant::FvEncoder) => "ViT+FV",
            Policy::Force(Variant::LrDecoder) => "ViT+LR",
            Policy::Force(Variant::FvLr) => "ViT+FV+LR",
            Policy::Routed => "ViT+Modular Routing+FV+LR",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "routed" {
            return Ok(Policy::Routed);
        }
        let v = s.strip_prefix("force-").unwrap_or(s);
        Ok(Policy::Force(v.parse()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub mask: Mask,
    pub report: QualityReport,
    /// For routed runs this is always `Variant::for_route(report.route)`.
    pub variant_used: Variant,
    /// Inference wall-clock: analysis plus model for routed runs, the model
    /// alone for forced runs.
    pub elapsed: Duration,
}

fn check_input(bank: &ModelBank, img: &ImagePlane) -> Result<()> {
    let n = bank.image_size();
    ensure!(
        img.height() == n && img.width() == n && img.channels() == bank.channels(),
        Contract,
        "image is {}x{}x{}, bank expects {n}x{n}x{}",
        img.height(),
        img.width(),
        img.channels(),
        bank.channels()
    );
    Ok(())
}

/// Classifies `img`, dispatches it to the matching specialist and returns
/// that model's mask unchanged.
pub fn route_and_segment(bank: &ModelBank, img: &ImagePlane) -> Result<PipelineResult> {
    run_policy(bank, img, Policy::Routed)
}

pub fn run_policy(bank: &ModelBank, img: &ImagePlane, policy: Policy) -> Result<PipelineResult> {
    check_input(bank, img)?;
    match policy {
        Policy::Routed => {
            let start = Instant::now();
            let report = classify(img, &bank.thresholds);
            let variant = Variant::for_route(report.route);
            let mask = bank.model(variant).predict_mask(img, 0.5)?;
            Ok(PipelineResult {
                mask,
                report,
                variant_used: variant,
                elapsed: start.elapsed(),
            })
        }
        Policy::Force(variant) => {
            let report = classify(img, &bank.thresholds);
            let start = Instant::now();
            let mask = bank.model(variant).predict_mask(img, 0.5)?;
            Ok(PipelineResult {
                mask,
                report,
                variant_used: variant,
                elapsed: start.elapsed(),
            })
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusSummary {
    pub frames: usize,
    pub failures: usize,
    /// Mean per-frame Dice over successful frames, when ground truth was given.
    pub mean_dice: Option<f64>,
    /// Sum of per-frame inference times.
    pub total_seconds: f64,
    /// Frames per analyzed route, indexed by [`Route::index`].
    pub route_counts: [usize; 4],
    pub route_seconds: [f64; 4],
    /// Frames per model actually run, in [`Variant::ALL`] order.
    pub variant_counts: [usize; 4],
}

#[derive(Debug)]
pub struct CorpusRun {
    pub results: Vec<Result<PipelineResult>>,
    pub dice: Vec<Option<f64>>,
    pub summary: CorpusSummary,
}

/// Runs `policy` over `images` on up to `jobs` threads. Results keep the
/// input order and do not depend on `jobs`; a failing frame is recorded and
/// the rest still run.
pub fn run_corpus(
    bank: &ModelBank,
    images: &[ImagePlane],
    truths: Option<&[Mask]>,
    policy: Policy,
    jobs: usize,
) -> Result<CorpusRun> {
    ensure!(!images.is_empty(), Contract, "corpus is empty");
    ensure!(jobs >= 1, Config, "jobs must be >= 1");
    if let Some(t) = truths {
        ensure!(
            t.len() == images.len(),
            Contract,
            "{} ground-truth masks for {} images",
            t.len(),
            images.len()
        );
    }
    let slots: Vec<Mutex<Option<Result<PipelineResult>>>> = images.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= images.len() {
            break;
        }
        let r = run_policy(bank, &images[i], policy);
        *slots[i].lock().expect("slot lock") = Some(r);
    };
    let workers = jobs.min(images.len());
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(&work);
            }
        });
    }
    let results: Vec<Result<PipelineResult>> = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every frame ran"))
        .collect();

    let mut summary = CorpusSummary {
        frames: images.len(),
        ..Default::default()
    };
    let mut dices = Vec::with_capacity(images.len());
    let mut scored = Vec::new();
    for (i, r) in results.iter().enumerate() {
        match r {
            Err(_) => {
                summary.failures += 1;
                dices.push(None);
            }
            Ok(res) => {
                let secs = res.elapsed.as_secs_f64();
                summary.total_seconds += secs;
                summary.route_counts[res.report.route.index()] += 1;
                summary.route_seconds[res.report.route.index()] += secs;
                let vi = Variant::ALL.iter().position(|&v| v == res.variant_used).expect("variant");
                summary.variant_counts[vi] += 1;
                let d = match truths {
                    Some(t) => Some(dice(&res.mask, &t[i])?),
                    None => None,
                };
                if let Some(d) = d {
                    scored.push(d);
                }
                dices.push(d);
            }
        }
    }
    if truths.is_some() && !scored.is_empty() {
        summary.mean_dice = Some(mean_dice(&scored));
    }
    Ok(CorpusRun {
        results,
        dice: dices,
        summary,
    })
}

/// Plain rows with aligned-text and CSV renderings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                if i == 0 {
                    s.push_str(&format!("{c:<w$}"));
                } else {
                    s.push_str(&format!("{c:>w$}"));
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = line(&self.headers);
        out.push_str(&line(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>()));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let esc = |c: &String| {
            if c.contains([',', '"', '\n']) {
                format!("\"{}\"", c.replace('"', "\"\""))
            } else {
                c.clone()
            }
        };
        let mut out = String::new();
        for r in std::iter::once(&self.headers).chain(&self.rows) {
            out.push_str(&r.iter().map(esc).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

/// One policy's totals over a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRow {
    pub policy: Policy,
    pub summary: CorpusSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub rows: Vec<PolicyRow>,
}

impl Ablation {
    pub fn row(&self, p: Policy) -> Option<&PolicyRow> {
        self.rows.iter().find(|r| r.policy == p)
    }

    /// `time(force-fv_lr) / time(routed)`.
    pub fn speedup(&self) -> Option<f64> {
        let fl = self.row(Policy::Force(Variant::FvLr))?.summary.total_seconds;
        let r = self.row(Policy::Routed)?.summary.total_seconds;
        (r > 0.0).then(|| fl / r)
    }

    /// Dice and inference time per policy.
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["policy", "dice", "time_s"]);
        for r in &self.rows {
            t.push(vec![
                r.policy.label().to_string(),
                r.summary.mean_dice.map_or("-".into(), |d| format!("{d:.4}")),
                format!("{:.4}", r.summary.total_seconds),
            ]);
        }
        t
    }

    /// Per-policy totals, per-route counts of the routed run and the speedup.
    pub fn bench_table(&self) -> Table {
        let mut t = Table::new(&["policy", "frames", "time_s", "ms_per_frame"]);
        for r in &self.rows {
            let s = &r.summary;
            t.push(vec![
                r.policy.name().to_string(),
                s.frames.to_string(),
                format!("{:.4}", s.total_seconds),
                format!("{:.3}", 1e3 * s.total_seconds / s.frames.max(1) as f64),
            ]);
        }
        t
    }

    pub fn route_table(&self) -> Table {
        let mut t = Table::new(&["route", "frames", "time_s"]);
        if let Some(r) = self.row(Policy::Routed) {
            for route in Route::ALL {
                t.push(vec![
                    route.name().to_string(),
                    r.summary.route_counts[route.index()].to_string(),
                    format!("{:.4}", r.summary.route_seconds[route.index()]),
                ]);
            }
        }
        t
    }
}

/// Evaluates `policies` on the same frames. Each policy runs `repeats`
/// times, interleaved, and keeps its fastest pass (masks are identical
/// across passes).
pub fn ablate_policies(
    bank: &ModelBank,
    images: &[ImagePlane],
    truths: Option<&[Mask]>,
    policies: &[Policy],
    jobs: usize,
    repeats: usize,
) -> Result<Ablation> {
    ensure!(repeats >= 1, Config, "repeats must be >= 1");
    let mut best: Vec<Option<CorpusSummary>> = vec![None; policies.len()];
    for _ in 0..repeats {
        for (slot, &p) in best.iter_mut().zip(policies) {
            let run = run_corpus(bank, images, truths, p, jobs)?;
            if slot.as_ref().is_none_or(|b| run.summary.total_seconds < b.total_seconds) {
                *slot = Some(run.summary);
            }
        }
    }
    Ok(Ablation {
        rows: policies
            .iter()
            .zip(best)
            .map(|(&policy, s)| PolicyRow {
                policy,
                summary: s.expect("at least one pass"),
            })
            .collect(),
    })
}

/// All five policies of the ablation.
pub fn ablate(bank: &ModelBank, images: &[ImagePlane], truths: Option<&[Mask]>, jobs: usize) -> Result<Ablation> {
    ablate_policies(bank, images, truths, &Policy::ALL, jobs, 1)
}

/// Result of training one specialist.
#[derive(Debug, Clone)]
pub struct TrainedVariant {
    pub model: SegModel,
    pub logs: Vec<EpochLog>,
    pub train_frames: usize,
    pub seconds: f64,
}

/// Frames whose route dispatches to `v`, as `(input, mask)` pairs.
pub fn route_subset(frames: &[(QuadrantSample, Route)], v: Variant) -> Vec<(ImagePlane, Mask)> {
    frames
        .iter()
        .filter(|(_, r)| Variant::for_route(*r) == v)
        .map(|(s, _)| (s.blurred.clone(), s.mask.clone()))
        .collect()
}

/// Labelled synthetic samples as `(sample, route)` pairs.
pub fn with_routes(samples: &[SynthSample]) -> Vec<(QuadrantSample, Route)> {
    samples.iter().map(|s| (s.sample.clone(), s.route())).collect()
}

/// Trains one specialist from `base` (its variant is overridden) on `data`.
/// With `warm`, the shared parameters start from that model instead of the
/// seeded initialization.
#[allow(clippy::too_many_arguments)]
pub fn train_variant(
    base: &VitConfig,
    variant: Variant,
    gmm: Option<GmmModel>,
    warm: Option<&SegModel>,
    data: &[(ImagePlane, Mask)],
    val: &[(ImagePlane, Mask)],
    opts: &TrainOptions,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainedVariant> {
    let start = Instant::now();
    let gmm = if variant.has_fv() { gmm } else { None };
    let mut model = SegModel::init(base.with_variant(variant), gmm, opts.seed)?;
    if let Some(w) = warm {
        model.warm_start_from(w)?;
    }
    let logs = train(&mut model, data, val, opts, on_epoch)?;
    Ok(TrainedVariant {
        model,
        logs,
        train_frames: data.len(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Fits the patch mixture on the sharp frames of `frames`.
pub fn fit_sharp_gmm(base: &VitConfig, frames: &[(QuadrantSample, Route)], opts: &GmmFitOptions) -> Result<GmmFit> {
    let sharp: Vec<ImagePlane> = frames.iter().map(|(s, _)| s.sharp.clone()).collect();
    fit_patch_gmm(&sharp, base.patch_size, opts)
}

/// Trains all four specialists, each on the training frames of its own
/// route. The baseline trains first; the other three start from its encoder
/// and head. One patch mixture, fitted on the sharp training frames, is
/// shared by the Fisher variants.
pub fn train_bank(
    base: &VitConfig,
    train_set: &[(QuadrantSample, Route)],
    val_set: &[(QuadrantSample, Route)],
    thresholds: QualityThresholds,
    opts: &TrainOptions,
    gmm_opts: &GmmFitOptions,
    mut on_epoch: impl FnMut(Variant, &EpochLog),
) -> Result<(ModelBank, Vec<TrainedVariant>)> {
    let gmm = fit_sharp_gmm(base, train_set, gmm_opts)?.model;
    let mut trained: Vec<TrainedVariant> = Vec::with_capacity(4);
    for v in Variant::ALL {
        let data = route_subset(train_set, v);
        ensure!(!data.is_empty(), Contract, "no training frames for the {v} specialist");
        let val = route_subset(val_set, v);
        let warm = trained.first().map(|t| t.model.clone());
        trained.push(train_variant(
            base,
            v,
            Some(gmm.clone()),
            warm.as_ref(),
            &data,
            &val,
            opts,
            |l| on_epoch(v, l),
        )?);
    }
    let models: Vec<SegModel> = trained.iter().map(|t| t.model.clone()).collect();
    let bank = ModelBank::new(models.try_into().expect("four models"), thresholds)?;
    Ok((bank, trained))
}
