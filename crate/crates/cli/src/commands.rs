use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use modseg::dataset::{
    load_quadrant_file, read_labels, read_manifest, split_indices, synth_corpus, write_corpus,
    write_split_sidecar, QuadrantSample, LABELS_FILE, MANIFEST_FILE, VALIDATION_FILE,
};
use modseg::imaging::{load_image, make_motion_psf, save_image, save_mask, DegradationSpec, ImagePlane, Mask, Psf};
use modseg::lr::{lr_step, lr_trace, psf_step, unrolled_trace, LrState};
use modseg::metrics::{dice, mean_dice, psnr};
use modseg::pipeline::{
    ablate_policies, fit_sharp_gmm, route_subset, run_corpus, train_variant, ModelBank, Policy, Table,
};
use modseg::router::{
    calibrate_from_stats, classify, highpass_mad, laplacian_variance, routing_score, QualityThresholds, Route,
};
use modseg::vit::{load_checkpoint, save_checkpoint, EpochLog, SegModel, Variant};
use modseg::Error;

use crate::run::{code_for, usage, write_file, CliError, CliResult, Run};

/// Expands glob patterns; a pattern without matches is kept as a literal
/// path so that a missing file is reported as such.
fn expand_inputs(patterns: &[String]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in patterns {
        let matches: Vec<PathBuf> = glob::glob(p)
            .map_err(|e| usage(format!("bad pattern '{p}': {e}")))?
            .filter_map(|r| r.ok())
            .collect();
        if matches.is_empty() {
            out.push(PathBuf::from(p));
        } else {
            out.extend(matches);
        }
    }
    if out.is_empty() {
        return Err(usage("no input images given"));
    }
    Ok(out)
}

/// Collects per-input failures into one exit status.
#[derive(Default)]
struct Failures {
    count: usize,
    code: u8,
}

impl Failures {
    fn record(&mut self, run: &mut Run, path: &Path, e: &Error) {
        eprintln!("{}\terror: {e}", path.display());
        run.note(&format!("failed {}: {e}", path.display()));
        self.count += 1;
        self.code = self.code.max(code_for(e));
    }

    fn into_result(self) -> CliResult {
        if self.count == 0 {
            Ok(())
        } else {
            Err(CliError::Partial {
                failed: self.count,
                code: self.code,
            })
        }
    }
}

struct Corpus {
    paths: Vec<PathBuf>,
    samples: Vec<QuadrantSample>,
    labels: Option<Vec<DegradationSpec>>,
}

impl Corpus {
    fn load(data: &Path) -> CliResult<Corpus> {
        let manifest = if data.is_dir() { data.join(MANIFEST_FILE) } else { data.to_path_buf() };
        let paths = read_manifest(&manifest)?;
        if paths.is_empty() {
            return Err(usage(format!("{} lists no files", manifest.display())));
        }
        let samples = paths.iter().map(load_quadrant_file).collect::<Result<Vec<_>, _>>()?;
        let labels_path = manifest.with_file_name(LABELS_FILE);
        let labels = if labels_path.exists() {
            let map: HashMap<PathBuf, DegradationSpec> = read_labels(&labels_path)?.into_iter().collect();
            let mut out = Vec::with_capacity(paths.len());
            for p in &paths {
                out.push(*map.get(p).ok_or_else(|| Error::Format {
                    path: labels_path.clone(),
                    reason: format!("no label for {}", p.display()),
                })?);
            }
            Some(out)
        } else {
            None
        };
        Ok(Corpus { paths, samples, labels })
    }

    fn check_size(&self, size: usize, channels: usize) -> CliResult {
        for (p, s) in self.paths.iter().zip(&self.samples) {
            let (h, w, c) = s.blurred.shape();
            if (h, w, c) != (size, size, channels) {
                return Err(Error::Format {
                    path: p.clone(),
                    reason: format!("frame is {h}x{w}x{c}, model expects {size}x{size}x{channels}"),
                }
                .into());
            }
        }
        Ok(())
    }

    /// Labelled routes, or the router's decision when unlabelled.
    fn routes(&self, th: Option<&QualityThresholds>) -> Option<Vec<Route>> {
        match (&self.labels, th) {
            (Some(l), _) => Some(l.iter().map(|d| Route::from(d.kind)).collect()),
            (None, Some(th)) => Some(self.samples.iter().map(|s| classify(&s.blurred, th).route).collect()),
            (None, None) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitPart {
    Train,
    Validation,
    All,
}

fn select(run: &Run, n: usize, part: SplitPart) -> CliResult<(Vec<usize>, Vec<usize>)> {
    match part {
        SplitPart::All => Ok(((0..n).collect(), Vec::new())),
        _ => Ok(split_indices(n, &run.config.split_spec()?)?),
    }
}

fn pick(run: &Run, n: usize, part: SplitPart) -> CliResult<Vec<usize>> {
    let (tr, va) = select(run, n, part)?;
    Ok(match part {
        SplitPart::Train => tr,
        SplitPart::Validation => va,
        SplitPart::All => tr,
    })
}

fn thresholds_from(run: &Run, lap: Option<f64>, mad: Option<f64>, bank: Option<&Path>) -> CliResult<Option<QualityThresholds>> {
    if lap.is_some() || mad.is_some() {
        let (l, m) = lap.zip(mad).ok_or_else(|| usage("--lap-var-min and --hp-mad-max go together"))?;
        return Ok(Some(QualityThresholds::new(l, m).map_err(|e| usage(e.to_string()))?));
    }
    if let Some(th) = run.config.thresholds()? {
        return Ok(Some(th));
    }
    if let Some(dir) = bank {
        let cfg = modseg::config::Config::load(dir.join(modseg::pipeline::ROUTER_FILE))?;
        return Ok(cfg.thresholds()?);
    }
    Ok(None)
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Image paths or glob patterns.
    pub inputs: Vec<String>,
    #[arg(long)]
    pub lap_var_min: Option<f64>,
    #[arg(long)]
    pub hp_mad_max: Option<f64>,
    /// Read thresholds from this bank's router.conf.
    #[arg(long)]
    pub bank: Option<PathBuf>,
}

pub fn analyze(run: &mut Run, a: AnalyzeArgs) -> CliResult {
    run.log_config()?;
    let th = thresholds_from(run, a.lap_var_min, a.hp_mad_max, a.bank.as_deref())?
        .ok_or_else(|| usage("no router thresholds: pass --lap-var-min/--hp-mad-max, --bank or a config"))?;
    let paths = expand_inputs(&a.inputs)?;
    let mut failures = Failures::default();
    let mut table = Table::new(&["path", "lap_variance", "hp_mad", "route"]);
    for p in paths {
        match load_image(&p) {
            Ok(img) => {
                let r = classify(&img, &th);
                let row = vec![
                    p.display().to_string(),
                    format!("{}", r.lap_variance),
                    format!("{}", r.hp_mad),
                    r.route.name().to_string(),
                ];
                run.say(&row.join("\t"));
                table.push(row);
            }
            Err(e) => failures.record(run, &p, &e),
        }
    }
    if let Some(csv) = run.csv.clone() {
        write_file(&csv, table.to_csv().as_bytes())?;
    }
    failures.into_result()
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of samples (cycled over none, noise, blur, both).
    #[arg(long)]
    pub count: Option<usize>,
}

pub fn synth(run: &mut Run, a: SynthArgs) -> CliResult {
    if let Some(n) = a.count {
        run.set("synth.count", n)?;
    }
    run.log_config()?;
    let out = run.require_out()?;
    let n = run.config.get_or("synth.count", 100usize)?;
    let spec = run.config.synth_spec()?;
    let seed = run.config.seed()?;
    let corpus = synth_corpus(n, &spec, seed)?;
    let paths = write_corpus(&out, &corpus)?;
    let (_, va) = split_indices(n, &run.config.split_spec()?)?;
    let val: Vec<PathBuf> = va.iter().map(|&i| paths[i].clone()).collect();
    write_split_sidecar(out.join(VALIDATION_FILE), &val)?;
    run.say(&format!("wrote {n} samples of {0}x{0} to {1}", spec.size, out.display()));
    let mut counts = [0usize; 4];
    for s in &corpus {
        counts[s.route().index()] += 1;
    }
    for r in Route::ALL {
        run.say(&format!("{}\t{}", r.name(), counts[r.index()]));
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Corpus directory (or manifest) with labels.tsv.
    #[arg(long)]
    pub data: PathBuf,
}

pub fn calibrate(run: &mut Run, a: CalibrateArgs) -> CliResult {
    run.log_config()?;
    let corpus = Corpus::load(&a.data)?;
    let labels = corpus
        .labels
        .as_ref()
        .ok_or_else(|| usage(format!("calibration needs {LABELS_FILE} next to the manifest")))?;
    let stats: Vec<(f64, f64, Route)> = corpus
        .samples
        .iter()
        .zip(labels)
        .map(|(s, l)| (laplacian_variance(&s.blurred), highpass_mad(&s.blurred), Route::from(l.kind)))
        .collect();
    let cal = calibrate_from_stats(&stats)?;
    let pairs: Vec<(Route, Route)> = stats
        .iter()
        .map(|&(lv, mad, r)| (r, modseg::router::report_from_stats(lv, mad, &cal.thresholds).route))
        .collect();
    let score = routing_score(&pairs);
    run.say(&format!("router.lap_var_min = {:?}", cal.thresholds.lap_var_min));
    run.say(&format!("router.hp_mad_max = {:?}", cal.thresholds.hp_mad_max));
    run.say(&format!("blur_accuracy\t{:.4}", cal.blur_accuracy));
    run.say(&format!("noise_accuracy\t{:.4}", cal.noise_accuracy));
    run.say(&format!("routing_balanced_accuracy\t{:.4}", score.balanced_accuracy));
    if let Some(out) = &run.out {
        let mut cfg = modseg::config::Config::default();
        cfg.set_thresholds(&cal.thresholds);
        let path = out.join(modseg::pipeline::ROUTER_FILE);
        write_file(&path, cfg.to_string().as_bytes())?;
        run.note(&format!("thresholds written to {}", path.display()));
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// baseline, fv-encoder, lr-decoder, fv-lr, or `all` for a full bank.
    #[arg(long, required_unless_present = "route", conflicts_with = "route")]
    pub variant: Option<String>,
    /// Train the specialist for this route: clean, noisy, blurred, noisy-blurred.
    #[arg(long)]
    pub route: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Train on every training frame instead of the variant's route.
    #[arg(long)]
    pub all_frames: bool,
    /// Start the shared encoder and head from this checkpoint (a trained
    /// baseline). With `--variant all` the freshly trained baseline is used.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

fn epoch_csv(logs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_dice,seconds\n");
    for l in logs {
        let vd = l.val_dice.map_or(String::new(), |d| format!("{d:?}"));
        s.push_str(&format!("{},{:?},{},{:.3}\n", l.epoch, l.train_loss, vd, l.seconds));
    }
    s
}

pub fn train(run: &mut Run, a: TrainArgs) -> CliResult {
    if let Some(e) = a.epochs {
        run.set("train.epochs", e)?;
    }
    if let Some(lr) = a.learning_rate {
        run.set("train.learning_rate", lr)?;
    }
    if let Some(b) = a.batch_size {
        run.set("train.batch_size", b)?;
    }
    let variants: Vec<Variant> = match (a.variant.as_deref(), a.route.as_deref()) {
        (Some("all"), _) => Variant::ALL.to_vec(),
        (Some(v), _) => vec![v.parse().map_err(|e: Error| usage(e.to_string()))?],
        (None, Some(r)) => vec![Variant::for_route(r.parse().map_err(|e: Error| usage(e.to_string()))?)],
        (None, None) => return Err(usage("train needs --variant or --route")),
    };
    run.log_config()?;
    let out = run.require_out()?;
    let base = run.config.vit_config()?;
    let opts = run.config.train_options()?;
    let corpus = Corpus::load(&a.data)?;
    corpus.check_size(base.image_size, base.channels)?;
    let (tr, va) = split_indices(corpus.samples.len(), &run.config.split_spec()?)?;
    let val_paths: Vec<PathBuf> = va.iter().map(|&i| corpus.paths[i].clone()).collect();
    write_split_sidecar(out.join(VALIDATION_FILE), &val_paths)?;

    let mut th = run.config.thresholds()?;
    if th.is_none() && variants.len() == 4 {
        let labels = corpus.labels.as_ref().ok_or_else(|| {
            usage("training a bank needs router thresholds in the config or a labels.tsv to calibrate from")
        })?;
        let stats: Vec<(f64, f64, Route)> = tr
            .iter()
            .map(|&i| {
                let b = &corpus.samples[i].blurred;
                (laplacian_variance(b), highpass_mad(b), Route::from(labels[i].kind))
            })
            .collect();
        let cal = calibrate_from_stats(&stats)?;
        run.note(&format!(
            "calibrated thresholds on the training split: lap_var_min={:?} hp_mad_max={:?}",
            cal.thresholds.lap_var_min, cal.thresholds.hp_mad_max
        ));
        th = Some(cal.thresholds);
    }
    let routes = corpus.routes(th.as_ref());
    if routes.is_none() && !a.all_frames {
        run.note("no labels or thresholds: training on every frame");
    }
    let with_route = |idx: &[usize]| -> Vec<(QuadrantSample, Route)> {
        idx.iter()
            .map(|&i| {
                let r = routes.as_ref().map_or(Route::Clean, |r| r[i]);
                (corpus.samples[i].clone(), r)
            })
            .collect()
    };
    let train_set = with_route(&tr);
    let val_set = with_route(&va);

    let gmm = if variants.iter().any(|v| v.has_fv()) {
        let gopts = run.config.gmm_options(base.fv_components)?;
        let fit = fit_sharp_gmm(&base, &train_set, &gopts)?;
        run.note(&format!(
            "gmm: K={} seed={} iterations={} converged={} rescued={}",
            gopts.components, gopts.seed, fit.iterations, fit.converged, fit.rescued
        ));
        Some(fit.model)
    } else {
        None
    };

    let mut warm = a.init.as_ref().map(load_checkpoint).transpose()?;
    if let Some(w) = &warm {
        run.note(&format!("warm start from a {} checkpoint", w.variant()));
    }
    let mut models: Vec<SegModel> = Vec::new();
    for v in variants.iter().copied() {
        let everything = a.all_frames || routes.is_none();
        let pairs = |set: &[(QuadrantSample, Route)]| {
            if everything {
                set.iter().map(|(s, _)| (s.blurred.clone(), s.mask.clone())).collect()
            } else {
                route_subset(set, v)
            }
        };
        let (data, val) = (pairs(&train_set), pairs(&val_set));
        if data.is_empty() {
            return Err(usage(format!("no training frames route to {v}")));
        }
        run.note(&format!("training {v} on {} frames ({} validation)", data.len(), val.len()));
        let trained = train_variant(&base, v, gmm.clone(), warm.as_ref(), &data, &val, &opts, |l| {
            let vd = l.val_dice.map_or("-".to_string(), |d| format!("{d:.4}"));
            run.note(&format!("{v} epoch {} loss {:.6} val_dice {vd} {:.2}s", l.epoch, l.train_loss, l.seconds));
        })?;
        let ckpt = out.join(format!("{}.ckpt", v.bank_name()));
        save_checkpoint(&ckpt, &trained.model)?;
        write_file(
            &out.join(format!("{}_epochs.csv", v.bank_name())),
            epoch_csv(&trained.logs).as_bytes(),
        )?;
        run.say(&format!(
            "{v}\t{}\ttrain_frames {}\tminutes {:.2}",
            ckpt.display(),
            trained.train_frames,
            trained.seconds / 60.0
        ));
        if variants.len() == 4 && v == Variant::Baseline && warm.is_none() {
            warm = Some(trained.model.clone());
        }
        models.push(trained.model);
    }
    if variants.len() == 4 {
        let th = th.expect("set above for banks");
        let bank = ModelBank::new(models.try_into().expect("four models"), th)?;
        bank.save(&out)?;
        run.say(&format!("bank written to {}", out.display()));
    }
    Ok(())
}

enum Scorer {
    Model(SegModel),
    Bank(ModelBank, Policy),
}

impl Scorer {
    fn size(&self) -> (usize, usize) {
        match self {
            Scorer::Model(m) => (m.config.image_size, m.config.channels),
            Scorer::Bank(b, _) => (b.image_size(), b.channels()),
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, conflicts_with = "bank")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Dispatch policy for a bank: routed, force-baseline, force-fv, force-lr, force-fv_lr.
    #[arg(long, default_value = "routed")]
    pub policy: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "validation")]
    pub split: SplitPart,
}

pub fn eval(run: &mut Run, a: EvalArgs) -> CliResult {
    run.log_config()?;
    let scorer = match (&a.model, &a.bank) {
        (Some(m), None) => Scorer::Model(load_checkpoint(m)?),
        (None, Some(b)) => Scorer::Bank(
            ModelBank::load(b)?,
            a.policy.parse().map_err(|e: Error| usage(e.to_string()))?,
        ),
        _ => return Err(usage("eval needs exactly one of --model or --bank")),
    };
    let corpus = Corpus::load(&a.data)?;
    let (size, ch) = scorer.size();
    corpus.check_size(size, ch)?;
    let threshold = run.config.get_or("threshold", 0.5)?;
    let idx = pick(run, corpus.samples.len(), a.split)?;
    let mut table = Table::new(&["path", "variant", "dice"]);
    let mut scores = Vec::new();
    for &i in &idx {
        let s = &corpus.samples[i];
        let (mask, variant) = match &scorer {
            Scorer::Model(m) => (m.predict_mask(&s.blurred, threshold)?, m.variant()),
            Scorer::Bank(b, p) => {
                let r = modseg::pipeline::run_policy(b, &s.blurred, *p)?;
                (r.mask, r.variant_used)
            }
        };
        let d = dice(&mask, &s.mask)?;
        scores.push(d);
        let row = vec![corpus.paths[i].display().to_string(), variant.to_string(), format!("{d:.6}")];
        run.say(&row.join("\t"));
        table.push(row);
    }
    let m = mean_dice(&scores);
    run.say(&format!("mean_dice\t{m:.6}\t{} frames", scores.len()));
    table.push(vec!["mean".into(), "-".into(), format!("{m:.6}")]);
    if let Some(csv) = run.csv.clone() {
        write_file(&csv, table.to_csv().as_bytes())?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// Input images or glob patterns; repeatable.
    #[arg(long = "in", required = true)]
    pub inputs: Vec<String>,
    /// Also write overlays (prediction green, ground truth red).
    #[arg(long)]
    pub overlay: bool,
    /// Inputs are quadrant composites; column 1 is segmented and column 4
    /// supplies ground truth.
    #[arg(long)]
    pub quadrant: bool,
}

pub fn segment(run: &mut Run, a: SegmentArgs) -> CliResult {
    run.log_config()?;
    let out = run.require_out()?;
    let bank = ModelBank::load(&a.bank)?;
    let paths = expand_inputs(&a.inputs)?;
    let mut failures = Failures::default();
    let n = bank.image_size();
    let (mut ok_paths, mut images, mut truths) = (Vec::new(), Vec::new(), Vec::new());
    for p in paths {
        let loaded = if a.quadrant {
            load_quadrant_file(&p).map(|q| (q.blurred, Some(q.mask)))
        } else {
            load_image(&p).map(|i| (i, None))
        };
        let checked = loaded.and_then(|(img, gt)| {
            if img.shape() != (n, n, bank.channels()) {
                Err(Error::Format {
                    path: p.clone(),
                    reason: format!("frame is {:?}, bank expects {n}x{n}x{}", img.shape(), bank.channels()),
                })
            } else {
                Ok((img, gt))
            }
        });
        match checked {
            Ok((img, gt)) => {
                ok_paths.push(p);
                images.push(img);
                truths.push(gt);
            }
            Err(e) => failures.record(run, &p, &e),
        }
    }
    if !images.is_empty() {
        let res = run_corpus(&bank, &images, None, Policy::Routed, run.jobs)?;
        for (i, r) in res.results.into_iter().enumerate() {
            let p = &ok_paths[i];
            let r = match r {
                Ok(r) => r,
                Err(e) => {
                    failures.record(run, p, &e);
                    continue;
                }
            };
            let stem = p.file_stem().map_or("frame".into(), |s| s.to_string_lossy().into_owned());
            save_mask(out.join(format!("{stem}_mask.png")), &r.mask)?;
            if a.overlay {
                let ov = modseg::dataset::overlay(&images[i], &r.mask, truths[i].as_ref())?;
                save_image(out.join(format!("{stem}_overlay.png")), &ov)?;
            }
            let mut line = format!("{}\t{}\t{}", p.display(), r.report.route.name(), r.variant_used);
            if let Some(gt) = &truths[i] {
                line.push_str(&format!("\t{:.6}", dice(&r.mask, gt)?));
            }
            run.say(&line);
        }
    }
    failures.into_result()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DeblurMode {
    Classical,
    Blind,
    Unrolled,
}

#[derive(Args, Debug)]
pub struct DeblurArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "classical")]
    pub mode: DeblurMode,
    /// Iterations (classical) or alternations (blind).
    #[arg(long, default_value_t = 30)]
    pub iters: usize,
    /// PSF support for blind estimation.
    #[arg(long, default_value_t = 9)]
    pub psf_size: usize,
    /// Known motion PSF length for classical mode.
    #[arg(long)]
    pub psf_length: Option<usize>,
    /// Known motion PSF angle in degrees for classical mode.
    #[arg(long, default_value_t = 0.0)]
    pub psf_angle: f64,
    /// Checkpoint holding unrolled stages (lr-decoder or fv-lr).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Sharp reference; prints a PSNR trace.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

fn psf_image(h: &Psf) -> ImagePlane {
    let max = h.weights().iter().cloned().fold(0.0, f64::max).max(1e-300);
    ImagePlane::new(h.size(), h.size(), 1, h.weights().iter().map(|w| w / max).collect()).expect("k*k weights")
}

pub fn deblur(run: &mut Run, a: DeblurArgs) -> CliResult {
    run.log_config()?;
    let out = run.require_out()?;
    let g = load_image(&a.input)?;
    let reference = a.reference.as_ref().map(load_image).transpose()?;
    let (trace, psf): (Vec<ImagePlane>, Option<Psf>) = match a.mode {
        DeblurMode::Classical => {
            let len = a.psf_length.ok_or_else(|| usage("classical mode needs --psf-length"))?;
            let h = make_motion_psf(len, a.psf_angle).map_err(|e| usage(e.to_string()))?;
            (lr_trace(&g, &h, a.iters)?, Some(h))
        }
        DeblurMode::Blind => {
            let mut st = LrState::new(g.clone(), Psf::flat(a.psf_size)?)?;
            let mut tr = vec![st.f.clone()];
            for _ in 0..a.iters {
                st = psf_step(&lr_step(&st))?;
                tr.push(st.f.clone());
            }
            (tr, Some(st.h))
        }
        DeblurMode::Unrolled => {
            let path = a.model.as_ref().ok_or_else(|| usage("unrolled mode needs --model"))?;
            let m = load_checkpoint(path)?;
            if !m.variant().has_lr() {
                return Err(usage(format!("{} holds a {} model without unrolled stages", path.display(), m.variant())));
            }
            let stages = unrolled_trace(&g, &m.config.unroll, &m.params)?;
            let h = stages.last().map(|(_, h)| h.clone());
            let mut tr = vec![g.clone()];
            tr.extend(stages.into_iter().map(|(f, _)| f));
            (tr, h)
        }
    };
    if let Some(r) = &reference {
        run.say("iteration\tpsnr_db");
        for (i, f) in trace.iter().enumerate() {
            run.say(&format!("{i}\t{:.4}", psnr(f, r)?));
        }
    }
    let restored = trace.last().expect("trace holds the input");
    save_image(out.join("restored.png"), &restored.clamp01())?;
    if let Some(h) = psf {
        save_image(out.join("psf.png"), &psf_image(&h))?;
    }
    run.say(&format!("restored image written to {}", out.join("restored.png").display()));
    Ok(())
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "validation")]
    pub split: SplitPart,
}

fn bank_frames(run: &Run, bank: &ModelBank, data: &Path, part: SplitPart) -> CliResult<(Vec<ImagePlane>, Vec<Mask>)> {
    let corpus = Corpus::load(data)?;
    corpus.check_size(bank.image_size(), bank.channels())?;
    let idx = pick(run, corpus.samples.len(), part)?;
    if idx.is_empty() {
        return Err(usage("the selected split is empty"));
    }
    Ok(idx
        .iter()
        .map(|&i| (corpus.samples[i].blurred.clone(), corpus.samples[i].mask.clone()))
        .unzip())
}

pub fn ablate(run: &mut Run, a: AblateArgs) -> CliResult {
    run.log_config()?;
    let bank = ModelBank::load(&a.bank)?;
    let (images, truths) = bank_frames(run, &bank, &a.data, a.split)?;
    let ab = ablate_policies(&bank, &images, Some(&truths), &Policy::ALL, run.jobs, 1)?;
    run.note(&format!("{} frames; time is inference wall-clock in seconds", images.len()));
    run.table(&ab.table())
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitPart,
    /// Timing passes per policy; the fastest is kept.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

pub fn bench(run: &mut Run, a: BenchArgs) -> CliResult {
    run.log_config()?;
    if a.repeats == 0 {
        return Err(usage("--repeats must be at least 1"));
    }
    let bank = ModelBank::load(&a.bank)?;
    let (images, _) = bank_frames(run, &bank, &a.data, a.split)?;
    let ab = ablate_policies(&bank, &images, None, &Policy::ALL, run.jobs, a.repeats)?;
    run.table(&ab.bench_table())?;
    run.say("");
    let routes = ab.route_table();
    for line in routes.to_text().lines() {
        run.say(line);
    }
    match ab.speedup() {
        Some(s) => run.say(&format!("speedup (force-fv_lr / routed): {s:.3}")),
        None => run.say("speedup (force-fv_lr / routed): -"),
    }
    Ok(())
}
