use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use modseg::vit::{load_checkpoint, save_checkpoint, SegModel, VitConfig};

const TINY: &[&str] = &[
    "model.image_size=16",
    "model.patch_size=4",
    "model.embed_dim=8",
    "model.layers=1",
    "model.heads=2",
    "model.mlp_dim=16",
    "model.fv_components=2",
    "model.unroll.stages=1",
    "model.unroll.psf_size=3",
    "model.unroll.embed_dim=8",
    "model.unroll.heads=2",
    "model.unroll.mlp_dim=8",
    "model.unroll.patch_size=4",
    "synth.size=16",
    "synth.blur_lengths=3,5",
    "train.batch_size=4",
];

fn modseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny(args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    for s in TINY {
        all.push("--set");
        all.push(s);
    }
    modseg(&all)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: usize) -> PathBuf {
    let data = dir.join("data");
    ok(tiny(&["synth", "--count", &count.to_string(), "--seed", "3", "--out", s(&data)]));
    data
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    // usage
    assert_eq!(code(&modseg(&[])), 1);
    assert_eq!(code(&modseg(&["analyze", "--lap-var-min", "1", "--hp-mad-max", "1"])), 1);
    assert_eq!(code(&modseg(&["synth", "--set", "nonsense.key=1", "--out", s(dir.path())])), 1);
    assert_eq!(code(&modseg(&["--help"])), 0);
    // data
    let missing = dir.path().join("missing.png");
    assert_eq!(
        code(&modseg(&["analyze", "--lap-var-min", "1", "--hp-mad-max", "1", s(&missing)])),
        2
    );
    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not a png").unwrap();
    assert_eq!(
        code(&modseg(&["analyze", "--lap-var-min", "1", "--hp-mad-max", "1", s(&junk)])),
        2
    );
    // numeric: a step size this large drives the loss to NaN
    let data = synth(dir.path(), 8);
    let out = dir.path().join("nan");
    let o = tiny(&[
        "train", "--data", s(&data), "--variant", "baseline", "--epochs", "3", "--lr", "1e300", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 3, "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn analyze_prints_one_line_per_input() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 12);
    let pattern = format!("{}/*.png", data.display());
    let o = ok(modseg(&["analyze", "--lap-var-min", "0.01", "--hp-mad-max", "0.05", &pattern]));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 12);
    for l in &lines {
        let fields: Vec<&str> = l.split('\t').collect();
        assert_eq!(fields.len(), 4);
        assert!(["clean", "noisy", "blurred", "noisy-blurred"].contains(&fields[3]));
    }

    let flat = dir.path().join("flat.png");
    let img = modseg::imaging::ImagePlane::filled(16, 16, 3, 0.5);
    modseg::imaging::save_image(&flat, &img).unwrap();
    let o = ok(modseg(&["analyze", "--lap-var-min", "0.01", "--hp-mad-max", "0.05", s(&flat)]));
    let line = stdout(&o);
    let fields: Vec<&str> = line.trim().split('\t').collect();
    assert_eq!(fields[1], "0");
    assert_eq!(fields[3], "blurred");
}

#[test]
fn zero_learning_rate_leaves_the_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 8);
    let out = dir.path().join("run");
    ok(tiny(&[
        "train", "--data", s(&data), "--variant", "baseline", "--epochs", "1", "--lr", "0", "--seed", "5", "--out",
        s(&out),
    ]));
    let trained = std::fs::read(out.join("baseline.ckpt")).unwrap();

    let mut cfg = VitConfig::default();
    let pairs: Vec<(&str, &str)> = TINY
        .iter()
        .filter_map(|p| p.strip_prefix("model."))
        .map(|p| p.split_once('=').unwrap())
        .collect();
    cfg.apply_pairs(pairs).unwrap();
    let init = SegModel::init(cfg, None, 5).unwrap();
    let path = dir.path().join("init.ckpt");
    save_checkpoint(&path, &init).unwrap();
    assert_eq!(trained, std::fs::read(&path).unwrap());
}

fn losses(csv: &Path) -> Vec<String> {
    std::fs::read_to_string(csv)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn train_and_segment_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 16);
    let mut ckpts = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(tiny(&["train", "--data", s(&data), "--variant", "all", "--epochs", "2", "--seed", "4", "--out", s(&out)]));
        ckpts.push(out);
    }
    for name in ["baseline", "fv", "lr", "fv_lr"] {
        let a = std::fs::read(ckpts[0].join(format!("{name}.ckpt"))).unwrap();
        let b = std::fs::read(ckpts[1].join(format!("{name}.ckpt"))).unwrap();
        assert!(a == b, "{name} checkpoints differ");
        let la = losses(&ckpts[0].join(format!("{name}_epochs.csv")));
        assert_eq!(la, losses(&ckpts[1].join(format!("{name}_epochs.csv"))));
        assert_eq!(la.len(), 3);
    }
    assert_eq!(
        std::fs::read(ckpts[0].join("router.conf")).unwrap(),
        std::fs::read(ckpts[1].join("router.conf")).unwrap()
    );

    let pattern = format!("{}/*.png", data.display());
    let mut outputs = Vec::new();
    for (run, jobs) in [("seg1", "1"), ("seg2", "3")] {
        let out = dir.path().join(run);
        ok(modseg(&[
            "segment", "--bank", s(&ckpts[0]), "--in", &pattern, "--quadrant", "--overlay", "--jobs", jobs, "--out",
            s(&out),
        ]));
        outputs.push(out);
    }
    let mut masks = 0;
    for entry in std::fs::read_dir(&outputs[0]).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "png") {
            let other = outputs[1].join(p.file_name().unwrap());
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(other).unwrap());
            masks += 1;
        }
    }
    assert_eq!(masks, 32);
}

#[test]
fn fv_lr_checkpoint_holds_mixture_and_stages() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 8);
    let out = dir.path().join("run");
    ok(tiny(&["train", "--data", s(&data), "--variant", "fv-lr", "--epochs", "1", "--all-frames", "--out", s(&out)]));
    let m = load_checkpoint(out.join("fv_lr.ckpt")).unwrap();
    let gmm = m.gmm.as_ref().expect("mixture stored");
    assert_eq!(gmm.components(), 2);
    assert!(m.params.keys().any(|k| k.starts_with("lr.0.")));
    let log = std::fs::read_to_string(out.join("run.log")).unwrap();
    assert!(log.contains("gmm: K=2"));
    assert!(log.contains("seed: 0"));
}

#[test]
fn route_flag_picks_the_specialist() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 16);
    let out = dir.path().join("run");
    let o = ok(tiny(&["train", "--data", s(&data), "--route", "noisy", "--epochs", "1", "--out", s(&out)]));
    assert!(stdout(&o).starts_with("fv-encoder"));
    assert!(out.join("fv.ckpt").exists());
    assert_eq!(code(&tiny(&["train", "--data", s(&data), "--route", "foggy", "--out", s(&out)])), 1);
}

#[test]
fn bench_and_ablate_on_tiny_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 16);
    let bank = dir.path().join("bank");
    ok(tiny(&["train", "--data", s(&data), "--variant", "all", "--epochs", "1", "--out", s(&bank)]));

    let single = dir.path().join("single");
    std::fs::create_dir_all(&single).unwrap();
    let first = modseg::dataset::read_manifest(data.join("manifest.txt")).unwrap()[0].clone();
    std::fs::write(single.join("manifest.txt"), format!("{}\n", first.display())).unwrap();
    let csv = dir.path().join("bench.csv");
    let o = ok(modseg(&[
        "bench", "--bank", s(&bank), "--data", s(&single), "--repeats", "1", "--csv", s(&csv),
    ]));
    let text = stdout(&o);
    for p in ["force-baseline", "force-fv", "force-lr", "force-fv_lr", "routed"] {
        assert!(text.lines().any(|l| l.starts_with(p)), "missing row {p}:\n{text}");
    }
    let routed: usize = text
        .lines()
        .filter(|l| ["clean ", "noisy ", "blurred ", "noisy-blurred "].iter().any(|r| l.starts_with(r)))
        .map(|l| l.split_whitespace().nth(1).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(routed, 1);
    assert!(text.contains("speedup"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 6);

    let o = ok(modseg(&["ablate", "--bank", s(&bank), "--data", s(&data), "--split", "all"]));
    let rows: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    // header, rule, five policies
    assert_eq!(rows.len(), 7);
    assert!(rows[0].contains("dice") && rows[0].contains("time_s"));
}

#[test]
fn calibrate_then_deblur() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 24);
    let out = dir.path().join("cal");
    let o = ok(modseg(&["calibrate", "--data", s(&data), "--out", s(&out)]));
    assert!(stdout(&o).contains("routing_balanced_accuracy"));
    let conf = modseg::config::Config::load(out.join("router.conf")).unwrap();
    assert!(conf.thresholds().unwrap().is_some());

    let sample = modseg::dataset::load_quadrant_file(
        modseg::dataset::read_manifest(data.join("manifest.txt")).unwrap()[2].clone(),
    )
    .unwrap();
    let sharp = dir.path().join("sharp.png");
    let blurred = dir.path().join("blurred.png");
    modseg::imaging::save_image(&sharp, &sample.sharp).unwrap();
    let psf = modseg::imaging::make_motion_psf(5, 0.0).unwrap();
    let g = modseg::imaging::convolve(&sample.sharp, &psf, modseg::imaging::Boundary::Reflect).unwrap();
    modseg::imaging::save_image(&blurred, &g).unwrap();
    let out = dir.path().join("deblur");
    let o = ok(modseg(&[
        "deblur", "--in", s(&blurred), "--psf-length", "5", "--iters", "10", "--reference", s(&sharp), "--out",
        s(&out),
    ]));
    let trace: Vec<f64> = stdout(&o)
        .lines()
        .skip(1)
        .take(11)
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(trace.len(), 11);
    assert!(trace[10] > trace[0]);
    assert!(out.join("restored.png").exists() && out.join("psf.png").exists());
    assert_eq!(code(&modseg(&["deblur", "--in", s(&blurred), "--out", s(&out)])), 1);
}
