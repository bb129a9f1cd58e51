use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod run;

use run::Run;

/// Quality-aware modular segmentation toolkit.
#[derive(Parser, Debug)]
#[command(name = "modseg", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` config key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for corpus runs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also write the command's table as CSV here.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print blur/noise statistics and the route for each image.
    Analyze(commands::AnalyzeArgs),
    /// Generate a synthetic quadrant corpus.
    Synth(commands::SynthArgs),
    /// Choose router thresholds from a labelled corpus.
    Calibrate(commands::CalibrateArgs),
    /// Train one specialist, or all four into a bank.
    Train(commands::TrainArgs),
    /// Score a checkpoint or bank against ground truth.
    Eval(commands::EvalArgs),
    /// Write predicted masks (and overlays) for images.
    Segment(commands::SegmentArgs),
    /// Restore a blurred image with Lucy-Richardson.
    Deblur(commands::DeblurArgs),
    /// Dice and time for the five dispatch policies.
    Ablate(commands::AblateArgs),
    /// Inference timing per policy and the routed speedup.
    Bench(commands::BenchArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let args: Vec<String> = std::env::args().collect();
    let result = Run::start(&cli.global, &args).and_then(|mut run| {
        let r = match cli.command {
            Command::Analyze(a) => commands::analyze(&mut run, a),
            Command::Synth(a) => commands::synth(&mut run, a),
            Command::Calibrate(a) => commands::calibrate(&mut run, a),
            Command::Train(a) => commands::train(&mut run, a),
            Command::Eval(a) => commands::eval(&mut run, a),
            Command::Segment(a) => commands::segment(&mut run, a),
            Command::Deblur(a) => commands::deblur(&mut run, a),
            Command::Ablate(a) => commands::ablate(&mut run, a),
            Command::Bench(a) => commands::bench(&mut run, a),
        };
        run.finish(r)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
