//! Per-invocation state: resolved config, output echo and the run log.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use modseg::config::Config;
use modseg::pipeline::Table;
use modseg::Error;

use crate::GlobalOpts;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    /// Some inputs failed; the worst exit code among them.
    Partial { failed: usize, code: u8 },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => code_for(e),
            CliError::Partial { code, .. } => *code,
        }
    }
}

pub fn code_for(e: &Error) -> u8 {
    if e.is_numeric_error() {
        3
    } else if e.is_data_error() {
        2
    } else {
        1
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Partial { failed, .. } => write!(f, "{failed} input(s) failed"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub struct Run {
    pub config: Config,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub jobs: usize,
    log: String,
}

impl Run {
    /// Resolves the config (file, then `--set`, then `--seed`/`--jobs`) and
    /// opens the log with the command line and the resolved settings.
    pub fn start(g: &GlobalOpts, argv: &[String]) -> CliResult<Run> {
        let mut config = match &g.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        for o in &g.overrides {
            config.set_pair(o).map_err(|e| usage(e.to_string()))?;
        }
        if let Some(s) = g.seed {
            config.set("seed", s.to_string())?;
        }
        if let Some(j) = g.jobs {
            if j == 0 {
                return Err(usage("--jobs must be at least 1"));
            }
            config.set("jobs", j.to_string())?;
        }
        let jobs = config.get_or("jobs", 1usize)?.max(1);
        let mut run = Run {
            config,
            out: g.out.clone(),
            csv: g.csv.clone(),
            jobs,
            log: String::new(),
        };
        run.note(&format!("command: {}", argv.join(" ")));
        Ok(run)
    }

    /// Fixes a config key before the command uses it, so the log shows it.
    pub fn set(&mut self, key: &str, value: impl ToString) -> CliResult {
        self.config.set(key, value.to_string()).map_err(|e| usage(e.to_string()))
    }

    /// Records the resolved config and seed; commands call this once their
    /// flags are folded in.
    pub fn log_config(&mut self) -> CliResult {
        let seed = self.config.seed()?;
        self.note(&format!("seed: {seed}"));
        let cfg = self.config.to_string();
        for line in cfg.lines() {
            self.note(&format!("config: {line}"));
        }
        Ok(())
    }

    /// A line for the log only (also echoed to stderr).
    pub fn note(&mut self, line: &str) {
        eprintln!("# {line}");
        self.log.push_str("# ");
        self.log.push_str(line);
        self.log.push('\n');
    }

    /// A result line on stdout, also kept in the log.
    pub fn say(&mut self, line: &str) {
        println!("{line}");
        self.log.push_str(line);
        self.log.push('\n');
    }

    pub fn table(&mut self, t: &Table) -> CliResult {
        let text = t.to_text();
        for line in text.lines() {
            self.say(line);
        }
        if let Some(p) = self.csv.clone() {
            write_file(&p, t.to_csv().as_bytes())?;
            self.note(&format!("csv written to {}", p.display()));
        }
        Ok(())
    }

    pub fn require_out(&self) -> CliResult<PathBuf> {
        let out = self.out.clone().ok_or_else(|| usage("this command needs --out DIR"))?;
        std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
        Ok(out)
    }

    /// Appends the log to `<out>/run.log` when an output directory is set.
    pub fn finish(self, result: CliResult) -> CliResult {
        let status = match &result {
            Ok(()) => "status: ok".to_string(),
            Err(e) => format!("status: failed (exit {}): {e}", e.exit_code()),
        };
        if let Some(dir) = &self.out {
            if std::fs::create_dir_all(dir).is_ok() {
                let path = dir.join("run.log");
                let mut f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| io_err(&path, e))?;
                write!(f, "{}# {status}\n\n", self.log).map_err(|e| io_err(&path, e))?;
            }
        }
        result
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}
