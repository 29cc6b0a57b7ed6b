//! File-based pipelines behind the `ptmst` binary.
//!
//! Each subcommand reads a flat key=value config (see [`kv`]), prints the
//! resolved settings to stderr and writes its artifacts under `--out`, which
//! defaults to a directory below `$PTMS_DATA_DIR` (or the working directory).
//!
//! Exit codes: 0 ok, 1 other, 2 config, 3 teacher training, 4 distillation,
//! 5 evaluation.

mod analyze;
mod data;
mod distill;
mod eval;
pub mod kv;
mod teacher;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub use analyze::run_analyze;
pub use data::{run_gen_data, test_path_for};
pub use distill::run_distill;
pub use eval::{eval_seed, run_eval};
pub use kv::KvConfig;
pub use teacher::run_train_teacher;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_DISTILL: i32 = 4;
pub const EXIT_EVAL: i32 = 5;

/// An error tagged with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: Error,
    pub context: Option<String>,
}

impl CliError {
    /// Config errors always exit 2; everything else exits `code`.
    pub fn at(code: i32) -> impl Fn(Error) -> CliError {
        move |error| CliError {
            code: if matches!(error, Error::Config(_)) { EXIT_CONFIG } else { code },
            error,
            context: None,
        }
    }

    pub fn with_context(mut self, ctx: impl Into<String>) -> Self {
        self.context = Some(ctx.into());
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.context {
            Some(c) => write!(f, "{c}: {}", self.error),
            None => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::at(EXIT_OTHER)(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "ptmst", version, about = "Distil paired image-text data against phased shortcut teacher trajectories")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset (train and test splits).
    GenData(GenDataArgs),
    /// Record expert trajectories into a buffer directory.
    TrainTeacher(TrainTeacherArgs),
    /// Run a phased distillation plan against a buffer.
    Distill(DistillArgs),
    /// Progressive student evaluation of distilled subsets or a coreset.
    Eval(EvalArgs),
    /// Gradient diagnostics: cosine matrix, Δt sweep or PCA export.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Train split path; the test split goes next to it as `<stem>_test.ptms`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainTeacherArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `num_experts` from the config.
    #[arg(long)]
    pub experts: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads across experts.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Reload the buffer and check it; with zero learning rates also check
    /// that every checkpoint equals the initialisation.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub buffer: Option<PathBuf>,
    #[arg(long)]
    pub plan: PathBuf,
    /// Real training pairs; defaults to the data recorded in the buffer manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `plan_manifest.json` written by `distill`.
    #[arg(long, conflicts_with = "coreset", required_unless_present = "coreset")]
    pub subsets: Option<PathBuf>,
    /// random | herding | kcenter
    #[arg(long)]
    pub coreset: Option<String>,
    /// Coreset size.
    #[arg(long, default_value_t = 20)]
    pub size: usize,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Test split; defaults to `<data stem>_test.ptms`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Expert buffer: student architecture and the teacher used by
    /// herding / k-center.
    #[arg(long)]
    pub buffer: Option<PathBuf>,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// cosine | sweep | pca
    #[arg(long)]
    pub mode: String,
    #[arg(long)]
    pub buffer: Option<PathBuf>,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic subset to probe; drawn from `--data` when absent.
    #[arg(long)]
    pub subset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `$PTMS_DATA_DIR`, or the working directory.
pub fn data_root() -> PathBuf {
    std::env::var_os("PTMS_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

pub(crate) fn ensure_dir(dir: &Path) -> crate::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> crate::Result<()> {
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            ensure_dir(p)?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn to_json<T: serde::Serialize>(v: &T) -> crate::Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// `target` relative to `from_dir`, through their common ancestor.
pub(crate) fn relative_path(from_dir: &Path, target: &Path) -> crate::Result<String> {
    let a = from_dir.canonicalize().map_err(|e| Error::io(from_dir, e))?;
    let b = target.canonicalize().map_err(|e| Error::io(target, e))?;
    let ac: Vec<_> = a.components().collect();
    let bc: Vec<_> = b.components().collect();
    let common = ac.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    let mut rel = PathBuf::new();
    for _ in common..ac.len() {
        rel.push("..");
    }
    for c in &bc[common..] {
        rel.push(c);
    }
    Ok(rel.to_string_lossy().into_owned())
}

pub(crate) fn announce(command: &str, cfg: &KvConfig, extra: &[(&str, String)]) {
    let mut s = format!("# ptmst {command}: effective config\n");
    for (k, v) in extra {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s.push_str(&cfg.effective());
    eprint!("{s}");
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => run_gen_data(&a),
        Command::TrainTeacher(a) => run_train_teacher(&a),
        Command::Distill(a) => run_distill(&a),
        Command::Eval(a) => run_eval(&a),
        Command::Analyze(a) => run_analyze(&a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
