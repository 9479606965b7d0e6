//! `pq`: inference client, batch scorer, fixture generator and service launcher.

mod batch;
mod fixture;
mod scorer;
mod serve;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pathquant_core::{AnalyzeOptions, PostprocessParams, Resolution};
use pathquant_server::Config;

use crate::scorer::Scorer;

#[derive(Parser)]
#[command(name = "pq", version, about = "IHC image quantification client and tools")]
struct Cli {
    /// TOML configuration (stain vectors, limits, service settings).
    #[arg(long, global = true, env = "PQ_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score one image and write every returned image next to scoring.json.
    Infer(InferArgs),
    /// Score every image in a directory into a CSV.
    Batch(BatchArgs),
    /// Render a synthetic fixture with known ground truth.
    Fixture(FixtureArgs),
    /// Run the API and web services until interrupted.
    Serve(ServeArgs),
}

#[derive(Args)]
struct EngineArgs {
    /// Server base URL, e.g. http://localhost:8000.
    #[arg(long, env = "PQ_SERVER")]
    server: Option<String>,
    /// Run the pipeline in this process instead of calling a server.
    #[arg(long)]
    local: bool,
    #[arg(long, default_value = "20x")]
    resolution: Resolution,
    #[arg(long)]
    seg_threshold: Option<f64>,
    #[arg(long)]
    size_gate_min: Option<f64>,
    #[arg(long)]
    size_gate_max: Option<f64>,
    #[arg(long)]
    marker_threshold: Option<f64>,
}

#[derive(Args)]
struct InferArgs {
    file: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
    /// Return only the segmentation image.
    #[arg(long)]
    slim: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct BatchArgs {
    dir: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Files scored concurrently.
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
}

#[derive(Args)]
struct FixtureArgs {
    /// JSON fixture spec.
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    spec: Option<PathBuf>,
    /// Random fixture with K cells, P of them positive.
    #[arg(long, num_args = 3, value_names = ["K", "P", "SEED"])]
    random: Option<Vec<u64>>,
    #[arg(long, default_value_t = 1024)]
    width: u32,
    #[arg(long, default_value_t = 1024)]
    height: u32,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    host: Option<std::net::IpAddr>,
    #[arg(long)]
    api_port: Option<u16>,
    #[arg(long)]
    web_port: Option<u16>,
    /// Root directory of the local object store.
    #[arg(long)]
    storage: Option<PathBuf>,
    /// Worker threads shared by both services.
    #[arg(long)]
    pool: Option<usize>,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// A failed command: exit code plus the message for standard error.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn io(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        Self { code: 1, message: format!("{context}: {err}") }
    }

    pub fn pipeline(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    let level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()))
        .with_writer(std::io::stderr)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("pq: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let config = Config::load(cli.config.as_deref()).map_err(|e| Failure::usage(e.to_string()))?;
    match cli.command {
        Command::Infer(args) => infer(&config, args),
        Command::Batch(args) => batch::run(&config, &args),
        Command::Fixture(args) => fixture::run(&config, &args),
        Command::Serve(args) => serve::run(config, args),
    }
}

impl EngineArgs {
    fn params(&self) -> Result<PostprocessParams, Failure> {
        let mut p = PostprocessParams::default();
        if let Some(v) = self.seg_threshold {
            p.seg_threshold = v;
        }
        if let Some(v) = self.size_gate_min {
            p.size_gate_min = v;
        }
        if self.size_gate_max.is_some() {
            p.size_gate_max = self.size_gate_max;
        }
        if let Some(v) = self.marker_threshold {
            p.marker_threshold = v;
        }
        p.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(p)
    }

    fn options(&self, slim: bool) -> Result<AnalyzeOptions, Failure> {
        Ok(AnalyzeOptions { resolution: self.resolution, pil: false, slim, params: self.params()? })
    }

    fn scorer(&self, config: &Config) -> Result<Scorer, Failure> {
        if self.local {
            return Scorer::local(config);
        }
        match &self.server {
            Some(url) => Ok(Scorer::remote(url)),
            None => Err(Failure::usage("pass --server URL, set PQ_SERVER, or use --local")),
        }
    }
}

fn infer(config: &Config, args: InferArgs) -> Outcome {
    let opts = args.engine.options(args.slim)?;
    let scorer = args.engine.scorer(config)?;
    let bytes = std::fs::read(&args.file).map_err(|e| Failure::io(args.file.display(), e))?;
    let scored = scorer.score(&bytes, &opts)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Failure::io(args.out.display(), e))?;
    let stem = args.file.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy());
    for (name, png) in &scored.images {
        write(&args.out.join(format!("{stem}_{name}.png")), png)?;
    }
    let json = scoring_json(&scored.scoring);
    write(&args.out.join("scoring.json"), format!("{json}\n").as_bytes())?;
    println!("{json}");
    Ok(())
}

pub fn scoring_json(q: &pathquant_core::QuantResult) -> String {
    serde_json::to_string_pretty(q).expect("scoring serializes")
}

pub fn write(path: &Path, bytes: &[u8]) -> Outcome {
    std::fs::write(path, bytes).map_err(|e| Failure::io(path.display(), e))
}
