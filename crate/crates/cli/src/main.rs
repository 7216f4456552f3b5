//! Deterministic experiment runner: every subcommand writes CSV artifacts
//! (plus a manifest echoing the resolved configuration) into the output
//! directory, and `plot` renders the known CSV schemas to SVG.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.
//! Partial outputs are removed when a run fails.

mod config;
mod experiments;
mod plot;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::RunSettings;
use experiments::{Artifacts, RunError};
use plot::PlotKind;

#[derive(Parser)]
#[command(name = "ipmboed", version, about = "IPM-based optimal experimental design experiments")]
struct Cli {
    /// Root seed for every random stream in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (falls back to $IPMBOED_OUT, then the working dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker-pool size; results are identical for every thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Discrepancy metric (repeatable); defaults depend on the experiment.
    #[arg(long = "metric", global = true)]
    metrics: Vec<String>,
    /// Flat key = value config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// A/B allocation: closed-form references plus Monte Carlo tables.
    Abtest,
    /// Preference-threshold utility landscape over the design grid.
    Preference,
    /// Rare-event contamination two-sample experiment.
    Contamination,
    /// Linear-Gaussian benchmark: exact utilities and nested MC EIG.
    LinearGaussian,
    /// Sign-ambiguous benchmark: references, BA bounds, optional ICNN table.
    SignAmbiguous,
    /// Landscape regions and coarse-grid regret on the preference grid.
    Regret,
    /// Numerical checks of the likelihood/prior stability bounds.
    Stability,
    /// Render an experiment CSV to a deterministic SVG.
    Plot {
        /// Input CSV produced by one of the experiments.
        csv: PathBuf,
        /// Plot schema: landscape | contamination | regret.
        #[arg(long)]
        kind: String,
        /// Output SVG path (defaults to the CSV path with .svg).
        #[arg(long)]
        out_file: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Abtest => "abtest",
            Command::Preference => "preference",
            Command::Contamination => "contamination",
            Command::LinearGaussian => "linear-gaussian",
            Command::SignAmbiguous => "sign-ambiguous",
            Command::Regret => "regret",
            Command::Stability => "stability",
            Command::Plot { .. } => "plot",
        }
    }
}

fn resolve_settings(cli: &Cli) -> Result<RunSettings, RunError> {
    let mut settings = RunSettings::default();
    if let Ok(dir) = std::env::var("IPMBOED_OUT") {
        if !dir.is_empty() {
            settings.out_dir = PathBuf::from(dir);
        }
    }
    if let Some(path) = &cli.config {
        let body = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        let map = config::parse_config(&body).map_err(RunError::Config)?;
        settings.apply(&map).map_err(RunError::Config)?;
    }
    if let Some(seed) = cli.seed {
        settings.seed = seed;
    }
    if let Some(out) = &cli.out {
        settings.out_dir = out.clone();
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(RunError::Config("threads must be >= 1".into()));
        }
        settings.threads = threads;
    }
    if !cli.metrics.is_empty() {
        settings.metrics = cli.metrics.clone();
    }
    Ok(settings)
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

fn run_plot(csv: &PathBuf, kind: &str, out_file: &Option<PathBuf>) -> Result<(), RunError> {
    let kind = PlotKind::parse(kind)
        .ok_or_else(|| RunError::Config(format!("unknown plot kind `{kind}`")))?;
    let body = std::fs::read_to_string(csv)
        .map_err(|e| RunError::Config(format!("cannot read {}: {e}", csv.display())))?;
    let svg = plot::render(kind, &body).map_err(RunError::Config)?;
    let target = out_file.clone().unwrap_or_else(|| csv.with_extension("svg"));
    std::fs::write(&target, svg)
        .map_err(|e| RunError::Config(format!("cannot write {}: {e}", target.display())))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), RunError> {
    if let Command::Plot { csv, kind, out_file } = &cli.command {
        return run_plot(csv, kind, out_file);
    }
    let settings = resolve_settings(cli)?;
    let mut artifacts = Artifacts::new(&settings.out_dir)?;
    let start = Instant::now();
    let result = match &cli.command {
        Command::Abtest => experiments::run_abtest(&settings, &mut artifacts),
        Command::Preference => experiments::run_preference(&settings, &mut artifacts),
        Command::Contamination => experiments::run_contamination(&settings, &mut artifacts),
        Command::LinearGaussian => experiments::run_linear_gaussian(&settings, &mut artifacts),
        Command::SignAmbiguous => experiments::run_sign_ambiguous(&settings, &mut artifacts),
        Command::Regret => experiments::run_regret(&settings, &mut artifacts),
        Command::Stability => experiments::run_stability(&settings, &mut artifacts),
        Command::Plot { .. } => unreachable!("handled above"),
    };
    if let Err(e) = result {
        artifacts.remove_partial();
        return Err(e);
    }

    // Manifest: resolved config, source version, artifact list, wall time.
    // Wall time makes the manifest the one file that differs between reruns;
    // the data artifacts themselves are byte-identical.
    let mut manifest = String::new();
    let _ = writeln!(manifest, "experiment = {}", cli.command.name());
    manifest.push_str(&settings.manifest_echo());
    let _ = writeln!(manifest, "version = {}", git_describe());
    for path in artifacts.paths() {
        if let Some(name) = path.file_name() {
            let _ = writeln!(manifest, "artifact = {}", name.to_string_lossy());
        }
    }
    let _ = writeln!(manifest, "wall_seconds = {:.3}", start.elapsed().as_secs_f64());
    artifacts.write("manifest.txt", &manifest)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
