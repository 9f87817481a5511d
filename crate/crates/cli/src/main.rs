use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csr_cli::config::{parse_key_value, ConfigLayer, ListOrString};
use csr_cli::report::{aggregate, collect_summaries, render_text};
use csr_cli::runner::{run_experiment, write_atomic};
use csr_cli::{CliError, Result};
use csr_core::conformal::{conformal_rank, ConformalCalibration};
use csr_core::dataset::{NoiseProfile, SynthSpec};
use csr_core::generate_synthetic;
use csr_core::Dataset;

#[derive(Parser)]
#[command(
    name = "csr",
    version,
    about = "Conformalized selective regression experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selective regression protocol over one or more seeds.
    Run(Box<RunArgs>),
    /// Aggregate run manifests into a comparison table.
    Report(ReportArgs),
    /// Write a synthetic dataset as CSV.
    Synth(SynthArgs),
    /// Pretty-print a calibration JSON file.
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV input file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target column of the CSV input.
    #[arg(long)]
    target: Option<String>,
    /// Synthetic noise profile instead of a CSV input.
    #[arg(long)]
    synth: Option<String>,
    /// Rows per synthetic draw.
    #[arg(long)]
    synth_n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Model family: linear or gbt.
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated rejectors: csr, knn_variance.
    #[arg(long)]
    rejectors: Option<String>,
    /// Neighbours for the kNN variance rejector.
    #[arg(long)]
    k: Option<usize>,
    /// Seeds as `0..10`, `0..=9` or `1,2,3`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    grid_step: Option<f64>,
    /// Train, calibration and test fractions, comma-separated.
    #[arg(long)]
    fractions: Option<String>,
    /// Model hyperparameter override, repeatable.
    #[arg(long = "hp", value_name = "KEY=VALUE")]
    hp: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Manifest files written by `csr run`.
    #[arg(required = true)]
    manifests: Vec<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    profile: String,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_fractions(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("invalid fractions `{text}`")))?;
    parts
        .try_into()
        .map_err(|_| CliError::Usage(format!("expected three fractions, got `{text}`")))
}

fn flag_layer(args: RunArgs) -> Result<(Option<PathBuf>, ConfigLayer)> {
    let hyperparams = args
        .hp
        .iter()
        .map(|kv| parse_key_value(kv).map(|(k, v)| (k, toml::Value::String(v))))
        .collect::<Result<_>>()?;
    let layer = ConfigLayer {
        data: args.data,
        target: args.target,
        synth: args.synth,
        synth_n: args.synth_n,
        alpha: args.alpha,
        model: args.model,
        rejectors: args.rejectors.map(ListOrString::Text),
        k: args.k,
        seeds: args.seeds.map(ListOrString::Text),
        grid_step: args.grid_step,
        fractions: args.fractions.as_deref().map(parse_fractions).transpose()?,
        out: args.out,
        hyperparams,
    };
    Ok((args.config, layer))
}

fn cmd_run(args: RunArgs) -> Result<i32> {
    let (config_path, flags) = flag_layer(args)?;
    let base = match config_path {
        Some(path) => ConfigLayer::from_toml_file(&path)?,
        None => ConfigLayer::default(),
    };
    let config = base.merge(flags).resolve()?;
    let manifest = run_experiment(&config)?;
    let ok = manifest
        .seeds
        .iter()
        .filter(|s| s.diagnostic.is_none())
        .count();
    for s in manifest.seeds.iter().filter(|s| s.diagnostic.is_some()) {
        eprintln!(
            "seed {} failed: {}",
            s.seed,
            s.diagnostic.as_deref().unwrap_or_default()
        );
    }
    println!(
        "{} of {} seeds completed; manifest at {}",
        ok,
        manifest.seeds.len(),
        config.out.join(csr_cli::runner::MANIFEST_FILE).display()
    );
    Ok(manifest.failure_code().unwrap_or(0))
}

fn cmd_report(args: ReportArgs) -> Result<i32> {
    let summaries = collect_summaries(&args.manifests)?;
    if summaries.is_empty() {
        return Err(CliError::Data(
            "no successful seeds in the given manifests".into(),
        ));
    }
    let report = aggregate(&summaries);
    print!("{}", render_text(&report));
    if let Some(path) = args.json {
        let json =
            serde_json::to_vec_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
        write_atomic(&path, &json)?;
    }
    Ok(0)
}

fn cmd_synth(args: SynthArgs) -> Result<i32> {
    let profile: NoiseProfile = args.profile.parse().map_err(CliError::Config)?;
    let data: Dataset<f64> = generate_synthetic(SynthSpec {
        n: args.n,
        noise_profile: profile,
        seed: args.seed,
    })?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    write_atomic(&args.out, &buf)?;
    Ok(0)
}

fn cmd_inspect(path: &Path) -> Result<i32> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let cal = ConformalCalibration::<f64>::from_json(&text)?;
    println!("alpha        {}", cal.alpha);
    println!("n_cal        {}", cal.n_cal);
    println!("rank         {}", conformal_rank(cal.n_cal, cal.alpha));
    if cal.q_hat.is_finite() {
        println!("q_hat        {}", cal.q_hat.value());
    } else {
        println!("q_hat        infinite (rank exceeds n_cal)");
    }
    if !cal.scores.is_empty() {
        let mut sorted = cal.scores.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        println!(
            "scores       min {}  median {}  max {}",
            sorted[0],
            sorted[n / 2],
            sorted[n - 1]
        );
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(*args),
        Command::Report(args) => cmd_report(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Inspect { path } => cmd_inspect(&path),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
