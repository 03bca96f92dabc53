use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dftg_core::datamodel::SampleType;
use dftg_core::pipeline::{
    run_analyze, run_diagnose, run_evaluate, run_generate, EvalMode, Overrides, PipelineError, RunConfig,
    DIAGNOSIS_FILE,
};

#[derive(Parser, Debug)]
#[command(name = "dftg", version, about = "Diagnose LVLM hallucinations and generate targeted instruction data")]
struct Cli {
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Caption, extract, ground and diagnose every image in the manifest.
    Diagnose {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Build instruction samples from a diagnosis file.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        /// Diagnosis records (default: <output_dir>/diagnosis.jsonl).
        #[arg(long)]
        diagnosis: Option<PathBuf>,
        /// Detection records (default: next to the diagnosis file).
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Comma-separated sample types.
        #[arg(long, value_delimiter = ',')]
        types: Option<Vec<SampleType>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "max-per-image")]
        max_per_image: Option<usize>,
    },
    /// Compare two hallucination profiles.
    Analyze {
        profile_a: PathBuf,
        profile_b: PathBuf,
        /// Comma-separated depths.
        #[arg(long, value_delimiter = ',')]
        topk: Option<Vec<usize>>,
        #[arg(long = "rbo-p")]
        rbo_p: Option<f64>,
        /// Also write the table as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score yes/no responses.
    Evaluate {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Answer every model call from fixtures.
    #[arg(long)]
    offline: bool,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long = "output-dir")]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Pope,
    Mme,
}

fn load_config(run: &RunArgs, mut overrides: Overrides) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::load(&run.config)?;
    cfg.apply_env(|k| std::env::var(k).ok())?;
    overrides.offline = run.offline.then_some(true);
    overrides.parallelism = run.parallelism;
    overrides.output_dir = run.output_dir.clone();
    cfg.apply_overrides(&overrides);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32, PipelineError> {
    match cli.command {
        Command::Diagnose { run } => {
            let cfg = load_config(&run, Overrides::default())?;
            let summary = run_diagnose(&cfg)?;
            eprintln!("{summary}");
            println!("{}", cfg.output_path(DIAGNOSIS_FILE).display());
            Ok(summary.exit_code())
        }
        Command::Generate { run, diagnosis, detections, types, seed, max_per_image } => {
            let overrides = Overrides {
                seed,
                types: types.map(|t| t.into_iter().collect::<BTreeSet<_>>()),
                max_samples_per_image: max_per_image,
                ..Default::default()
            };
            let cfg = load_config(&run, overrides)?;
            let diagnosis = diagnosis.unwrap_or_else(|| cfg.output_path(DIAGNOSIS_FILE));
            let summary = run_generate(&cfg, &diagnosis, detections.as_deref())?;
            println!("{}", summary.polarity);
            Ok(0)
        }
        Command::Analyze { profile_a, profile_b, topk, rbo_p, report } => {
            let (_, text) = run_analyze(&profile_a, &profile_b, topk.as_deref(), rbo_p, report.as_deref())?;
            print!("{text}");
            Ok(0)
        }
        Command::Evaluate { responses, mode, report } => {
            let mode = match mode {
                Mode::Pope => EvalMode::Pope,
                Mode::Mme => EvalMode::Mme,
            };
            let (_, text) = run_evaluate(Path::new(&responses), mode, report.as_deref())?;
            print!("{text}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
