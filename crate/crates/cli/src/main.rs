use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rxonset_cli::config::Cutover;
use rxonset_cli::{
    cmd_build_dict, cmd_detect, cmd_evaluate, cmd_fit_params, cmd_infer, cmd_pipeline,
    cmd_simulate, cmd_split, CliError, DetectCohort, PipelineArgs, PipelineConfig, SimulateArgs,
};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "rxonset", version, about = "Treated-phenotype onset inference from prescription streams")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON pipeline config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    prescriptions: Option<PathBuf>,
    #[arg(long, global = true)]
    diagnoses: Option<PathBuf>,
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    #[arg(long, global = true)]
    dict: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    min_prescriptions: Option<usize>,
    #[arg(long, global = true)]
    train_fraction: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated recall tolerances in days.
    #[arg(long, global = true, value_delimiter = ',')]
    deltas: Option<Vec<i32>>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Disable the train/test leakage checks.
    #[arg(long, global = true)]
    no_leakage_guard: bool,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Debug, Clone)]
struct SimOpts {
    /// Bundled scenario name.
    #[arg(long)]
    preset: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    patients: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct EvalOpts {
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long, requires = "cutover_date")]
    cutover_icd: Option<String>,
    #[arg(long, requires = "cutover_icd")]
    cutover_date: Option<String>,
    /// Observation window start (YYYY-MM-DD) for the early-onset fraction.
    #[arg(long)]
    window_start: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CohortArg {
    Train,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort with ground truth.
    Simulate(SimOpts),
    /// Split patients into training and test id lists.
    Split,
    /// Fit per-drug, per-regime Weibull parameters on the training patients.
    FitParams,
    /// Detect drug-level onsets for one cohort.
    Detect {
        #[arg(long, value_enum, default_value = "test")]
        cohort: CohortArg,
        /// Patient id list overriding the cohort's.
        #[arg(long)]
        patients: Option<PathBuf>,
    },
    /// Build the drug-disease dictionary from training onsets.
    BuildDict,
    /// Map test onsets to diseases, with the naive baseline alongside.
    Infer,
    /// Compute evaluation metrics on the test cohort.
    Evaluate(EvalOpts),
    /// Run every stage in order.
    Pipeline {
        /// Simulate this preset into the output directory first.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, requires = "preset")]
        patients: Option<usize>,
        #[arg(long, requires = "test_ids")]
        train_ids: Option<PathBuf>,
        #[arg(long, requires = "train_ids")]
        test_ids: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalOpts,
    },
}

fn build_config(common: &Common) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = &common.$field {
                cfg.$field = Some(v.clone());
            }
        };
    }
    set!(prescriptions);
    set!(diagnoses);
    set!(params);
    set!(dict);
    if let Some(v) = &common.out_dir {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = common.epsilon {
        cfg.detection.epsilon = v;
    }
    if let Some(v) = common.min_prescriptions {
        cfg.detection.min_prescriptions = v;
    }
    if let Some(v) = common.train_fraction {
        cfg.train_fraction = v;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = &common.deltas {
        cfg.deltas = v.clone();
    }
    if common.no_leakage_guard {
        cfg.leakage_guard = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_eval(cfg: &mut PipelineConfig, opts: &EvalOpts) {
    if let Some(p) = &opts.ground_truth {
        cfg.ground_truth = Some(p.clone());
    }
    if let (Some(icd), Some(date)) = (&opts.cutover_icd, &opts.cutover_date) {
        cfg.cutover = Some(Cutover {
            icd: icd.clone(),
            date: date.clone(),
        });
    }
    if let Some(s) = &opts.window_start {
        cfg.window_start = Some(s.clone());
    }
}

fn print<T: Serialize>(value: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = build_config(&cli.common)?;
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(o) => {
            let args = SimulateArgs {
                preset: o.preset,
                scenario: o.scenario,
                patients: o.patients,
                seed: cli.common.seed,
            };
            print(&cmd_simulate(&args, &cfg)?)
        }
        Command::Split => print(&cmd_split(&cfg)?),
        Command::FitParams => {
            let s = cmd_fit_params(&cfg)?;
            print(&serde_json::json!({
                "training_patients": s.training_patients,
                "entries": s.entries,
                "fallbacks": s.fallbacks,
                "label_robustness_r": s.label_robustness.pearson_r,
            }))
        }
        Command::Detect { cohort, patients } => {
            let cohort = match cohort {
                CohortArg::Train => DetectCohort::Train,
                CohortArg::Test => DetectCohort::Test,
            };
            print(&cmd_detect(&cfg, cohort, patients.as_deref())?)
        }
        Command::BuildDict => print(&cmd_build_dict(&cfg)?),
        Command::Infer => print(&cmd_infer(&cfg)?),
        Command::Evaluate(o) => {
            apply_eval(&mut cfg, &o);
            cfg.validate()?;
            print(&cmd_evaluate(&cfg)?)
        }
        Command::Pipeline {
            preset,
            patients,
            train_ids,
            test_ids,
            eval,
        } => {
            apply_eval(&mut cfg, &eval);
            cfg.validate()?;
            let args = PipelineArgs {
                simulate: preset.map(|p| SimulateArgs {
                    preset: Some(p),
                    scenario: None,
                    patients,
                    seed: None,
                }),
                train_ids,
                test_ids,
            };
            print(&cmd_pipeline(&cfg, &args)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
