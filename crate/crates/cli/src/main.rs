//! `curefit`: fit the Cox PH mixture cure model to a CSV file, or run a
//! Monte Carlo study.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use curefit_core::{
    analytic_se, bootstrap_se_for, fit, load_csv, run_study, run_study_with_threads, BlockMode,
    CovariateSpec, CureError, EmControl, Preset, SeMethod, SimConfig,
};

use output::{FitOutput, Format};

const EXIT_DATA: u8 = 3;
const EXIT_NONCONVERGENCE: u8 = 4;
const EXIT_STUDY: u8 = 5;

#[derive(Parser, Debug)]
#[command(
    name = "curefit",
    version,
    about = "Semiparametric Cox PH mixture cure model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the model to a CSV file and report estimates, SEs and 95% CIs.
    Fit(FitArgs),
    /// Run a Monte Carlo study and report bias, SE, ESE and coverage.
    Simulate(SimulateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SeArg {
    Analytic,
    Bootstrap,
}

impl From<SeArg> for SeMethod {
    fn from(a: SeArg) -> Self {
        match a {
            SeArg::Analytic => SeMethod::Analytic,
            SeArg::Bootstrap => SeMethod::Bootstrap,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BlockArg {
    Stacked,
    Separate,
}

impl From<BlockArg> for BlockMode {
    fn from(a: BlockArg) -> Self {
        match a {
            BlockArg::Stacked => BlockMode::Stacked,
            BlockArg::Separate => BlockMode::Separate,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PresetArg {
    Cure25,
    Cure50,
    Cure75,
}

impl From<PresetArg> for Preset {
    fn from(a: PresetArg) -> Self {
        match a {
            PresetArg::Cure25 => Preset::Cure25,
            PresetArg::Cure50 => Preset::Cure50,
            PresetArg::Cure75 => Preset::Cure75,
        }
    }
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Progress and diagnostics on stderr.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    time: String,
    #[arg(long)]
    event: String,
    /// Incidence covariates (an intercept is always added).
    #[arg(long, value_delimiter = ',', required = true)]
    incidence: Vec<String>,
    /// Latency covariates.
    #[arg(long, value_delimiter = ',', required = true)]
    latency: Vec<String>,
    /// Columns to mean-center after dropping incomplete rows.
    #[arg(long, value_delimiter = ',')]
    center: Vec<String>,
    #[arg(long, value_enum, default_value = "analytic")]
    se: SeArg,
    #[arg(long)]
    boot_reps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "stacked")]
    block_mode: BlockArg,
    /// Force susceptible survival to zero past the last event time.
    #[arg(long)]
    zero_tail: bool,
    /// TOML file with EM and inner solver settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    em_tol: Option<f64>,
    #[arg(long)]
    em_max_iter: Option<usize>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "cure50")]
    preset: PresetArg,
    /// TOML file with a full study configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shape: Option<f64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    censor_max: Option<f64>,
    #[arg(long, value_enum)]
    se: Option<SeArg>,
    #[arg(long)]
    boot_reps: Option<usize>,
    #[arg(long, value_enum)]
    block_mode: Option<BlockArg>,
    #[arg(long)]
    zero_tail: bool,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "CUREFIT_THREADS")]
    threads: Option<usize>,
    #[command(flatten)]
    out: OutputArgs,
}

fn usage_error(message: String) -> ! {
    Cli::command()
        .error(clap::error::ErrorKind::ArgumentConflict, message)
        .exit()
}

fn exit_code(e: &CureError) -> u8 {
    match e {
        CureError::StudyInstability { .. } => EXIT_STUDY,
        CureError::NonConvergence { .. }
        | CureError::Separation { .. }
        | CureError::MStep { .. }
        | CureError::RankDeficient { .. }
        | CureError::DegenerateRiskSet { .. }
        | CureError::BootstrapInstability { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_DATA,
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CureError> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| CureError::Config(format!("{}: {e}", path.display())))
}

fn emit(text: &str, out: &OutputArgs) -> Result<(), CureError> {
    match &out.output {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_fit(args: &FitArgs) -> Result<u8, CureError> {
    if args.boot_reps.is_some() && args.se != SeArg::Bootstrap {
        usage_error("--boot-reps requires --se bootstrap".into());
    }
    let mut ctrl: EmControl = match &args.config {
        Some(p) => read_toml(p)?,
        None => EmControl::default(),
    };
    ctrl.zero_tail |= args.zero_tail;
    if let Some(t) = args.em_tol {
        ctrl.em_tol = t;
    }
    if let Some(m) = args.em_max_iter {
        ctrl.em_max_iter = m;
    }
    ctrl.validate()?;

    let spec = CovariateSpec {
        time_column: args.time.clone(),
        event_column: args.event.clone(),
        incidence_columns: args.incidence.clone(),
        latency_columns: args.latency.clone(),
        center_columns: args.center.clone(),
    };
    let data = load_csv(&args.input, &spec)?;
    if args.out.verbose > 0 {
        eprintln!(
            "loaded {} subjects ({} events, {} dropped rows)",
            data.n(),
            data.n_events(),
            data.dropped_rows()
        );
    }

    let fitted = fit(&data, &ctrl)?;
    if args.out.verbose > 0 {
        eprintln!(
            "EM {} after {} iterations, final change {:e}",
            if fitted.converged {
                "converged"
            } else {
                "stopped"
            },
            fitted.iterations,
            fitted.change_trace.last().copied().unwrap_or(f64::NAN)
        );
    }
    let inference = match args.se {
        SeArg::Analytic => analytic_se(&fitted, &data, args.block_mode.into()),
        SeArg::Bootstrap => bootstrap_se_for(
            &fitted,
            &data,
            &ctrl,
            args.boot_reps.unwrap_or(500),
            args.seed,
        ),
    };
    let (report, se_error) = match inference {
        Ok(r) => (Some(r), None),
        // a stopped fit is still reported
        Err(e) if !fitted.converged => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let out = FitOutput::new(&args.input, &data, &ctrl, &fitted, report, se_error)?;
    let text = match args.out.format {
        Format::Json => out.to_json(),
        Format::Text => out.to_text(),
    };
    emit(&text, &args.out)?;
    if fitted.converged {
        Ok(0)
    } else {
        eprintln!(
            "error: EM did not converge in {} iterations",
            fitted.iterations
        );
        Ok(EXIT_NONCONVERGENCE)
    }
}

fn sim_config(args: &SimulateArgs) -> Result<SimConfig, CureError> {
    let mut cfg = match &args.config {
        Some(p) => read_toml(p)?,
        None => Preset::from(args.preset).config(),
    };
    macro_rules! set {
        ($field:expr, $value:expr) => {
            if let Some(v) = $value {
                $field = v;
            }
        };
    }
    set!(cfg.n, args.n);
    set!(cfg.reps, args.reps);
    set!(cfg.seed, args.seed);
    set!(cfg.weibull_shape, args.shape);
    set!(cfg.weibull_scale, args.scale);
    set!(cfg.censor_max, args.censor_max);
    set!(cfg.se_method, args.se.map(SeMethod::from));
    set!(cfg.boot_reps, args.boot_reps);
    set!(cfg.block_mode, args.block_mode.map(BlockMode::from));
    cfg.em.zero_tail |= args.zero_tail;
    if args.boot_reps.is_some() && cfg.se_method != SeMethod::Bootstrap {
        usage_error("--boot-reps requires --se bootstrap".into());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_simulate(args: &SimulateArgs) -> Result<u8, CureError> {
    let cfg = sim_config(args)?;
    if args.out.verbose > 0 {
        eprintln!(
            "running {} replications of n = {} (seed {})",
            cfg.reps, cfg.n, cfg.seed
        );
    }
    let summary = match args.threads {
        Some(0) => usage_error("--threads must be at least 1".into()),
        Some(t) => run_study_with_threads(&cfg, t)?,
        None => run_study(&cfg)?,
    };
    let text = match args.out.format {
        Format::Json => output::to_json(&summary),
        Format::Text => curefit_core::format_summary(&summary),
    };
    emit(&text, &args.out)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Simulate(a) => run_simulate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
