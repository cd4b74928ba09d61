use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod render;

#[derive(Parser, Debug)]
#[command(name = "cicmed", version, about = "Changes-in-changes mediation analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate effects with bootstrap standard errors.
    Estimate(EstimateArgs),
    /// Monte Carlo study on a simulated design.
    Simulate(SimulateArgs),
    /// Balance, pre-period, attrition and exclusion-restriction checks.
    Diagnose(DiagnoseArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Tsv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DesignArg {
    Panel,
    #[value(alias = "rcs")]
    CrossSection,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum LinkArg {
    Identity,
    #[value(alias = "exponential")]
    Exp,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum AssignmentArg {
    Random,
    Selective,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// Output file; standard output when absent.
    #[arg(long, env = "CIC_OUTPUT")]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tsv", env = "CIC_FORMAT")]
    pub format: Format,
    /// Worker threads; all cores when absent.
    #[arg(long, env = "CIC_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    #[arg(long, env = "CIC_INPUT")]
    pub input: PathBuf,
    #[arg(long, default_value = "y", env = "CIC_OUTCOME")]
    pub outcome: String,
    #[arg(long, default_value = "d", env = "CIC_TREATMENT")]
    pub treatment: String,
    #[arg(long, default_value = "m", env = "CIC_MEDIATOR")]
    pub mediator: String,
    #[arg(long, default_value = "t", env = "CIC_TIME")]
    pub time: String,
    #[arg(long, default_value = "id", env = "CIC_CLUSTER")]
    pub cluster: String,
    /// Comma-separated covariate columns; outcomes are residualized on them.
    #[arg(long, value_delimiter = ',', env = "CIC_COVARIATES")]
    pub covariates: Vec<String>,
    #[arg(long, value_enum, default_value = "panel", env = "CIC_DESIGN")]
    pub design: DesignArg,
}

#[derive(Args, Debug, Clone)]
pub struct BootstrapArgs {
    /// Bootstrap replications; 0 disables inference.
    #[arg(long, default_value_t = 1999, env = "CIC_BOOTSTRAP")]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 1, env = "CIC_SEED")]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated estimand tags, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all", env = "CIC_EFFECTS")]
    pub effects: Vec<String>,
    /// Comma-separated quantile levels in (0, 1).
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
        env = "CIC_QUANTILES"
    )]
    pub quantiles: Vec<f64>,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    /// Also report the mean-shift difference-in-differences estimates.
    #[arg(long, env = "CIC_DID")]
    pub did: bool,
    #[arg(long, default_value_t = cicmed::cic::DEFAULT_MIN_SHARE, env = "CIC_MIN_SHARE")]
    pub min_share: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "identity", env = "CIC_LINK")]
    pub link: LinkArg,
    #[arg(long, value_enum, default_value = "random", env = "CIC_ASSIGNMENT")]
    pub assignment: AssignmentArg,
    #[arg(long, default_value_t = 4000, env = "CIC_N")]
    pub n: usize,
    #[arg(long, default_value_t = 1000, env = "CIC_REPS")]
    pub reps: usize,
    #[arg(long, default_value_t = 1, env = "CIC_SEED")]
    pub seed: u64,
    /// Units simulated by the truth oracle.
    #[arg(long, default_value_t = 10_000_000, env = "CIC_ORACLE_DRAWS")]
    pub oracle_draws: usize,
    /// Write the first simulated sample to this CSV file.
    #[arg(long, env = "CIC_DUMP_DATA")]
    pub dump_data: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let output = match &cli.command {
        Command::Estimate(a) => a.output.clone(),
        Command::Simulate(a) => a.output.clone(),
        Command::Diagnose(a) => a.output.clone(),
    };
    if let Some(threads) = output.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Estimate(a) => commands::estimate(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Diagnose(a) => commands::diagnose(a),
    };
    match result.and_then(|report| write_output(&output, &report.render(output.format))) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.is_validation() { 2 } else { 3 };
            match output.format {
                Format::Json => println!("{}", render::error_json(&e)),
                Format::Tsv => eprintln!("error [{}]: {e}", e.code()),
            }
            ExitCode::from(code)
        }
    }
}

fn write_output(args: &OutputArgs, text: &str) -> cicmed::Result<()> {
    match &args.output {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}
