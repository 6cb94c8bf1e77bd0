//! `lifecycle`: batch front end for review-stream lifecycle analytics.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lifecycle_core::Error as CoreError;

#[derive(Debug, Parser)]
#[command(name = "lifecycle", version, about = "Product lifecycle analytics over review streams")]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Opts {
    /// Reviews in JSON lines.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// `product_id,price` CSV.
    #[arg(long, global = true)]
    pub prices: Option<PathBuf>,
    /// Positive and negative word lists.
    #[arg(long, global = true, num_args = 2, value_names = ["POS", "NEG"])]
    pub lexicon: Option<Vec<PathBuf>>,
    /// `leader_id,competitor_id[,label]` CSV.
    #[arg(long, global = true)]
    pub pairs: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Number of shape clusters.
    #[arg(long, global = true, default_value_t = 4)]
    pub k: usize,
    #[arg(long, global = true, default_value_t = 20)]
    pub window: usize,
    #[arg(long, global = true, default_value_t = 1)]
    pub lag: usize,
    #[arg(long, global = true, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, global = true, default_value_t = 0.9)]
    pub theta: f64,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 7.0)]
    pub min_median_sales: f64,
    #[arg(long, global = true, default_value_t = 1)]
    pub exog_lag: usize,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Validate and summarize a review stream.
    Ingest,
    /// Write the weekly series of every product.
    Series,
    /// Shape-cluster sales profiles and report dominant allied patterns.
    Cluster {
        #[arg(long, default_value_t = 3)]
        k_inner: usize,
    },
    /// Attribute profiles by unverified share and the revenue fit.
    Trust,
    /// Cross-correlation of two series of one product.
    Ccf {
        #[arg(long)]
        product: String,
        #[arg(long, default_value = "sales")]
        x: String,
        #[arg(long, default_value = "helpfulness_avp")]
        y: String,
        #[arg(long, default_value_t = 10)]
        max_lag: usize,
    },
    /// Rolling one-step backtests of every model.
    Forecast,
    /// Competition backtests and event detection over a pair manifest.
    Compete,
    /// Fisher tests of the competition factors against outcomes.
    Factors {
        /// Read "sentiment coefficient > 0" literally.
        #[arg(long)]
        literal_sentiment: bool,
    },
    /// Cross-validated lasso and elastic net on pair features.
    Regress {
        #[arg(long, default_value_t = 3)]
        folds: usize,
    },
    /// Generate a synthetic market.
    Synth {
        /// market, death, survival, undecided or spam.
        #[arg(long, default_value = "market")]
        preset: String,
        /// TOML scenario; takes precedence over --preset.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

const EXIT_INTERNAL: u8 = 1;
const EXIT_CONFIG: u8 = 3;
const EXIT_INPUT: u8 = 4;
const EXIT_PARSE: u8 = 5;
const EXIT_DATA: u8 = 6;
const EXIT_OUTPUT: u8 = 7;

fn categorize(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if cause.is::<output::OutputExists>() {
            return (EXIT_OUTPUT, "output");
        }
        if cause.is::<output::MissingInput>() {
            return (EXIT_INPUT, "input");
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Config(_) | CoreError::InvalidArgument(_) => (EXIT_CONFIG, "config"),
                CoreError::Io { .. } => (EXIT_INPUT, "input"),
                CoreError::Parse(_) => (EXIT_PARSE, "parse"),
                _ => (EXIT_DATA, "data"),
            };
        }
        if cause.is::<std::io::Error>() {
            return (EXIT_OUTPUT, "io");
        }
    }
    (EXIT_INTERNAL, "internal")
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LIFECYCLE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CoreError::Config(format!("LIFECYCLE_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CoreError::Config("LIFECYCLE_THREADS must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| commands::run(&cli.command, &cli.opts));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = categorize(&e);
            eprintln!("error [{kind}]: {e:#}");
            ExitCode::from(code)
        }
    }
}
