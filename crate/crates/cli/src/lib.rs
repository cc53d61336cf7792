//! Command-line front end for `jackstraw-core`.
//!
//! [`run`] parses arguments, executes one command and returns the process
//! exit code (0 success, 1 I/O, 2 parse, 3 numeric, 4 configuration).

mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use jackstraw_core::NullMode;

pub use config::RunConfig;
pub use error::{exit, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "jackstraw", version, about = "Significance of associations between variables and principal components")]
struct Cli {
    /// JSON file with settings; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "JACKSTRAW_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Thin SVD of the row-centered matrix.
    Pca(PcaArgs),
    /// Permutation significance of each row's association with the top PCs.
    Jackstraw(JackstrawArgs),
    /// Held-out-block variant (a negative control; its p-values are not valid).
    DeleteS(DeleteSArgs),
    /// Write one simulated study.
    Simulate(SimulateArgs),
    /// Score methods on simulated studies by the joint null criterion.
    Evaluate(EvaluateArgs),
    /// One-sided rank-sum test that a gene set has larger scores.
    Enrich(EnrichArgs),
}

#[derive(Debug, Args)]
struct IoArgs {
    /// Input matrix (TSV, or CSV by extension).
    #[arg(short, long)]
    input: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PcaArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Number of components.
    #[arg(short)]
    r: Option<usize>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Number of top components in the model.
    #[arg(short)]
    r: Option<usize>,
    /// Components to test (1-based, comma separated); others are adjusted for.
    #[arg(long, value_delimiter = ',')]
    tested: Option<Vec<usize>>,
    /// Square rotation matrix applied to the components before testing.
    #[arg(long)]
    rotation: Option<PathBuf>,
    /// FDR level used to count significant rows.
    #[arg(long)]
    fdr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Synthetic null rows per iteration (block size for delete-s).
    #[arg(short)]
    s: Option<usize>,
}

#[derive(Debug, Args)]
struct JackstrawArgs {
    #[command(flatten)]
    io: IoArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Number of iterations.
    #[arg(short)]
    b: Option<usize>,
    /// full-permute, residual-permute or residual-bootstrap.
    #[arg(long)]
    null_mode: Option<String>,
    /// Use (count + 1) / (s·B + 1) so no p-value is zero.
    #[arg(long)]
    pseudocount: bool,
    /// Save the null pool here periodically and resume from it.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Iterations between checkpoints.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
struct DeleteSArgs {
    #[command(flatten)]
    io: IoArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario 1-16 or "2pc".
    #[arg(long)]
    scenario: Option<String>,
    /// Index of the study to write.
    #[arg(long)]
    study: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Scenario 1-16 or "2pc".
    #[arg(long, conflicts_with_all = ["all_16", "two_pc"])]
    scenario: Option<String>,
    /// Every scenario of the grid.
    #[arg(long = "all-16", conflicts_with = "two_pc")]
    all_16: bool,
    /// The two-factor scenario (test PC1 adjusting for PC2).
    #[arg(long = "two-pc")]
    two_pc: bool,
    #[arg(long)]
    studies: Option<usize>,
    /// Methods: conventional, jackstraw, delete-s (comma separated).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(short)]
    s: Option<usize>,
    #[arg(short)]
    b: Option<usize>,
    /// Block sizes for delete-s (comma separated).
    #[arg(long, value_delimiter = ',')]
    delete_s: Option<Vec<usize>>,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EnrichArgs {
    /// Two columns: row id and score (higher = stronger association).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Member row ids, one per line.
    #[arg(long)]
    members: Option<PathBuf>,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn flag(on: bool) -> Option<bool> {
    on.then_some(true)
}

impl ModelArgs {
    fn apply(self, cfg: RunConfig) -> RunConfig {
        RunConfig {
            r: self.r,
            tested_pcs: self.tested,
            rotation_path: self.rotation,
            fdr_threshold: self.fdr,
            seed: self.seed,
            s: self.s,
            ..cfg
        }
    }
}

impl IoArgs {
    fn apply(self, cfg: RunConfig) -> RunConfig {
        RunConfig {
            input_path: self.input,
            output_dir: self.output,
            ..cfg
        }
    }
}

impl Command {
    fn into_config(self) -> CliResult<RunConfig> {
        let named = |name: &str| RunConfig {
            command: Some(name.to_string()),
            ..Default::default()
        };
        Ok(match self {
            Command::Pca(a) => RunConfig {
                r: a.r,
                ..a.io.apply(named("pca"))
            },
            Command::Jackstraw(a) => {
                let null_mode = a
                    .null_mode
                    .map(|m| m.parse::<NullMode>())
                    .transpose()
                    .map_err(|e| CliError::Config(e.to_string()))?;
                let base = a.model.apply(a.io.apply(named("jackstraw")));
                RunConfig {
                    b: a.b,
                    null_mode,
                    pseudocount: flag(a.pseudocount),
                    checkpoint_path: a.checkpoint,
                    checkpoint_every: a.checkpoint_every,
                    ..base
                }
            }
            Command::DeleteS(a) => a.model.apply(a.io.apply(named("delete-s"))),
            Command::Simulate(a) => RunConfig {
                scenario: a.scenario,
                study_index: a.study,
                seed: a.seed,
                output_dir: a.output,
                ..named("simulate")
            },
            Command::Evaluate(a) => RunConfig {
                scenario: a.scenario,
                all_16: flag(a.all_16),
                two_pc: flag(a.two_pc),
                studies: a.studies,
                methods: a.methods,
                s: a.s,
                b: a.b,
                delete_s_sizes: a.delete_s,
                seed: a.seed,
                output_dir: a.output,
                ..named("evaluate")
            },
            Command::Enrich(a) => RunConfig {
                scores_path: a.scores,
                members_path: a.members,
                permutations: a.permutations,
                seed: a.seed,
                output_dir: a.output,
                ..named("enrich")
            },
        })
    }
}

/// Runs the command line `args` (including the program name) and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let flags = match cli.command {
        Some(cmd) => cmd.into_config()?,
        None => RunConfig::default(),
    };
    let mut cfg = file.merge(flags);
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    match cfg.threads {
        Some(0) => Err(CliError::Config("threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(|| commands::dispatch(&cfg)),
        None => commands::dispatch(&cfg),
    }
}
