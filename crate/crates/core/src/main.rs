use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use taskrank::pipeline::{
    self, CheckpointStep, Depth, FixtureOptions, Method, PipelineError, PromptSeedPolicy, RunConfig, Workspace,
};
use taskrank::ranking_metrics::SeedPolicy;

#[derive(Parser)]
#[command(name = "taskrank", version, about = "Rank intermediate source tasks for target tasks from soft-prompt weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the config, manifest, transfer table and tensors.
    Validate(RunArgs),
    /// Write one ranking per (target, method).
    Rank(RunArgs),
    /// Rank, then score against the transfer table.
    Eval(RunArgs),
    /// Render a markdown summary of an existing metrics.json.
    Report {
        #[command(flatten)]
        run: RunArgs,
        /// Also write one CSV per target for plotting.
        #[arg(long)]
        plot_data: bool,
    },
    /// Write the synthetic planted-structure workspace.
    ExportFixture {
        #[arg(long)]
        out: PathBuf,
        /// Noise norm as a fraction of each row's norm.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        rows: usize,
        #[arg(long, default_value_t = 768)]
        cols: usize,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON run config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    table: Option<PathBuf>,
    /// Comma-separated method ids.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Checkpoint step, or "latest".
    #[arg(long)]
    step: Option<CheckpointStep>,
    /// Comma-separated k values for Regret@k and best-of-top-k.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// nDCG depth, or "all".
    #[arg(long)]
    p: Option<Depth>,
    /// Monte Carlo trials for the Random method.
    #[arg(long)]
    trials: Option<u64>,
    /// Master seed for the Random method.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Prompt checkpoint seed, or "lowest".
    #[arg(long)]
    prompt_seed: Option<String>,
    /// Transfer-run seed, or "mean".
    #[arg(long)]
    transfer_seed: Option<String>,
    /// Score Max as the mean of both directions.
    #[arg(long)]
    symmetrize_max: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = match (&self.config, &self.manifest, &self.table) {
            (Some(path), ..) => RunConfig::from_file(path)?,
            (None, Some(m), Some(t)) => RunConfig::new(m, t),
            _ => {
                return Err(PipelineError::Validation(vec![pipeline::Diagnostic::new(
                    pipeline::DiagnosticKind::Config,
                    "pass --config, or both --manifest and --table",
                )]))
            }
        };
        if self.config.is_some() {
            if let Some(m) = &self.manifest {
                cfg.manifest_path = m.clone();
            }
            if let Some(t) = &self.table {
                cfg.transfer_table_path = t.clone();
            }
        }
        if let Some(m) = &self.methods {
            cfg.methods = m.clone();
        }
        if let Some(s) = self.step {
            cfg.checkpoint_step = s;
        }
        if let Some(k) = &self.k {
            cfg.k_values = k.clone();
        }
        if let Some(p) = self.p {
            cfg.p = p;
        }
        if let Some(t) = self.trials {
            cfg.monte_carlo_trials = t;
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = &self.prompt_seed {
            cfg.prompt_seed_policy = match s.as_str() {
                "lowest" => PromptSeedPolicy::Lowest,
                n => PromptSeedPolicy::Single(n.parse().map_err(|_| {
                    PipelineError::Validation(vec![pipeline::Diagnostic::new(
                        pipeline::DiagnosticKind::Config,
                        format!("--prompt-seed must be an integer or \"lowest\", got {n:?}"),
                    )])
                })?),
            };
        }
        if let Some(s) = &self.transfer_seed {
            cfg.transfer_seed_policy = match s.as_str() {
                "mean" => SeedPolicy::MeanOverSeeds,
                n => SeedPolicy::SingleSeed(n.parse().map_err(|_| {
                    PipelineError::Validation(vec![pipeline::Diagnostic::new(
                        pipeline::DiagnosticKind::Config,
                        format!("--transfer-seed must be an integer or \"mean\", got {n:?}"),
                    )])
                })?),
            };
        }
        if self.symmetrize_max {
            cfg.max_symmetrize = true;
        }
        Ok(cfg)
    }
}

fn load(run: &RunArgs) -> Result<Workspace, PipelineError> {
    Workspace::load(run.resolve()?)
}

fn execute(command: Command) -> Result<(), PipelineError> {
    let threads = pipeline::threads_from_env()?;
    match command {
        Command::Validate(run) => {
            let ws = pipeline::with_pool(threads, || load(&run))?;
            println!("{}", ws.summary_line());
        }
        Command::Rank(run) => pipeline::with_pool(threads, || {
            let ws = load(&run)?;
            let rankings = pipeline::compute_rankings(&ws)?;
            pipeline::write_rankings(&ws, &rankings, "rank")?;
            eprintln!(
                "wrote {} rankings to {}",
                rankings.len(),
                ws.config.output_dir.join(pipeline::RANKINGS_FILE).display()
            );
            Ok(())
        })?,
        Command::Eval(run) => pipeline::with_pool(threads, || {
            let ws = load(&run)?;
            let rankings = pipeline::compute_rankings(&ws)?;
            let report = pipeline::evaluate(&ws, &rankings)?;
            pipeline::write_bundle(&ws, &rankings, &report, "eval")?;
            eprintln!("wrote evaluation bundle to {}", ws.config.output_dir.display());
            Ok(())
        })?,
        Command::Report { run, plot_data } => {
            let dir = match (&run.config, &run.out) {
                (None, Some(out)) => out.clone(),
                _ => run.resolve()?.output_dir,
            };
            let report = pipeline::read_metrics(&dir)?;
            let text = pipeline::write_report(&dir, &report)?;
            print!("{text}");
            if plot_data {
                let files = pipeline::write_plot_data(&dir, &report)?;
                eprintln!("wrote {} plot data files", files.len());
            }
        }
        Command::ExportFixture {
            out,
            noise,
            seed,
            rows,
            cols,
        } => {
            let summary = pipeline::export_fixture(&FixtureOptions {
                out,
                noise,
                seed,
                rows,
                cols,
            })?;
            println!("{}", summary.config_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let PipelineError::Validation(diags) = &e {
                for d in diags {
                    eprintln!("  {d}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
