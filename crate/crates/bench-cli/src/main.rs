use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crossnet::dataio;
use crossnet_bench::gradcheck::{describe, run_gradcheck};
use crossnet_bench::report::{render_csv, render_table, summarize};
use crossnet_bench::run::{cmd_gen, cmd_train, DEFAULT_RESULTS, MANIFEST_NAME};
use crossnet_bench::{CliError, ExperimentConfig};

/// Experiment harness for CrossNet and its baselines.
#[derive(Parser)]
#[command(name = "crossnet-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/test CSVs and a manifest into a directory.
    Gen(Common),
    /// Train every configured method on every replication and write results.
    Train {
        #[command(flatten)]
        common: Common,
        /// Keep rows already present in the output file.
        #[arg(long)]
        append: bool,
    },
    /// Summarize a results file: mean ± standard error per method and dataset.
    Report {
        results: PathBuf,
        /// Also write the summary as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Aggregate groups whose rows carry different config fingerprints.
        #[arg(long)]
        force: bool,
    },
    /// Check CrossNet gradients against finite differences on a tiny model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Perturb one analytic gradient entry (negative control).
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replications, starting at rep_start.
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated subset of CrossNet,TNet,TARNet,CFRNet.
    #[arg(long)]
    methods: Option<String>,
    /// Replications trained concurrently.
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Extra key=value overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.reps {
            cfg.reps = v;
        }
        if let Some(v) = &self.methods {
            cfg.set("methods", v)?;
        }
        if let Some(v) = self.parallel {
            cfg.parallel = v;
        }
        if let Some(v) = &self.data_dir {
            cfg.data_dir = v.clone();
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(common) => {
            let cfg = common.load()?;
            let dir = cfg
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("synthetic_data"));
            let manifest = cmd_gen(&cfg, &dir)?;
            println!(
                "wrote {} files and {} to {}",
                manifest.len(),
                MANIFEST_NAME,
                dir.display()
            );
            for m in &manifest {
                println!("{} rows={} seed={}", m.file, m.rows, m.seed);
            }
        }
        Command::Train { common, append } => {
            let cfg = common.load()?;
            let out = cfg
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(DEFAULT_RESULTS));
            let rows = cmd_train(&cfg, &out, append)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Report {
            results,
            out,
            force,
        } => {
            let rows = dataio::read_results(&results)?;
            if rows.is_empty() {
                println!("no results in {}: empty report", results.display());
                return Ok(());
            }
            let summary = summarize(&rows, force)?;
            print!("{}", render_table(&summary));
            if let Some(path) = out {
                std::fs::write(&path, render_csv(&summary))
                    .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
            }
        }
        Command::Gradcheck {
            common,
            corrupt_gradient,
        } => {
            let cfg = common.load()?;
            let report = run_gradcheck(&cfg, corrupt_gradient)?;
            let line = describe(&report);
            if !report.passed() {
                return Err(CliError::Gradcheck(line));
            }
            println!("gradcheck passed: {line}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
