use std::path::PathBuf;
use std::time::Duration;

use clap::{Parser, Subcommand};

use crate::cache::TraceOptions;
use crate::commands::{self, Output};
use crate::scenario::{run_scenario, ScenarioName, ScenarioOptions};
use crate::session::SessionOptions;
use crate::{CmdResult, Failure};

#[derive(Debug, Parser)]
#[command(name = "dlfctl", version, about = "Manage Datasets in a local session and run end-to-end scenarios")]
pub struct Cli {
    /// Snapshot file holding the session's cluster state.
    #[arg(long, global = true, default_value = "dlf-session.yaml")]
    pub session: PathBuf,
    /// Operator worker threads.
    #[arg(long, global = true, default_value_t = 4)]
    pub workers: usize,
    /// Admit pods whose datasets are not Ready yet.
    #[arg(long, global = true)]
    pub allow_pending_datasets: bool,
    /// Treat every storage probe as successful instead of contacting it.
    #[arg(long, global = true)]
    pub no_probe: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create or update the objects in a manifest file.
    Apply {
        #[arg(short = 'f', long = "filename")]
        file: PathBuf,
    },
    /// Show objects of one kind.
    Get {
        kind: String,
        name: Option<String>,
        #[arg(short, long, default_value = "default")]
        namespace: String,
        #[arg(short, long, value_enum, default_value = "table")]
        output: Output,
    },
    /// Delete one object. Datasets release their claims and secrets first.
    Delete {
        kind: String,
        name: String,
        #[arg(short, long, default_value = "default")]
        namespace: String,
    },
    /// Set a label on a namespace, creating it if needed.
    LabelNamespace { namespace: String, key: String, value: String },
    /// Run a pod manifest through admission.
    Admit {
        #[arg(short = 'f', long = "filename")]
        file: PathBuf,
        #[arg(short, long)]
        namespace: Option<String>,
        /// Print the patch instead of storing the pod.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run an end-to-end scenario and print its report.
    Scenario {
        #[arg(value_enum)]
        name: ScenarioName,
        /// Objects (notebook, tensorboard) or chunks (g1k).
        #[arg(long)]
        scenario_scale: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Cache policy tools.
    #[command(subcommand)]
    Cache(CacheCommand),
}

#[derive(Debug, Subcommand)]
pub enum CacheCommand {
    /// Replay a read trace with and without the cache gateway.
    Run {
        #[arg(long, default_value_t = 20)]
        objects: usize,
        #[arg(long, default_value_t = 3)]
        reuse: usize,
        #[arg(long, default_value_t = 4)]
        latency_ms: u64,
        #[arg(long)]
        capacity_bytes: Option<u64>,
        #[arg(long, default_value_t = 3)]
        threshold: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the statistics of the last recorded run.
    Stats,
}

impl Cli {
    fn session_options(&self) -> SessionOptions {
        SessionOptions {
            path: self.session.clone(),
            workers: self.workers,
            probe: !self.no_probe,
            allow_pending_datasets: self.allow_pending_datasets,
        }
    }
}

/// Executes one command and returns what it prints on success.
pub fn execute(cli: &Cli) -> CmdResult<String> {
    let opts = cli.session_options();
    match &cli.command {
        Command::Apply { file } => commands::apply(&opts, file),
        Command::Get { kind, name, namespace, output } => {
            commands::get(&opts.path, kind, name.as_deref(), namespace, *output)
        }
        Command::Delete { kind, name, namespace } => commands::delete(&opts, kind, name, namespace),
        Command::LabelNamespace { namespace, key, value } => commands::label_namespace(&opts, namespace, key, value),
        Command::Admit { file, namespace, dry_run } => commands::admit_pod(&opts, file, namespace.as_deref(), *dry_run),
        Command::Scenario { name, scenario_scale, seed, report } => {
            let sopts = ScenarioOptions {
                scale: *scenario_scale,
                seed: *seed,
                workers: cli.workers.max(1),
                ..ScenarioOptions::default()
            };
            let r = run_scenario(*name, &sopts);
            let text = r.to_yaml();
            if let Some(path) = report {
                std::fs::write(path, &text).map_err(|e| Failure::user(format!("{}: {e}", path.display())))?;
            }
            if r.passed() {
                Ok(text)
            } else {
                Err(Failure::Assertion(text))
            }
        }
        Command::Cache(CacheCommand::Run { objects, reuse, latency_ms, capacity_bytes, threshold, seed }) => {
            let trace = TraceOptions {
                objects: *objects,
                reuse: *reuse,
                origin_latency: Duration::from_millis(*latency_ms),
                capacity_bytes: *capacity_bytes,
                access_threshold: *threshold,
                seed: *seed,
            };
            commands::cache_run(&opts, &trace)
        }
        Command::Cache(CacheCommand::Stats) => commands::cache_stats(&opts.path),
    }
}
