mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};
use nidt_core::eval::render_table;
use nidt_core::pipeline::{self, ModelKind, PipelineConfig, PipelineError};

/// An error plus the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }

    pub fn data(error: anyhow::Error) -> Self {
        Self { code: 2, error }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::data(e.into())
    }
}

const AFTER_HELP: &str = "\
Every configuration field can be set with a flag of its dotted name, e.g.
  --dt.learning_rate 3e-4 --model.K 10 --paths.workdir run1 --policy random
Flags override the --config file, which overrides built-in defaults.
Exit codes: 0 success, 1 usage error, 2 data or validation error.";

#[derive(Parser, Debug)]
#[command(name = "nidt", version, about = "Packet-level intrusion detection with a continuous-time decision transformer", after_help = AFTER_HELP)]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration as JSON before running.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decode `paths.capture` (libpcap or canonical JSONL) into packets.jsonl.
    Ingest,
    /// Generate labeled synthetic traffic into packets.jsonl and ground_truth.csv.
    Synth,
    /// Split flows and train the payload autoencoder.
    TrainAe,
    /// Export payload embeddings for every packet.
    Encode,
    /// Simulate the configured behavior policy on the training flows.
    Sample,
    /// Train a model: dt, bc or dnn.
    Train { model: ModelKind },
    /// Replay the test flows: dt, bc, dnn or behavior.
    Evaluate { model: ModelKind },
    /// Render the results table from every metrics file in the workdir.
    Report {
        /// Also write report.svg.
        #[arg(long)]
        svg: bool,
    },
}

/// Pulls `--dotted.key value` and `--dotted.key=value` pairs out of argv.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), Failure> {
    let keys = config::config_keys();
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !keys.contains(&name) {
            if name.contains('.') {
                return Err(Failure::usage(anyhow!("unknown option `--{name}`")));
            }
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| Failure::usage(anyhow!("option `--{name}` needs a value")))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

fn run() -> Result<(), Failure> {
    let (args, overrides) = split_overrides(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.render().to_string();
            return Err(Failure::usage(anyhow!("{}", msg.trim_start_matches("error: ").trim_end())));
        }
    };
    let cfg = config::load(cli.config.as_deref(), &overrides)?;
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
    }
    cfg.validate()?;
    execute(&cli.command, &cfg)
}

fn execute(command: &Command, cfg: &PipelineConfig) -> Result<(), Failure> {
    match command {
        Command::Ingest => {
            let s = pipeline::run_ingest(cfg)?;
            println!(
                "packets {} decoded {} malformed {} unsupported {} truncated {} flows {} dropped {}",
                s.packets, s.decoded, s.malformed, s.unsupported, s.truncated, s.flows, s.dropped_flows
            );
        }
        Command::Synth => {
            let (packets, flows) = pipeline::run_synth(cfg)?;
            println!("packets {packets} flows {flows}");
        }
        Command::TrainAe => {
            let log = pipeline::run_train_ae(cfg)?;
            println!("autoencoder final loss {}", fmt_loss(log.final_loss));
        }
        Command::Encode => println!("embeddings {}", pipeline::run_encode(cfg)?),
        Command::Sample => {
            let ds = pipeline::run_sample(cfg)?;
            let mean = ds.trajectories.iter().map(|t| t.total_return()).sum::<f64>() / ds.len().max(1) as f64;
            println!("trajectories {} mean return {mean:.6}", ds.len());
        }
        Command::Train { model } => {
            let log = pipeline::run_train(cfg, *model)?;
            println!("{} final loss {}", model.label(), fmt_loss(log.final_loss));
        }
        Command::Evaluate { model } => print!("{}", render_table(&[pipeline::run_evaluate(cfg, *model)?])),
        Command::Report { svg } => print!("{}", pipeline::run_report(&cfg.paths.workdir, *svg)?),
    }
    Ok(())
}

fn fmt_loss(l: Option<f64>) -> String {
    l.map_or("-".into(), |l| format!("{l:.6}"))
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
