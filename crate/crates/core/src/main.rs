use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use molworld::config::{Ablation, DomainChoice, OracleChoice, RunConfig};
use molworld::domain::{read_seed_graph, synthetic_graph, DomainSpec, OracleSpec};
use molworld::driver::{self, distribution_from_log, effective_oracle, parse_log, replay_metrics, report_to_text};
use molworld::evolve::{evaluate_link_protocol, SplitFractions, TrainParams};
use molworld::metrics::histogram_tsv;
use molworld::rng::Stream;
use molworld::serve::OracleServer;

#[derive(Parser)]
#[command(name = "molworld", version, about = "Reachability-constrained molecule optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimization loop.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// none | random_anchors | random_generator | frozen_graph
        #[arg(long)]
        ablation: Option<String>,
    },
    /// Recompute the metric report from a run log.
    Metrics {
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate the feature link model.
    TrainLink(TrainArgs),
    /// Serve the built-in domain and oracle over the wire protocol.
    ServeOracle(ServeArgs),
    /// Histogram of generated-molecule scores from a run log.
    ExportDist {
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Seed molecules, one per line. A synthetic graph is used when absent.
    #[arg(long)]
    molecules: Option<PathBuf>,
    #[arg(long, requires = "molecules")]
    edges: Option<PathBuf>,
    /// Node count of the synthetic graph.
    #[arg(long, default_value_t = 500)]
    synthetic: usize,
    #[arg(long, default_value = "ABCD")]
    alphabet: String,
    #[arg(long, default_value_t = 8)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    /// Where to write the model.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the evaluation report (JSON); stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Take domain and oracle from a run config.
    #[arg(long, conflicts_with_all = ["target", "nk_k"])]
    config: Option<PathBuf>,
    /// Hidden-target oracle.
    #[arg(long)]
    target: Option<String>,
    /// NK oracle epistasis order.
    #[arg(long)]
    nk_k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    nk_seed: u64,
    #[arg(long, default_value = "ABCD")]
    alphabet: String,
    #[arg(long, default_value_t = 8)]
    length: usize,
    /// Listen on this address instead of stdio.
    #[arg(long)]
    tcp: Option<String>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    // Unreadable or invalid configs are usage errors.
    RunConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, ablation: Option<String>) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = Some(o);
    }
    if let Some(a) = ablation {
        cfg.ablation = Ablation::parse(&a).ok_or_else(|| Failure::Usage(format!("unknown ablation {a:?}")))?;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let outcome = driver::run(&cfg).map_err(runtime)?;
    eprintln!(
        "stopped ({:?}) after {} iterations, {} oracle calls",
        outcome.stop_reason, outcome.state.iteration, outcome.state.budget.used
    );
    print!("{}", report_to_text(&outcome.report));
    Ok(())
}

fn read_log(path: &Path) -> Result<Vec<driver::RunLogRecord>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    parse_log(&text).map_err(runtime)
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let spec = DomainSpec::new(&a.alphabet, a.length).map_err(|e| Failure::Usage(e.to_string()))?;
    let (nodes, edges) = match &a.molecules {
        Some(m) => read_seed_graph(&spec, m, a.edges.as_deref()).map_err(runtime)?,
        None => synthetic_graph(&spec, a.synthetic, &mut Stream::Seeds.rng(a.seed)),
    };
    let mut params = TrainParams::default();
    if let Some(e) = a.epochs {
        params.epochs = e;
    }
    let eval = evaluate_link_protocol(
        &nodes,
        &edges,
        SplitFractions::default(),
        &params,
        &mut Stream::Split.rng(a.seed),
        &mut Stream::Negatives.rng(a.seed),
    )
    .map_err(runtime)?;
    fs::write(&a.out, eval.outcome.model.to_text()).map_err(|e| Failure::Runtime(format!("{}: {e}", a.out.display())))?;
    let report = serde_json::json!({
        "nodes": nodes.len(),
        "edges": edges.len(),
        "final_loss": eval.outcome.epoch_losses.last(),
        "validation": eval.validation,
        "test": eval.test,
    });
    let mut text = serde_json::to_string_pretty(&report).map_err(runtime)?;
    text.push('\n');
    write_or_print(a.report.as_deref(), &text)
}

fn cmd_serve(a: ServeArgs) -> Result<(), Failure> {
    let server = match &a.config {
        Some(path) => {
            let cfg = load_config(path)?;
            match (&cfg.domain, &cfg.oracle) {
                (DomainChoice::Synthetic(spec), OracleChoice::Builtin(o)) => OracleServer {
                    spec: spec.clone(),
                    oracle: effective_oracle(o, cfg.seed),
                },
                _ => return Err(Failure::Usage("serve-oracle needs a synthetic domain and builtin oracle".into())),
            }
        }
        None => {
            let spec = DomainSpec::new(&a.alphabet, a.length).map_err(|e| Failure::Usage(e.to_string()))?;
            let oracle = match (a.target, a.nk_k) {
                (Some(target), None) => OracleSpec::HiddenTarget { target },
                (None, Some(k)) => OracleSpec::NkRugged { k, seed: a.nk_seed },
                (None, None) => OracleSpec::HiddenTarget {
                    target: spec.tokens().iter().cycle().take(spec.length).collect(),
                },
                (Some(_), Some(_)) => return Err(Failure::Usage("--target and --nk-k are exclusive".into())),
            };
            oracle.validate(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
            OracleServer { spec, oracle }
        }
    };
    match a.tcp {
        Some(addr) => {
            let listener = TcpListener::bind(&addr).map_err(|e| Failure::Runtime(format!("{addr}: {e}")))?;
            eprintln!("listening on {}", listener.local_addr().map_err(runtime)?);
            server.serve_tcp(listener).map_err(runtime)
        }
        None => server.serve_stdio().map_err(runtime),
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            ablation,
        } => cmd_run(&config, seed, out, ablation),
        Command::Metrics { log, out } => {
            let report = replay_metrics(&read_log(&log)?).map_err(runtime)?;
            write_or_print(out.as_deref(), &report_to_text(&report))
        }
        Command::TrainLink(a) => cmd_train(a),
        Command::ServeOracle(a) => cmd_serve(a),
        Command::ExportDist { log, out } => {
            let rows = distribution_from_log(&read_log(&log)?).map_err(runtime)?;
            write_or_print(out.as_deref(), &histogram_tsv(&rows))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
