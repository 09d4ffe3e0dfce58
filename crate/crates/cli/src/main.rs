mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowgn::FlowError;

use commands::{Grid, InfluenceArgs, WalkSource};
use config::{Preset, RunConfig};

#[derive(Parser)]
#[command(name = "flowgn", version, about = "Flow-path graph learning experiments")]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Log more (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print dataset statistics.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        /// Seed for sampled shortest paths on large graphs.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate flow paths and write them as a dump.
    Walks {
        #[arg(long, conflicts_with = "torus", required_unless_present = "torus")]
        dataset: Option<PathBuf>,
        /// Torus grid instead of a dataset, as ROWSxCOLS.
        #[arg(long, value_parser = parse_dims)]
        torus: Option<(usize, usize)>,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigFlags,
    },
    /// Train, evaluate and write checkpoint, report and metrics.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "flowgn-out")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigFlags,
    },
    /// Train over a grid of path length, in-out parameter and depth.
    Sweep {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',')]
        grid_l: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        grid_q: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        grid_k: Vec<usize>,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigFlags,
    },
    /// Compare flow influence on a torus with the exact random walk.
    Influence {
        #[arg(long, default_value_t = 10)]
        rows: usize,
        #[arg(long, default_value_t = 10)]
        cols: usize,
        #[arg(short, long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Debug, Default)]
struct ConfigFlags {
    /// Flat key = value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    path_len: Option<String>,
    #[arg(long)]
    walk_p: Option<String>,
    #[arg(long)]
    walk_q: Option<String>,
    #[arg(long)]
    restarts: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    batch_mode: Option<String>,
    #[arg(long)]
    batch_nodes: Option<String>,
    #[arg(long)]
    resample_per_epoch: bool,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let fields = [
            ("layers", &self.layers),
            ("path_len", &self.path_len),
            ("walk_p", &self.walk_p),
            ("walk_q", &self.walk_q),
            ("restarts", &self.restarts),
            ("hidden", &self.hidden),
            ("lr", &self.lr),
            ("weight_decay", &self.weight_decay),
            ("epochs", &self.epochs),
            ("patience", &self.patience),
            ("seed", &self.seed),
            ("runs", &self.runs),
            ("activation", &self.activation),
            ("batch_mode", &self.batch_mode),
            ("batch_nodes", &self.batch_nodes),
        ];
        let mut out: Vec<(&'static str, String)> = fields
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect();
        if self.resample_per_epoch {
            out.push(("resample_per_epoch", "true".into()));
        }
        out
    }

    fn resolve(&self) -> Result<RunConfig, FlowError> {
        RunConfig::resolve(self.preset, self.config.as_deref(), &self.pairs()).map_err(|e| match e {
            FlowError::Argument(_) => e,
            other => FlowError::Argument(other.to_string()),
        })
    }
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let r = r.parse().map_err(|_| format!("bad row count {r:?}"))?;
    let c = c.parse().map_err(|_| format!("bad column count {c:?}"))?;
    Ok((r, c))
}

fn run(cli: Cli) -> Result<(), FlowError> {
    match cli.command {
        Command::Stats { dataset, seed } => commands::stats(&dataset, seed),
        Command::Walks {
            dataset,
            torus,
            layer,
            out,
            cfg,
        } => {
            let cfg = cfg.resolve()?;
            let source = match (dataset, torus) {
                (Some(d), _) => WalkSource::Dataset(d),
                (None, Some((r, c))) => WalkSource::Torus(r, c),
                (None, None) => unreachable!("clap requires one source"),
            };
            commands::walks(&source, &cfg, layer, &out)
        }
        Command::Train { dataset, out, cfg } => commands::train_cmd(&dataset, &cfg.resolve()?, &out),
        Command::Sweep {
            dataset,
            grid_l,
            grid_q,
            grid_k,
            out,
            cfg,
        } => {
            let grid = Grid {
                l: grid_l,
                q: grid_q,
                k: grid_k,
            };
            commands::sweep(&dataset, &cfg.resolve()?, &grid, &out)
        }
        Command::Influence {
            rows,
            cols,
            k,
            samples,
            seed,
            threshold,
            out,
        } => commands::influence(
            &InfluenceArgs {
                rows,
                cols,
                k,
                samples,
                seed,
                threshold,
            },
            out.as_deref(),
        ),
    }
}

fn exit_code(err: &FlowError) -> u8 {
    match err {
        FlowError::Argument(_) => 1,
        _ => 2,
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
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", cli.jobs);
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
