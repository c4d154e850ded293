use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use invsig::ingest::{FillPolicy, DEFAULT_MAX_FILL_GAP};
use invsig::pipeline::service::{self, SimilarResponse};
use invsig::pipeline::{self, BuildConfig, SynthSpec};
use invsig::ranker::{self, RankMode, RankQuery};
use invsig::treelearn::TreeParams;
use invsig::NodeStore;

#[derive(Parser)]
#[command(name = "invsig", version, about = "Find instruments that behave inversely to a given one")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fill {
    Forward,
    Exclude,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Inverse,
    Direct,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Train per-slice trees over a directory of price files and write a store
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 5)]
        h: usize,
        #[arg(long, default_value_t = 1e-4)]
        variance_threshold: f64,
        #[arg(long, default_value_t = 50)]
        max_node_records: usize,
        #[arg(long, default_value_t = 2)]
        min_node: usize,
        #[arg(long, default_value_t = 25)]
        max_depth: usize,
        #[arg(long, value_enum, default_value_t = Fill::Forward)]
        fill: Fill,
        #[arg(long, default_value_t = 0.5)]
        min_presence: f64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Rank instruments against a query symbol
    Query {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        symbol: String,
        #[arg(long, value_enum, default_value_t = Mode::Inverse)]
        mode: Mode,
        #[arg(long, default_value_t = 20)]
        top: usize,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Generate a seeded random-walk universe with planted inverse pairs
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        instruments: usize,
        #[arg(long)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        planted_pairs: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
    },
    /// Serve the JSON API over a store
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Build {
            input,
            store,
            h,
            variance_threshold,
            max_node_records,
            min_node,
            max_depth,
            fill,
            min_presence,
            jobs,
        } => {
            let config = BuildConfig {
                h,
                variance_threshold,
                max_node_records,
                tree: TreeParams {
                    min_node_records: min_node,
                    max_depth,
                    ..TreeParams::default()
                },
                fill: match fill {
                    Fill::Forward => FillPolicy::ForwardFill {
                        max_gap: DEFAULT_MAX_FILL_GAP,
                    },
                    Fill::Exclude => FillPolicy::Exclude,
                },
                min_presence,
                jobs,
                ..BuildConfig::new(input, store)
            };
            let manifest = pipeline::build(&config).context("build failed")?;
            println!(
                "{} instruments, {} days, k_max {}, {} trees, {} nodes, {} records",
                manifest.instrument_count,
                manifest.calendar_days,
                manifest.k_max,
                manifest.trees,
                manifest.total_nodes,
                manifest.total_records
            );
        }
        Command::Query {
            store,
            symbol,
            mode,
            top,
            format,
        } => {
            let store = NodeStore::open(&store).with_context(|| format!("opening store {}", store.display()))?;
            let mode = match mode {
                Mode::Inverse => RankMode::Inverse,
                Mode::Direct => RankMode::Direct,
            };
            if top == 0 {
                bail!("--top must be positive");
            }
            let query = RankQuery::new(symbol.trim().to_ascii_uppercase(), mode).with_top_k(top);
            let list = ranker::rank(&store, &query)?;
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&SimilarResponse::from(&list))?),
                Format::Table => {
                    if list.nodes_visited == 0 {
                        println!("{} appears in no stored node", query.symbol);
                        return Ok(());
                    }
                    println!(
                        "{} matches for {} ({} nodes visited)",
                        mode, query.symbol, list.nodes_visited
                    );
                    println!("{:>4}  {:<12} {:>6}", "rank", "symbol", "score");
                    for e in &list.entries {
                        println!("{:>4}  {:<12} {:>6}", e.rank, e.symbol, e.counter);
                    }
                }
            }
        }
        Command::Synth {
            out,
            seed,
            instruments,
            days,
            planted_pairs,
            noise_sigma,
        } => {
            let spec = SynthSpec {
                noise_sigma,
                ..SynthSpec::new(seed, instruments, days, planted_pairs)
            };
            let truth = pipeline::generate_synthetic(&spec, &out)?;
            println!(
                "wrote {} instruments x {} days to {} ({} planted pairs)",
                instruments,
                days,
                out.display(),
                truth.pairs.len()
            );
        }
        Command::Serve { store, bind } => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(service::serve(&store, &bind))?;
        }
    }
    Ok(())
}
