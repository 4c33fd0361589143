mod commands;
mod config;
mod data;
mod server;

use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gcm::dataset::Schema;
use gcm::serving::load_bundle;
use serde_json::{Map, Value};

use config::{ModelArgs, PathArgs, SynthArgs};

#[derive(Parser)]
#[command(name = "gcm", version, about = "Context-aware graph convolution recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted structure.
    Synth(SynthArgs),
    /// Import a TSV interaction log, filter and split it.
    Ingest {
        /// TSV with `user`, `item`, `ts` and the declared field columns.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        user_fields: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        item_fields: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        context_fields: Vec<String>,
        /// Keep users with at least this many records.
        #[arg(long, default_value_t = 10)]
        k_core: usize,
    },
    /// Train a model and write a checkpoint and metrics log.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        paths: PathArgs,
        /// Evaluate on the test split every n epochs.
        #[arg(long)]
        validate_every: Option<usize>,
        /// Cutoffs for validation metrics, comma-separated.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
    /// All-rank HR@K / NDCG@K of a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        paths: PathArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated cutoffs.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// Break results down by target-item popularity.
        #[arg(long)]
        buckets: bool,
        /// Explicit popularity bucket edges.
        #[arg(long, value_delimiter = ',')]
        bucket_edges: Option<Vec<usize>>,
        /// Also write popularity.dat for plotting.
        #[arg(long)]
        gnuplot: bool,
    },
    /// Train and evaluate a grid of variants on one split.
    Ablate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        paths: PathArgs,
        #[arg(long, value_delimiter = ',')]
        grid_layers: Option<Vec<usize>>,
        /// Comma-separated `on`/`off`.
        #[arg(long, value_delimiter = ',')]
        grid_context: Option<Vec<OnOff>>,
        #[arg(long, value_delimiter = ',')]
        grid_norms: Option<Vec<gcm::propagation::NormalizationVariant>>,
        #[arg(long, value_delimiter = ',')]
        grid_decoders: Option<Vec<gcm::decoder::DecoderKind>>,
    },
    /// Propagate once and write a serving bundle.
    Precompute {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        paths: PathArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time precomputed scoring against per-query propagation.
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        paths: PathArgs,
        /// Trained checkpoint; a freshly initialized model otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        queries: Option<usize>,
        #[arg(long)]
        candidates: Option<usize>,
    },
    /// Answer recommendation queries from a bundle.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Answer one query for this user, print it and exit.
        #[arg(long)]
        user: Option<String>,
        /// Context as comma-separated `field=value` pairs.
        #[arg(long, value_delimiter = ',', requires = "user")]
        context: Vec<String>,
        #[arg(long, default_value_t = 10, requires = "user", allow_negative_numbers = true)]
        k: i64,
    },
}

#[derive(Debug, Clone, Copy)]
struct OnOff(bool);

impl std::str::FromStr for OnOff {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "on" | "true" => Ok(OnOff(true)),
            "off" | "false" => Ok(OnOff(false)),
            _ => Err(format!("expected on or off, got `{s}`")),
        }
    }
}

fn extras(pairs: Vec<(&str, Option<Value>)>) -> Map<String, Value> {
    pairs
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
        .collect()
}

fn to_value<T: serde::Serialize>(v: &Option<T>) -> Result<Option<Value>> {
    v.as_ref().map(serde_json::to_value).transpose().map_err(Into::into)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let out = commands::synth(args.resolve()?)?;
            println!("{}", out.display());
        }
        Command::Ingest {
            input,
            out,
            user_fields,
            item_fields,
            context_fields,
            k_core,
        } => {
            let out = commands::ingest(commands::IngestConfig {
                input,
                out,
                schema: Schema::new(user_fields, item_fields, context_fields),
                k_core,
            })?;
            println!("{}", out.display());
        }
        Command::Train {
            model,
            paths,
            validate_every,
            k,
        } => {
            let cfg = model.resolve(
                &paths,
                extras(vec![
                    ("validate_every", validate_every.map(Into::into)),
                    ("k", to_value(&k)?),
                ]),
            )?;
            let out = commands::train(cfg)?;
            println!("{}", out.display());
        }
        Command::Eval {
            model,
            paths,
            checkpoint,
            k,
            buckets,
            bucket_edges,
            gnuplot,
        } => {
            let cfg = model.resolve(
                &paths,
                extras(vec![
                    ("checkpoint", to_value(&checkpoint)?),
                    ("k", to_value(&k)?),
                    ("buckets", (buckets || bucket_edges.is_some()).then_some(true.into())),
                    ("bucket_edges", to_value(&bucket_edges)?),
                ]),
            )?;
            let (out, report) = commands::eval(cfg, gnuplot)?;
            for (j, k) in report.ks.iter().enumerate() {
                println!("HR@{k} {:.6} NDCG@{k} {:.6}", report.hr[j], report.ndcg[j]);
            }
            println!("{}", out.display());
        }
        Command::Ablate {
            model,
            paths,
            grid_layers,
            grid_context,
            grid_norms,
            grid_decoders,
        } => {
            let ctx = grid_context.map(|v| v.into_iter().map(|o| o.0).collect::<Vec<_>>());
            let cfg = model.resolve(
                &paths,
                extras(vec![
                    ("grid_layers", to_value(&grid_layers)?),
                    ("grid_context", to_value(&ctx)?),
                    ("grid_norms", to_value(&grid_norms)?),
                    ("grid_decoders", to_value(&grid_decoders)?),
                ]),
            )?;
            let out = commands::ablate(cfg)?;
            print!("{}", std::fs::read_to_string(out.join("ablation.csv"))?);
            println!("{}", out.display());
        }
        Command::Precompute {
            model,
            paths,
            checkpoint,
        } => {
            let cfg = model.resolve(&paths, extras(vec![("checkpoint", to_value(&checkpoint)?)]))?;
            let out = commands::precompute(cfg)?;
            println!("{}", out.display());
        }
        Command::Bench {
            model,
            paths,
            checkpoint,
            queries,
            candidates,
        } => {
            let cfg = model.resolve(
                &paths,
                extras(vec![
                    ("checkpoint", to_value(&checkpoint)?),
                    ("queries", queries.map(Into::into)),
                    ("candidates", candidates.map(Into::into)),
                ]),
            )?;
            let (out, report) = commands::bench(cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            println!("{}", out.display());
        }
        Command::Serve {
            bundle,
            host,
            port,
            user,
            context,
            k,
        } => {
            let bundle = load_bundle(&bundle).with_context(|| format!("loading bundle {}", bundle.display()))?;
            match user {
                Some(user) => {
                    let mut ctx = BTreeMap::new();
                    for pair in context {
                        let Some((f, v)) = pair.split_once('=') else {
                            bail!("context entry `{pair}` is not field=value");
                        };
                        ctx.insert(f.to_string(), v.to_string());
                    }
                    let q = server::Query { user, context: ctx, k };
                    let a = server::answer(&bundle, &q)?;
                    println!("{}", serde_json::to_string(&a)?);
                }
                None => server::serve(bundle, SocketAddr::new(host, port))?,
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
