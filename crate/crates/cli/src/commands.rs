use std::fmt::Write as _;
use std::fs::{self, File};
use std::hint::black_box;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gcm::dataset::{apply_user_k_core, generate_synthetic, parse_interaction_log, write_log_tsv, Schema};
use gcm::decoder::score_candidates;
use gcm::encoder::VocabSizes;
use gcm::evaluation::{evaluate, popularity_breakdown, quartile_edges, write_gnuplot_data, write_metrics_csv, MetricsReport};
use gcm::model::{ModelState, PropagationPlan};
use gcm::persist::{load_checkpoint, log_digest, run_id, save_checkpoint, Checkpoint};
use gcm::propagation::LayerWeights;
use gcm::serving::ServingBundle;
use gcm::training::{train as train_model, Trainer, Validation};
use log::info;
use serde::Serialize;

use crate::config::{echo, RunConfig, SynthConfig};
use crate::data::{self, Dataset};

fn run_dir(cfg_out: &Option<PathBuf>, kind: &str, id: &str) -> PathBuf {
    cfg_out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{kind}-{id}")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn synth(cfg: SynthConfig) -> Result<PathBuf> {
    let out = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("data").join(format!("synth-{}", cfg.seed)));
    let log = generate_synthetic(&cfg.params, cfg.seed)?;
    let mut echoed = cfg.clone();
    echoed.out = Some(out.clone());
    echo(&out, &echoed)?;
    let mut w = BufWriter::new(File::create(out.join("interactions.tsv"))?);
    write_log_tsv(&log, &mut w)?;
    w.flush()?;
    let (train, test) = data::write_split(&out, &log)?;
    info!("{} records, {train} train / {test} test", log.len());
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestConfig {
    pub input: PathBuf,
    pub out: PathBuf,
    pub schema: Schema,
    pub k_core: usize,
}

pub fn ingest(cfg: IngestConfig) -> Result<PathBuf> {
    cfg.schema.validate()?;
    let f = File::open(&cfg.input).with_context(|| format!("opening {}", cfg.input.display()))?;
    let log = parse_interaction_log(BufReader::new(f), &cfg.schema)?;
    let before = (log.n_users(), log.len());
    let log = apply_user_k_core(&log, cfg.k_core)?;
    if log.is_empty() {
        bail!("no users left after the {}-core filter", cfg.k_core);
    }
    info!(
        "{}-core: {} -> {} users, {} -> {} records",
        cfg.k_core,
        before.0,
        log.n_users(),
        before.1,
        log.len()
    );
    echo(&cfg.out, &cfg)?;
    data::write_split(&cfg.out, &log)?;
    Ok(cfg.out)
}

pub fn train(cfg: RunConfig) -> Result<PathBuf> {
    let data = data::load(cfg.data()?)?;
    let id = run_id(&cfg.train, &log_digest(&data.train)?)?;
    let out = run_dir(&cfg.out, "train", &id);
    let mut echoed = cfg.clone();
    echoed.out = Some(out.clone());
    echo(&out, &echoed)?;

    let mut metrics = BufWriter::new(File::create(out.join("metrics.jsonl"))?);
    let validation = (cfg.validate_every > 0).then(|| Validation {
        test: &data.test,
        ks: &cfg.k,
        every: cfg.validate_every,
    });
    let mut trainer = Trainer::new(cfg.train.clone(), &data.graph)?;
    info!(
        "training {} on {} edges, run {id}",
        cfg.train.model.label(),
        data.graph.edge_count()
    );
    trainer.run(validation.as_ref(), |m, _| {
        serde_json::to_writer(&mut metrics, m)?;
        metrics.write_all(b"\n")?;
        info!("epoch {} loss {:.6}", m.epoch, m.loss);
        Ok(())
    })?;
    metrics.flush()?;
    save_checkpoint(
        &out.join("checkpoint.bin"),
        &Checkpoint {
            run_id: id,
            config: cfg.train.clone(),
            epoch: trainer.epoch,
            model: trainer.model,
            adam: trainer.adam,
        },
    )?;
    Ok(out)
}

/// Loads a checkpoint and checks that it was trained on `data`.
fn checked_checkpoint(path: &Path, data: &Dataset) -> Result<Checkpoint> {
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let expected = run_id(&ck.config, &log_digest(&data.train)?)?;
    if expected != ck.run_id {
        bail!(
            "checkpoint run {} was not trained on this dataset (expected run {expected})",
            ck.run_id
        );
    }
    Ok(ck)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    run_id: &'a str,
    model: String,
    report: &'a MetricsReport,
}

pub fn eval(cfg: RunConfig, gnuplot: bool) -> Result<(PathBuf, MetricsReport)> {
    let data = data::load(cfg.data()?)?;
    let ck = checked_checkpoint(cfg.checkpoint()?, &data)?;
    let out = run_dir(&cfg.out, "eval", &ck.run_id);
    let mut echoed = cfg.clone();
    echoed.out = Some(out.clone());
    echo(&out, &echoed)?;

    let plan = PropagationPlan::new(&data.graph, &ck.model.config)?;
    let artifacts = ck.model.scoring_artifacts(&plan)?;
    let report = if cfg.buckets {
        let edges = match &cfg.bucket_edges {
            Some(e) => e.clone(),
            None => quartile_edges(&data.test, &data.graph),
        };
        popularity_breakdown(&data.test, &data.graph, &artifacts, &cfg.k, &edges)?
    } else {
        evaluate(&data.test, &data.graph, &artifacts, &cfg.k)?
    };
    let label = ck.model.config.label();
    write_json(
        &out.join("metrics.json"),
        &EvalOutput {
            run_id: &ck.run_id,
            model: label.clone(),
            report: &report,
        },
    )?;
    let rows = [(label, report.clone())];
    let mut csv = BufWriter::new(File::create(out.join("metrics.csv"))?);
    write_metrics_csv(&rows, &mut csv)?;
    csv.flush()?;
    if gnuplot {
        if !cfg.buckets {
            bail!("--gnuplot needs --buckets");
        }
        let mut w = BufWriter::new(File::create(out.join("popularity.dat"))?);
        write_gnuplot_data(&rows, cfg.k[0], &mut w)?;
        w.flush()?;
    }
    Ok((out, report))
}

pub fn ablate(cfg: RunConfig) -> Result<PathBuf> {
    let data = data::load(cfg.data()?)?;
    let id = run_id(&cfg.train, &log_digest(&data.train)?)?;
    let out = run_dir(&cfg.out, "ablate", &id);
    let mut echoed = cfg.clone();
    echoed.out = Some(out.clone());
    echo(&out, &echoed)?;

    let ks = [10, 50];
    let mut csv = String::from("variant,HR@10,NDCG@10,HR@50,NDCG@50\n");
    for &layers in &cfg.grid_layers {
        for &context in &cfg.grid_context {
            for &norm in &cfg.grid_norms {
                for &decoder in &cfg.grid_decoders {
                    let mut tc = cfg.train.clone();
                    tc.model.alphas = LayerWeights::uniform(layers);
                    tc.model.graph_context = context;
                    tc.model.norm = norm;
                    tc.model.decoder = decoder;
                    let name = format!(
                        "{} L={layers} context={} norm={norm} decoder={decoder}",
                        tc.model.label(),
                        if context { "on" } else { "off" }
                    );
                    let t = Instant::now();
                    let model = train_model(&tc, &data.graph)?.model;
                    let plan = PropagationPlan::new(&data.graph, &model.config)?;
                    let rep = evaluate(&data.test, &data.graph, &model.scoring_artifacts(&plan)?, &ks)?;
                    info!(
                        "{name}: HR@10 {:.4} ({:.1}s)",
                        rep.hr[0],
                        t.elapsed().as_secs_f64()
                    );
                    writeln!(
                        csv,
                        "{name},{:.6},{:.6},{:.6},{:.6}",
                        rep.hr[0], rep.ndcg[0], rep.hr[1], rep.ndcg[1]
                    )?;
                }
            }
        }
    }
    fs::write(out.join("ablation.csv"), csv)?;
    Ok(out)
}

pub fn precompute(cfg: RunConfig) -> Result<PathBuf> {
    let data = data::load(cfg.data()?)?;
    let ck = checked_checkpoint(cfg.checkpoint()?, &data)?;
    let out = run_dir(&cfg.out, "bundle", &ck.run_id);
    let bundle = ServingBundle::precompute(&ck.model, &data.graph, &data.train, &ck.run_id)?;
    bundle.write(&out)?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub edges: usize,
    pub users: usize,
    pub items: usize,
    pub layers: usize,
    pub dim: usize,
    pub queries: usize,
    pub candidates: usize,
    pub precompute_ms: f64,
    /// Mean wall time per query with precomputed embeddings.
    pub decoder_ms_per_query: f64,
    /// Mean wall time per query when every query propagates.
    pub propagation_ms_per_query: f64,
    pub ratio: f64,
}

pub fn bench(cfg: RunConfig) -> Result<(PathBuf, BenchReport)> {
    if cfg.queries == 0 || cfg.candidates == 0 {
        bail!("queries and candidates must be positive");
    }
    let data = data::load(cfg.data()?)?;
    let (id, model) = match &cfg.checkpoint {
        Some(path) => {
            let ck = checked_checkpoint(path, &data)?;
            (ck.run_id, ck.model)
        }
        None => {
            let id = run_id(&cfg.train, &log_digest(&data.train)?)?;
            let m = ModelState::init(
                cfg.train.model.clone(),
                VocabSizes::from(&data.graph.features),
                cfg.train.seed,
            )?;
            (id, m)
        }
    };
    let out = run_dir(&cfg.out, "bench", &id);
    let mut echoed = cfg.clone();
    echoed.out = Some(out.clone());
    echo(&out, &echoed)?;

    let g = &data.graph;
    let plan = PropagationPlan::new(g, &model.config)?;
    let cands: Vec<u32> = (0..cfg.candidates).map(|j| (j % g.n_items()) as u32).collect();
    let queries: Vec<(u32, Vec<u32>)> = (0..cfg.queries)
        .map(|q| match data.test.records.get(q % data.test.len().max(1)) {
            Some(r) => (r.user, r.context.clone()),
            None => ((q % g.n_users()) as u32, Vec::new()),
        })
        .collect();

    let t = Instant::now();
    let artifacts = model.scoring_artifacts(&plan)?;
    let precompute_ms = t.elapsed().as_secs_f64() * 1e3;

    // warm both paths once before timing
    black_box(score_candidates(&artifacts, queries[0].0, &cands, &queries[0].1)?);
    let t = Instant::now();
    for (u, ctx) in &queries {
        black_box(score_candidates(&artifacts, *u, &cands, ctx)?);
    }
    let decoder = t.elapsed().as_secs_f64() * 1e3 / cfg.queries as f64;

    let t = Instant::now();
    for (u, ctx) in &queries {
        let fresh = model.scoring_artifacts(&plan)?;
        black_box(score_candidates(&fresh, *u, &cands, ctx)?);
    }
    let propagation = t.elapsed().as_secs_f64() * 1e3 / cfg.queries as f64;

    let report = BenchReport {
        edges: g.edge_count(),
        users: g.n_users(),
        items: g.n_items(),
        layers: model.config.layers(),
        dim: model.config.dim,
        queries: cfg.queries,
        candidates: cfg.candidates,
        precompute_ms,
        decoder_ms_per_query: decoder,
        propagation_ms_per_query: propagation,
        ratio: propagation / decoder,
    };
    write_json(&out.join("bench.json"), &report)?;
    Ok((out, report))
}
