//! Precomputed serving bundles and decoder-only top-K queries.
//!
//! A bundle directory holds:
//!
//! - `manifest.json`: format version, run id, decoder, depth, layer weights,
//!   normalization
//! - `users.bin`, `items.bin`: propagated embeddings
//! - `context.bin`: raw context-feature embeddings
//! - `nodes.json`: raw user/item ids and per-user consumed items
//! - `user_vocab.tsv`, `item_vocab.tsv`, `context_vocab.tsv`
//! - `first_order.json` when the model has biases
//!
//! Every file records the run id, and loading fails unless they all agree.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_vocabulary_tsv, write_vocabulary_tsv, AttributedGraph, FeatureVocabulary, FieldKind, InteractionLog};
use crate::decoder::{score_candidates, DecoderKind, FirstOrder, ScoringArtifacts};
use crate::error::{GcmError, Result};
use crate::evaluation::candidates;
use crate::model::{ModelState, PropagationPlan};
use crate::persist::{load_table, save_table, Dtype, TableGroup};
use crate::propagation::{LayerWeights, NormalizationVariant};

pub const BUNDLE_FORMAT: &str = "gcm-bundle";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub version: u32,
    pub run_id: String,
    pub decoder: DecoderKind,
    pub layers: usize,
    pub alphas: LayerWeights,
    pub norm: NormalizationVariant,
    pub graph_context: bool,
    pub biases: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NodesFile {
    run_id: String,
    users: Vec<String>,
    items: Vec<String>,
    consumed: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FirstOrderFile {
    run_id: String,
    first_order: FirstOrder,
}

/// Everything needed to answer queries; holds no graph structure.
#[derive(Debug, Clone)]
pub struct ServingBundle {
    pub manifest: BundleManifest,
    pub artifacts: ScoringArtifacts,
    pub user_ids: IndexMap<String, u32>,
    pub items: Vec<String>,
    pub consumed: Vec<Vec<u32>>,
    pub user_vocab: FeatureVocabulary,
    pub item_vocab: FeatureVocabulary,
    pub context_vocab: FeatureVocabulary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub id: String,
    pub score: f64,
}

impl ServingBundle {
    /// Runs propagation once and packages the result. `log` supplies raw ids
    /// and vocabularies and must share the graph's id space.
    pub fn precompute(model: &ModelState, graph: &AttributedGraph, log: &InteractionLog, run_id: &str) -> Result<Self> {
        if log.n_users() != graph.n_users() || log.n_items() != graph.n_items() {
            return Err(GcmError::contract("log and graph id spaces differ"));
        }
        let plan = PropagationPlan::new(graph, &model.config)?;
        let artifacts = model.scoring_artifacts(&plan)?;
        let c = &model.config;
        Ok(ServingBundle {
            manifest: BundleManifest {
                format: BUNDLE_FORMAT.into(),
                version: BUNDLE_VERSION,
                run_id: run_id.into(),
                decoder: c.decoder,
                layers: c.layers(),
                alphas: c.alphas.clone(),
                norm: c.norm,
                graph_context: c.graph_context,
                biases: c.biases,
            },
            artifacts,
            user_ids: log.users.iter().enumerate().map(|(i, u)| (u.clone(), i as u32)).collect(),
            items: log.items.clone(),
            consumed: (0..graph.n_users()).map(|u| graph.consumed_items(u)).collect(),
            user_vocab: log.vocab.user.clone(),
            item_vocab: log.vocab.item.clone(),
            context_vocab: log.vocab.context.clone(),
        })
    }

    pub fn run_id(&self) -> &str {
        &self.manifest.run_id
    }

    /// Dense ids of the known context features in `context`; unknown fields
    /// and values are skipped.
    pub fn context_ids(&self, context: &BTreeMap<String, String>) -> Vec<u32> {
        let mut ids = Vec::with_capacity(context.len());
        for (field, value) in context {
            match self.context_vocab.id(field, value) {
                Some(id) if !ids.contains(&id) => ids.push(id),
                Some(_) => {}
                None => log::debug!("skipping unknown context {field}={value}"),
            }
        }
        ids
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let run_id = &self.manifest.run_id;
        write_json(&dir.join("manifest.json"), &self.manifest)?;
        let meta = serde_json::json!({
            "run_id": run_id,
            "layers": self.manifest.layers,
            "alphas": self.manifest.alphas,
            "norm": self.manifest.norm,
        });
        save_table(&dir.join("users.bin"), &self.artifacts.users, TableGroup::PropagatedUser, Dtype::F64, &meta)?;
        save_table(&dir.join("items.bin"), &self.artifacts.items, TableGroup::PropagatedItem, Dtype::F64, &meta)?;
        let ctx_meta = serde_json::json!({ "run_id": run_id });
        save_table(&dir.join("context.bin"), &self.artifacts.context, TableGroup::Context, Dtype::F64, &ctx_meta)?;
        let mut users = vec![String::new(); self.user_ids.len()];
        for (raw, &id) in &self.user_ids {
            users[id as usize] = raw.clone();
        }
        write_json(
            &dir.join("nodes.json"),
            &NodesFile {
                run_id: run_id.clone(),
                users,
                items: self.items.clone(),
                consumed: self.consumed.clone(),
            },
        )?;
        let comment = format!("run_id={run_id}");
        for (name, vocab) in [
            ("user_vocab.tsv", &self.user_vocab),
            ("item_vocab.tsv", &self.item_vocab),
            ("context_vocab.tsv", &self.context_vocab),
        ] {
            let mut w = BufWriter::new(File::create(dir.join(name))?);
            write_vocabulary_tsv(vocab, Some(&comment), &mut w)?;
            w.flush()?;
        }
        let fo_path = dir.join("first_order.json");
        match &self.artifacts.first_order {
            Some(fo) => write_json(
                &fo_path,
                &FirstOrderFile {
                    run_id: run_id.clone(),
                    first_order: fo.clone(),
                },
            )?,
            None if fo_path.exists() => fs::remove_file(&fo_path)?,
            None => {}
        }
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| missing(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| GcmError::format(format!("{}: {e}", path.display())))
}

fn missing(path: &Path, e: std::io::Error) -> GcmError {
    if e.kind() == std::io::ErrorKind::NotFound {
        GcmError::format(format!("missing bundle file {}", path.display()))
    } else {
        GcmError::Io(e)
    }
}

fn check_run(expected: &str, found: &str, what: &str) -> Result<()> {
    if expected != found {
        return Err(GcmError::RunIdMismatch {
            expected: expected.into(),
            found: found.into(),
            what: what.into(),
        });
    }
    Ok(())
}

fn table_run_id(meta: &serde_json::Value) -> &str {
    meta.get("run_id").and_then(|v| v.as_str()).unwrap_or("")
}

fn load_vocab(dir: &Path, name: &str, kind: FieldKind, run_id: &str) -> Result<FeatureVocabulary> {
    let path = dir.join(name);
    let f = File::open(&path).map_err(|e| missing(&path, e))?;
    let (vocab, comments) = read_vocabulary_tsv(kind, BufReader::new(f))?;
    let found = comments
        .iter()
        .find_map(|c| c.strip_prefix("run_id="))
        .unwrap_or("");
    check_run(run_id, found, name)?;
    Ok(vocab)
}

/// Loads a bundle directory, verifying format version, shapes and that
/// every file carries the manifest's run id.
pub fn load_bundle(dir: &Path) -> Result<ServingBundle> {
    let manifest: BundleManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.format != BUNDLE_FORMAT || manifest.version != BUNDLE_VERSION {
        return Err(GcmError::format(format!(
            "bundle format {} v{}, expected {BUNDLE_FORMAT} v{BUNDLE_VERSION}",
            manifest.format, manifest.version
        )));
    }
    let run_id = manifest.run_id.clone();
    let table = |name: &str, group: TableGroup| -> Result<crate::linalg::Matrix> {
        let path = dir.join(name);
        if !path.exists() {
            return Err(GcmError::format(format!("missing bundle file {}", path.display())));
        }
        let (m, h) = load_table(&path)?;
        if h.group != group {
            return Err(GcmError::format(format!("{name} holds {:?}, expected {group:?}", h.group)));
        }
        check_run(&run_id, table_run_id(&h.meta), name)?;
        Ok(m)
    };
    let users = table("users.bin", TableGroup::PropagatedUser)?;
    let items = table("items.bin", TableGroup::PropagatedItem)?;
    let context = table("context.bin", TableGroup::Context)?;
    let nodes: NodesFile = read_json(&dir.join("nodes.json"))?;
    check_run(&run_id, &nodes.run_id, "nodes.json")?;
    let user_vocab = load_vocab(dir, "user_vocab.tsv", FieldKind::User, &run_id)?;
    let item_vocab = load_vocab(dir, "item_vocab.tsv", FieldKind::Item, &run_id)?;
    let context_vocab = load_vocab(dir, "context_vocab.tsv", FieldKind::Context, &run_id)?;
    let first_order = if manifest.biases {
        let fo: FirstOrderFile = read_json(&dir.join("first_order.json"))?;
        check_run(&run_id, &fo.run_id, "first_order.json")?;
        Some(fo.first_order)
    } else {
        None
    };

    let d = users.cols();
    if items.cols() != d || context.cols() != d {
        return Err(GcmError::format("bundle tables disagree on dimension"));
    }
    if users.rows() != nodes.users.len()
        || items.rows() != nodes.items.len()
        || nodes.consumed.len() != nodes.users.len()
        || context.rows() != context_vocab.len()
    {
        return Err(GcmError::format("bundle tables disagree with node lists or vocabularies"));
    }
    if nodes
        .consumed
        .iter()
        .flatten()
        .any(|&i| i as usize >= nodes.items.len())
    {
        return Err(GcmError::format("consumed item out of range"));
    }
    Ok(ServingBundle {
        artifacts: ScoringArtifacts {
            decoder: manifest.decoder,
            users,
            items,
            context,
            first_order,
        },
        manifest,
        user_ids: nodes
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i as u32))
            .collect(),
        items: nodes.items,
        consumed: nodes.consumed,
        user_vocab,
        item_vocab,
        context_vocab,
    })
}

/// Top-`k` unconsumed items for a raw user id and context, scored by the
/// decoder alone. Ties go to the lower item id.
pub fn recommend(
    bundle: &ServingBundle,
    user: &str,
    context: &BTreeMap<String, String>,
    k: i64,
) -> Result<Vec<Recommendation>> {
    if k <= 0 {
        return Err(GcmError::param(format!("k must be positive, got {k}")));
    }
    let &uid = bundle
        .user_ids
        .get(user)
        .ok_or_else(|| GcmError::UnknownUser(user.to_string()))?;
    let ctx = bundle.context_ids(context);
    let cands = candidates(bundle.items.len(), &bundle.consumed[uid as usize]);
    let scores = score_candidates(&bundle.artifacts, uid, &cands, &ctx)?;
    let mut order: Vec<(u32, f64)> = cands.into_iter().zip(scores).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.truncate(k as usize);
    Ok(order
        .into_iter()
        .map(|(i, score)| Recommendation {
            id: bundle.items[i as usize].clone(),
            score,
        })
        .collect())
}
