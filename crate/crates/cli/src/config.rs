//! Effective configuration: defaults, then a flat JSON file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use gcm::dataset::{PlantedRule, SynthParams};
use gcm::decoder::DecoderKind;
use gcm::propagation::{LayerWeights, NormalizationVariant};
use gcm::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Training and model settings shared by every command that builds a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Cutoffs for HR@K / NDCG@K.
    pub k: Vec<usize>,
    /// Evaluate on the test split after every n-th epoch; 0 disables.
    pub validate_every: usize,
    /// Adds the item-popularity breakdown to `eval`.
    pub buckets: bool,
    /// Bucket edges; quartiles of test-target popularity when unset.
    pub bucket_edges: Option<Vec<usize>>,
    /// `ablate` grid axes.
    pub grid_layers: Vec<usize>,
    pub grid_context: Vec<bool>,
    pub grid_norms: Vec<NormalizationVariant>,
    pub grid_decoders: Vec<DecoderKind>,
    /// `bench` query count and candidates per query.
    pub queries: usize,
    pub candidates: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            data: None,
            checkpoint: None,
            out: None,
            k: vec![10, 50],
            validate_every: 0,
            buckets: false,
            bucket_edges: None,
            grid_layers: vec![0, 1, 2],
            grid_context: vec![true, false],
            grid_norms: NormalizationVariant::ALL.to_vec(),
            grid_decoders: DecoderKind::ALL.to_vec(),
            queries: 50,
            candidates: 1000,
        }
    }
}

impl RunConfig {
    pub fn data(&self) -> Result<&Path> {
        self.data.as_deref().context("no data directory given (--data)")
    }

    pub fn checkpoint(&self) -> Result<&Path> {
        self.checkpoint.as_deref().context("no checkpoint given (--checkpoint)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    #[serde(flatten)]
    pub params: SynthParams,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            params: SynthParams::default(),
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of propagation layers; weights default to uniform.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Comma-separated layer weights `α_0,..,α_L`, summing to 1.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// sqrt, sym or l1.
    #[arg(long)]
    pub norm: Option<NormalizationVariant>,
    /// fm or mf.
    #[arg(long)]
    pub decoder: Option<DecoderKind>,
    /// Drop context nodes from the graph.
    #[arg(long)]
    pub no_context: bool,
    /// Learn a global bias and one bias per feature.
    #[arg(long)]
    pub biases: bool,
    /// Negatives per positive.
    #[arg(long)]
    pub negatives: Option<usize>,
    /// L2 coefficient λ.
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PathArgs {
    /// Dataset directory written by `synth` or `ingest`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for this invocation.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ModelArgs {
    fn overrides(&self) -> Result<Map<String, Value>> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        if let Some(s) = self.seed {
            put("seed", s.into());
        }
        match (&self.alphas, self.layers) {
            (Some(a), Some(l)) if a.len() != l + 1 => {
                bail!("--alphas has {} weights but --layers {l} needs {}", a.len(), l + 1)
            }
            (Some(a), _) => put("alphas", serde_json::to_value(LayerWeights::new(a.clone())?)?),
            (None, Some(l)) => put("alphas", serde_json::to_value(LayerWeights::uniform(l))?),
            (None, None) => {}
        }
        if let Some(n) = self.norm {
            put("norm", serde_json::to_value(n)?);
        }
        if let Some(d) = self.decoder {
            put("decoder", serde_json::to_value(d)?);
        }
        if self.no_context {
            put("graph_context", false.into());
        }
        if self.biases {
            put("biases", true.into());
        }
        if let Some(n) = self.negatives {
            put("negatives_per_positive", n.into());
        }
        if let Some(x) = self.l2 {
            put("l2_lambda", x.into());
        }
        if let Some(x) = self.dim {
            put("dim", x.into());
        }
        if let Some(x) = self.epochs {
            put("epochs", x.into());
        }
        if let Some(x) = self.lr {
            put("learning_rate", x.into());
        }
        if let Some(x) = self.batch_size {
            put("batch_size", x.into());
        }
        if let Some(x) = self.init_scale {
            put("init_scale", x.into());
        }
        Ok(m)
    }

    /// Resolves the run configuration; `extra` carries command-specific
    /// flag values that take precedence over the file.
    pub fn resolve(&self, paths: &PathArgs, mut extra: Map<String, Value>) -> Result<RunConfig> {
        extra.extend(self.overrides()?);
        if let Some(d) = &paths.data {
            extra.insert("data".into(), serde_json::to_value(d)?);
        }
        if let Some(o) = &paths.out {
            extra.insert("out".into(), serde_json::to_value(o)?);
        }
        let cfg: RunConfig = merge(&RunConfig::default(), self.config.as_deref(), extra)?;
        cfg.train.validate()?;
        if cfg.k.is_empty() || cfg.k.contains(&0) {
            bail!("--k values must be positive");
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub context_fields: Option<usize>,
    #[arg(long)]
    pub context_values: Option<usize>,
    #[arg(long)]
    pub records_per_user: Option<usize>,
    /// Fraction of records whose item is drawn uniformly.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Hidden user groups of the planted rule.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Popularity skew inside a planted cell.
    #[arg(long)]
    pub skew: Option<f64>,
    /// No planted structure; items uniform at random.
    #[arg(long, conflicts_with_all = ["groups", "skew"])]
    pub uniform: bool,
    /// Adds uninformative user and item attribute fields.
    #[arg(long)]
    pub side_features: bool,
}

impl SynthArgs {
    pub fn resolve(&self) -> Result<SynthConfig> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("seed", self.seed.map(Into::into));
        put("out", self.out.as_ref().map(|p| p.to_string_lossy().into_owned().into()));
        put("n_users", self.users.map(Into::into));
        put("n_items", self.items.map(Into::into));
        put("n_context_fields", self.context_fields.map(Into::into));
        put("n_context_values", self.context_values.map(Into::into));
        put("records_per_user", self.records_per_user.map(Into::into));
        put("noise_rate", self.noise.map(Into::into));
        put("side_features", self.side_features.then_some(true.into()));
        let mut cfg: SynthConfig = merge(&SynthConfig::default(), self.config.as_deref(), m)?;
        if self.uniform {
            cfg.params.rule = PlantedRule::Uniform;
        } else if self.groups.is_some() || self.skew.is_some() {
            let (g0, s0) = match cfg.params.rule {
                PlantedRule::GroupContext {
                    n_groups,
                    popularity_skew,
                } => (n_groups, popularity_skew),
                PlantedRule::Uniform => match PlantedRule::default() {
                    PlantedRule::GroupContext {
                        n_groups,
                        popularity_skew,
                    } => (n_groups, popularity_skew),
                    PlantedRule::Uniform => unreachable!(),
                },
            };
            cfg.params.rule = PlantedRule::GroupContext {
                n_groups: self.groups.unwrap_or(g0),
                popularity_skew: self.skew.unwrap_or(s0),
            };
        }
        cfg.params.validate()?;
        Ok(cfg)
    }
}

/// `defaults` ← keys of the JSON object in `file` ← `overrides`. Keys that
/// the target type does not know are rejected.
pub fn merge<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<&Path>,
    overrides: Map<String, Value>,
) -> Result<T> {
    let mut value = serde_json::to_value(defaults)?;
    let obj = value.as_object_mut().expect("config serializes to an object");
    let known: Vec<String> = obj.keys().cloned().collect();
    let mut layer = |src: Map<String, Value>, origin: &str| -> Result<()> {
        for (k, v) in src {
            if !known.contains(&k) {
                bail!("unknown config key `{k}` in {origin}");
            }
            obj.insert(k, v);
        }
        Ok(())
    };
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let parsed: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let Value::Object(map) = parsed else {
            bail!("config {} is not a JSON object", path.display());
        };
        layer(map, &path.display().to_string())?;
    }
    layer(overrides, "flags")?;
    serde_json::from_value(value).context("invalid configuration")
}

/// Writes `config.json` with the effective configuration.
pub fn echo<T: Serialize>(dir: &Path, config: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    fs::write(dir.join("config.json"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"dim": 16, "epochs": 7, "norm": "sym", "k": [5]}"#).unwrap();
        let args = ModelArgs {
            config: Some(file),
            epochs: Some(3),
            layers: Some(1),
            ..Default::default()
        };
        let cfg = args.resolve(&PathArgs::default(), Map::new()).unwrap();
        assert_eq!(cfg.train.model.dim, 16);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.model.norm, NormalizationVariant::Symmetric);
        assert_eq!(cfg.train.model.alphas.as_slice(), &[0.5, 0.5]);
        assert_eq!(cfg.k, vec![5]);
        assert_eq!(cfg.train.batch_size, 2048);
    }

    #[test]
    fn unknown_keys_and_bad_alphas_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"dimension": 16}"#).unwrap();
        let args = ModelArgs {
            config: Some(file),
            ..Default::default()
        };
        assert!(args.resolve(&PathArgs::default(), Map::new()).is_err());

        let args = ModelArgs {
            layers: Some(2),
            alphas: Some(vec![0.5, 0.5]),
            ..Default::default()
        };
        assert!(args.resolve(&PathArgs::default(), Map::new()).is_err());
        let args = ModelArgs {
            alphas: Some(vec![0.5, 0.6]),
            ..Default::default()
        };
        assert!(args.resolve(&PathArgs::default(), Map::new()).is_err());
    }

    #[test]
    fn synth_rule_flags() {
        let cfg = SynthArgs {
            groups: Some(4),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(
            cfg.params.rule,
            PlantedRule::GroupContext {
                n_groups: 4,
                popularity_skew: 1.0
            }
        );
        let cfg = SynthArgs {
            uniform: true,
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(cfg.params.rule, PlantedRule::Uniform);
    }
}
