//! Model configuration, trainable parameters and the forward pass shared by
//! training, evaluation and precomputation.

use serde::{Deserialize, Serialize};

use crate::dataset::{AttributedGraph, NodeFeatures};
use crate::decoder::{score_candidates, DecoderKind, FirstOrder, ItemScorer, ScoringArtifacts};
use crate::encoder::{encode_all, init_embeddings, EmbeddingTables, VocabSizes};
use crate::error::{GcmError, Result};
use crate::linalg::Matrix;
use crate::propagation::{
    assemble_initial, build_normalized_adjacency, combine_matrices, propagate_matrix, ContextNodes,
    CsrMatrix, LayerWeights, NormalizationVariant, NormalizedAdjacency, PropagatedEmbeddings,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    /// Layer mixing weights; their count fixes the depth `L`.
    pub alphas: LayerWeights,
    pub norm: NormalizationVariant,
    pub decoder: DecoderKind,
    /// Carry context messages on graph edges. Off gives the plain
    /// user–item propagation of the context-removed variant.
    pub graph_context: bool,
    /// Train global and per-feature first-order biases.
    pub biases: bool,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            alphas: LayerWeights::uniform(2),
            norm: NormalizationVariant::SqrtSingleSide,
            decoder: DecoderKind::Fm,
            graph_context: true,
            biases: false,
            init_scale: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn layers(&self) -> usize {
        self.alphas.layers()
    }

    /// Short variant label, e.g. `GCM-2`, `GCM-C-1`, `GCM-sym-2`, `GCM-MF-2`.
    pub fn label(&self) -> String {
        if self.decoder == DecoderKind::InnerProduct && self.layers() == 0 {
            return "MF".into();
        }
        let mut s = String::from("GCM");
        if !self.graph_context && self.layers() > 0 {
            s.push_str("-C");
        }
        match self.norm {
            NormalizationVariant::SqrtSingleSide => {}
            NormalizationVariant::Symmetric => s.push_str("-sym"),
            NormalizationVariant::L1 => s.push_str("-L1"),
        }
        if self.decoder == DecoderKind::InnerProduct {
            s.push_str("-MF");
        }
        s.push_str(&format!("-{}", self.layers()));
        s
    }
}

/// First-order parameters, one bias per feature of each field group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasParams {
    pub global: Vec<f64>,
    pub user: Vec<f64>,
    pub item: Vec<f64>,
    pub context: Vec<f64>,
}

/// All trainable parameters. Gradients and optimizer moments reuse this
/// shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub tables: EmbeddingTables,
    pub bias: Option<BiasParams>,
}

impl Parameters {
    pub fn zeros_like(&self) -> Parameters {
        Parameters {
            tables: EmbeddingTables::zeros(self.tables.sizes(), self.tables.dim()),
            bias: self.bias.as_ref().map(|b| BiasParams {
                global: vec![0.0; b.global.len()],
                user: vec![0.0; b.user.len()],
                item: vec![0.0; b.item.len()],
                context: vec![0.0; b.context.len()],
            }),
        }
    }

    /// Flat views in a fixed order: user, item, context tables, then the
    /// global, user, item and context biases when present.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = vec![
            self.tables.user.as_slice(),
            self.tables.item.as_slice(),
            self.tables.context.as_slice(),
        ];
        if let Some(b) = &self.bias {
            v.extend([&b.global[..], &b.user[..], &b.item[..], &b.context[..]]);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![
            self.tables.user.as_mut_slice(),
            self.tables.item.as_mut_slice(),
            self.tables.context.as_mut_slice(),
        ];
        if let Some(b) = &mut self.bias {
            v.extend([
                &mut b.global[..],
                &mut b.user[..],
                &mut b.item[..],
                &mut b.context[..],
            ]);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `‖Θ‖²` over every parameter.
    pub fn sum_squares(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl ModelState {
    pub fn init(config: ModelConfig, sizes: VocabSizes, seed: u64) -> Result<Self> {
        let tables = init_embeddings(sizes, config.dim, seed, config.init_scale)?;
        let bias = config.biases.then(|| BiasParams {
            global: vec![0.0],
            user: vec![0.0; sizes.user],
            item: vec![0.0; sizes.item],
            context: vec![0.0; sizes.context],
        });
        Ok(ModelState {
            config,
            params: Parameters { tables, bias },
        })
    }

    /// Encoder → propagation → layer combination over the whole graph.
    pub fn propagate(&self, plan: &PropagationPlan) -> Result<PropagatedEmbeddings> {
        let stacked = self.propagate_stacked(plan)?;
        let (n, m) = (plan.n_users(), plan.n_items());
        Ok(PropagatedEmbeddings {
            users: stacked.slice_rows(0, n),
            items: stacked.slice_rows(n, n + m),
            history: None,
        })
    }

    /// Combined `[users; items; contexts]` matrix.
    pub(crate) fn propagate_stacked(&self, plan: &PropagationPlan) -> Result<Matrix> {
        if plan.layers != self.config.layers() {
            return Err(GcmError::contract(format!(
                "plan built for {} layers, model has {}",
                plan.layers,
                self.config.layers()
            )));
        }
        let tables = &self.params.tables;
        let init = encode_all(&plan.features, tables)?;
        let ctx_vectors = plan
            .contexts
            .as_ref()
            .map(|c| c.vectors(&tables.context))
            .transpose()?;
        let e0 = assemble_initial(&init, ctx_vectors.as_ref())?;
        let layers = propagate_matrix(&plan.adjacency, &e0, plan.layers)?;
        combine_matrices(&layers, &self.config.alphas)
    }

    /// Summed first-order terms per user and item node.
    pub fn first_order(&self, features: &NodeFeatures) -> Option<FirstOrder> {
        self.params.bias.as_ref().map(|b| FirstOrder {
            global: b.global[0],
            user: features
                .users
                .iter()
                .map(|f| f.iter().map(|&id| b.user[id as usize]).sum())
                .collect(),
            item: features
                .items
                .iter()
                .map(|f| f.iter().map(|&id| b.item[id as usize]).sum())
                .collect(),
            context: b.context.clone(),
        })
    }

    /// Precomputed serving-time artifacts.
    pub fn scoring_artifacts(&self, plan: &PropagationPlan) -> Result<ScoringArtifacts> {
        let prop = self.propagate(plan)?;
        Ok(self.artifacts_from(prop, &plan.features))
    }

    pub fn artifacts_from(&self, prop: PropagatedEmbeddings, features: &NodeFeatures) -> ScoringArtifacts {
        ScoringArtifacts {
            decoder: self.config.decoder,
            users: prop.users,
            items: prop.items,
            context: self.params.tables.context.clone(),
            first_order: self.first_order(features),
        }
    }
}

/// Graph-derived structures that stay fixed while parameters change.
#[derive(Debug, Clone)]
pub struct PropagationPlan {
    pub features: NodeFeatures,
    pub contexts: Option<ContextNodes>,
    pub adjacency: NormalizedAdjacency,
    pub adjacency_t: CsrMatrix,
    pub layers: usize,
}

impl PropagationPlan {
    pub fn new(graph: &AttributedGraph, config: &ModelConfig) -> Result<Self> {
        let contexts = config.graph_context.then(|| ContextNodes::from_graph(graph));
        let adjacency = build_normalized_adjacency(graph, contexts.as_ref(), config.norm)?;
        let adjacency_t = adjacency.matrix.transpose();
        Ok(PropagationPlan {
            features: graph.features.clone(),
            contexts,
            adjacency,
            adjacency_t,
            layers: config.layers(),
        })
    }

    pub fn n_users(&self) -> usize {
        self.adjacency.n_users
    }

    pub fn n_items(&self) -> usize {
        self.adjacency.n_items
    }
}

/// Scores by re-running the full propagation on every call.
pub struct OnTheFlyScorer<'a> {
    pub model: &'a ModelState,
    pub plan: &'a PropagationPlan,
}

impl ItemScorer for OnTheFlyScorer<'_> {
    fn n_users(&self) -> usize {
        self.plan.n_users()
    }

    fn n_items(&self) -> usize {
        self.plan.n_items()
    }

    fn score_items(&self, user: u32, context: &[u32], items: &[u32]) -> Result<Vec<f64>> {
        let artifacts = self.model.scoring_artifacts(self.plan)?;
        score_candidates(&artifacts, user, items, context)
    }
}
