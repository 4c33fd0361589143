//! Context-aware graph convolution over the attributed user–item graph.
//!
//! Two routes compute the same layers. [`propagate_edge_list`] walks edges
//! and adds each edge's pooled context to the neighbour message.
//! [`propagate_matrix`] multiplies a stacked `[users; items; contexts]`
//! embedding matrix by a sparse normalized adjacency. Context rows of that
//! adjacency are identity rows, so context embeddings stay fixed across
//! layers. Layers are finally mixed by convex [`LayerWeights`].

mod adjacency;
mod edge_list;
mod sparse;

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::AttributedGraph;
use crate::encoder::{pool_context, EmbeddingTable, NodeEmbeddings};
use crate::error::{GcmError, Result};
use crate::linalg::Matrix;
use crate::model::{ModelState, PropagationPlan};

pub use adjacency::{assemble_initial, build_normalized_adjacency, propagate_matrix, NormalizedAdjacency};
pub use edge_list::propagate_edge_list;
pub use sparse::CsrMatrix;

thread_local! {
    static PROPAGATION_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of propagation runs started on the current thread.
pub fn propagation_call_count() -> u64 {
    PROPAGATION_CALLS.with(Cell::get)
}

fn note_propagation() {
    PROPAGATION_CALLS.with(|c| c.set(c.get() + 1));
}

/// Per-edge coefficient applied to neighbour messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationVariant {
    /// `1/√|N_u|` on the user side, `1/√|N_i|` on the item side.
    #[default]
    #[serde(alias = "sqrt")]
    SqrtSingleSide,
    /// `1/(√|N_u|·√|N_i|)` on both sides.
    #[serde(alias = "sym")]
    Symmetric,
    /// `1/|N_u|` on the user side, `1/|N_i|` on the item side.
    L1,
}

impl NormalizationVariant {
    pub const ALL: [NormalizationVariant; 3] = [
        NormalizationVariant::SqrtSingleSide,
        NormalizationVariant::Symmetric,
        NormalizationVariant::L1,
    ];

    /// `(user-side, item-side)` coefficient of an edge whose endpoints have
    /// the given degrees. Both degrees are at least 1 for a real edge.
    pub fn edge_coefficients(self, user_degree: usize, item_degree: usize) -> (f64, f64) {
        let du = user_degree as f64;
        let di = item_degree as f64;
        match self {
            NormalizationVariant::SqrtSingleSide => (1.0 / du.sqrt(), 1.0 / di.sqrt()),
            NormalizationVariant::Symmetric => {
                let c = 1.0 / (du.sqrt() * di.sqrt());
                (c, c)
            }
            NormalizationVariant::L1 => (1.0 / du, 1.0 / di),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormalizationVariant::SqrtSingleSide => "sqrt",
            NormalizationVariant::Symmetric => "sym",
            NormalizationVariant::L1 => "l1",
        }
    }
}

impl fmt::Display for NormalizationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormalizationVariant {
    type Err = GcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" | "sqrt_single_side" => Ok(NormalizationVariant::SqrtSingleSide),
            "sym" | "symmetric" => Ok(NormalizationVariant::Symmetric),
            "l1" | "L1" => Ok(NormalizationVariant::L1),
            other => Err(GcmError::param(format!(
                "unknown normalization `{other}` (expected sqrt, sym or l1)"
            ))),
        }
    }
}

/// Convex weights `α_0..α_L` for mixing layer outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LayerWeights(Vec<f64>);

impl LayerWeights {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(GcmError::param("layer weights cannot be empty"));
        }
        if alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(GcmError::param(format!(
                "layer weights must be finite and non-negative: {alphas:?}"
            )));
        }
        let sum: f64 = alphas.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(GcmError::param(format!("layer weights sum to {sum}, not 1")));
        }
        Ok(LayerWeights(alphas))
    }

    /// `1/(L+1)` for each of the `L+1` layers.
    pub fn uniform(layers: usize) -> Self {
        LayerWeights(vec![1.0 / (layers + 1) as f64; layers + 1])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Number of propagation layers `L` (one less than the weight count).
    pub fn layers(&self) -> usize {
        self.0.len() - 1
    }
}

impl TryFrom<Vec<f64>> for LayerWeights {
    type Error = GcmError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        LayerWeights::new(v)
    }
}

impl From<LayerWeights> for Vec<f64> {
    fn from(w: LayerWeights) -> Self {
        w.0
    }
}

/// Context nodes of the matrix form: one per distinct context-feature
/// combination seen on training edges, in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextNodes {
    combos: Vec<Vec<u32>>,
    edge_node: Vec<u32>,
}

impl ContextNodes {
    pub fn from_graph(graph: &AttributedGraph) -> Self {
        let mut index: indexmap::IndexSet<Vec<u32>> = indexmap::IndexSet::new();
        let edge_node = graph
            .edge_contexts()
            .iter()
            .map(|ctx| {
                let mut key = ctx.clone();
                key.sort_unstable();
                index.insert_full(key).0 as u32
            })
            .collect();
        ContextNodes {
            combos: index.into_iter().collect(),
            edge_node,
        }
    }

    /// Explicit assignment, mostly for tests. `edge_node[e]` indexes `combos`.
    pub fn new(combos: Vec<Vec<u32>>, edge_node: Vec<u32>) -> Result<Self> {
        if let Some(&bad) = edge_node.iter().find(|&&n| n as usize >= combos.len()) {
            return Err(GcmError::Construction(format!(
                "edge assigned to context node {bad}, but only {} exist",
                combos.len()
            )));
        }
        Ok(ContextNodes { combos, edge_node })
    }

    pub fn len(&self) -> usize {
        self.combos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combos.is_empty()
    }

    pub fn combos(&self) -> &[Vec<u32>] {
        &self.combos
    }

    pub fn edge_node(&self) -> &[u32] {
        &self.edge_node
    }

    /// `r_c` per node: the mean of the node's context-feature embeddings.
    pub fn vectors(&self, table: &EmbeddingTable) -> Result<Matrix> {
        let mut out = Matrix::zeros(self.combos.len(), table.cols());
        for (n, combo) in self.combos.iter().enumerate() {
            out.row_mut(n).copy_from_slice(&pool_context(combo, table)?);
        }
        Ok(out)
    }
}

/// Final user and item representations after layer combination.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedEmbeddings {
    pub users: Matrix,
    pub items: Matrix,
    /// Per-layer outputs `0..=L`, when requested.
    pub history: Option<Vec<NodeEmbeddings>>,
}

impl PropagatedEmbeddings {
    pub fn dim(&self) -> usize {
        self.users.cols()
    }
}

/// `Σ_l α_l · layer_l`, accumulated in layer order.
pub fn combine_layers(layers: &[NodeEmbeddings], alphas: &LayerWeights) -> Result<PropagatedEmbeddings> {
    if layers.len() != alphas.as_slice().len() {
        return Err(GcmError::Dimension {
            expected: alphas.as_slice().len(),
            actual: layers.len(),
        });
    }
    let first = &layers[0];
    let mut users = Matrix::zeros(first.users.rows(), first.users.cols());
    let mut items = Matrix::zeros(first.items.rows(), first.items.cols());
    for (layer, &a) in layers.iter().zip(alphas.as_slice()) {
        users.add_scaled(a, &layer.users)?;
        items.add_scaled(a, &layer.items)?;
    }
    Ok(PropagatedEmbeddings {
        users,
        items,
        history: None,
    })
}

/// Matrix-form counterpart of [`combine_layers`] over stacked layers.
pub fn combine_matrices(layers: &[Matrix], alphas: &LayerWeights) -> Result<Matrix> {
    if layers.len() != alphas.as_slice().len() {
        return Err(GcmError::Dimension {
            expected: alphas.as_slice().len(),
            actual: layers.len(),
        });
    }
    let mut acc = Matrix::zeros(layers[0].rows(), layers[0].cols());
    for (layer, &a) in layers.iter().zip(alphas.as_slice()) {
        acc.add_scaled(a, layer)?;
    }
    Ok(acc)
}

/// One offline pass of the graph convolution for serving. Runs exactly the
/// computation the trainer uses, so the result is bitwise identical to the
/// embeddings seen during training and evaluation.
pub fn precompute(model: &ModelState, graph: &AttributedGraph) -> Result<PropagatedEmbeddings> {
    let plan = PropagationPlan::new(graph, &model.config)?;
    model.propagate(&plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_weights_validate() {
        assert!(LayerWeights::new(vec![0.5, 0.5]).is_ok());
        assert!(LayerWeights::new(vec![0.5, 0.6]).is_err());
        assert!(LayerWeights::new(vec![1.5, -0.5]).is_err());
        assert!(LayerWeights::new(vec![]).is_err());
        let u = LayerWeights::uniform(2);
        assert_eq!(u.layers(), 2);
        assert!((u.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_weights_deserialize_validated() {
        assert!(serde_json::from_str::<LayerWeights>("[0.25, 0.75]").is_ok());
        assert!(serde_json::from_str::<LayerWeights>("[0.25, 0.25]").is_err());
    }

    #[test]
    fn coefficients_order() {
        // sqrt > sym > l1 when the item side is sparser than the user side
        let (s, _) = NormalizationVariant::SqrtSingleSide.edge_coefficients(9, 4);
        let (y, _) = NormalizationVariant::Symmetric.edge_coefficients(9, 4);
        let (l, _) = NormalizationVariant::L1.edge_coefficients(9, 4);
        assert!(s > y && y > l);
        assert_eq!(s, 1.0 / 3.0);
        assert_eq!(l, 1.0 / 9.0);
    }

    #[test]
    fn parse_variants() {
        for v in NormalizationVariant::ALL {
            assert_eq!(v.as_str().parse::<NormalizationVariant>().unwrap(), v);
        }
        assert!("max".parse::<NormalizationVariant>().is_err());
    }

    fn node(users: &[f64], items: &[f64]) -> NodeEmbeddings {
        NodeEmbeddings {
            users: Matrix::from_vec(users.len(), 1, users.to_vec()).unwrap(),
            items: Matrix::from_vec(items.len(), 1, items.to_vec()).unwrap(),
        }
    }

    #[test]
    fn combine_identity_and_mean() {
        let x = node(&[1.0, 2.0], &[3.0]);
        let y = node(&[3.0, 6.0], &[5.0]);
        let id = combine_layers(std::slice::from_ref(&x), &LayerWeights::uniform(0)).unwrap();
        assert_eq!(id.users, x.users);
        let mean = combine_layers(&[x.clone(), y], &LayerWeights::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert_eq!(mean.users.as_slice(), &[2.0, 4.0]);
        assert_eq!(mean.items.as_slice(), &[4.0]);
        assert!(combine_layers(&[x], &LayerWeights::uniform(1)).is_err());
    }
}
