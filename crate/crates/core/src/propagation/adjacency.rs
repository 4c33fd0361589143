use super::{note_propagation, ContextNodes, CsrMatrix, NormalizationVariant};
use crate::dataset::AttributedGraph;
use crate::encoder::NodeEmbeddings;
use crate::error::{GcmError, Result};
use crate::linalg::Matrix;

/// Sparse `(N+M+C) × (N+M+C)` propagation operator over stacked
/// `[users; items; context nodes]` rows.
///
/// User and item rows hold the per-edge coefficients of the normalization
/// variant on the item/user column and on the edge's context-node column,
/// summed over parallel edges. User–user and item–item blocks are empty.
/// Context rows are identity rows, so multiplication leaves context
/// embeddings unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub n_users: usize,
    pub n_items: usize,
    pub n_contexts: usize,
    pub matrix: CsrMatrix,
}

impl NormalizedAdjacency {
    pub fn dim(&self) -> usize {
        self.n_users + self.n_items + self.n_contexts
    }

    pub fn item_offset(&self) -> usize {
        self.n_users
    }

    pub fn context_offset(&self) -> usize {
        self.n_users + self.n_items
    }
}

/// Builds the normalized adjacency. `contexts = None` gives the plain
/// user–item operator with no context nodes.
pub fn build_normalized_adjacency(
    graph: &AttributedGraph,
    contexts: Option<&ContextNodes>,
    norm: NormalizationVariant,
) -> Result<NormalizedAdjacency> {
    let n_users = graph.n_users();
    let n_items = graph.n_items();
    let n_contexts = contexts.map_or(0, ContextNodes::len);
    if let Some(c) = contexts {
        if c.edge_node().len() != graph.edge_count() {
            return Err(GcmError::Construction(format!(
                "{} edges but {} context assignments",
                graph.edge_count(),
                c.edge_node().len()
            )));
        }
    }
    let item_base = n_users as u32;
    let ctx_base = (n_users + n_items) as u32;
    let per_edge = if contexts.is_some() { 4 } else { 2 };
    let mut triplets = Vec::with_capacity(graph.edge_count() * per_edge + n_contexts);
    for e in 0..graph.edge_count() {
        let (u, i) = graph.edge_endpoints(e);
        let (cu, ci) = norm.edge_coefficients(
            graph.user_degree(u as usize),
            graph.item_degree(i as usize),
        );
        triplets.push((u, item_base + i, cu));
        triplets.push((item_base + i, u, ci));
        if let Some(c) = contexts {
            let node = ctx_base + c.edge_node()[e];
            triplets.push((u, node, cu));
            triplets.push((item_base + i, node, ci));
        }
    }
    for c in 0..n_contexts as u32 {
        triplets.push((ctx_base + c, ctx_base + c, 1.0));
    }
    let dim = n_users + n_items + n_contexts;
    Ok(NormalizedAdjacency {
        n_users,
        n_items,
        n_contexts,
        matrix: CsrMatrix::from_triplets(dim, dim, triplets)?,
    })
}

/// Stacks `[users; items; context vectors]` into the layer-0 matrix.
pub fn assemble_initial(init: &NodeEmbeddings, context_vectors: Option<&Matrix>) -> Result<Matrix> {
    let mut parts = vec![&init.users, &init.items];
    if let Some(c) = context_vectors {
        parts.push(c);
    }
    Matrix::vstack(&parts)
}

/// `E^(l) = Â E^(l-1)` for `l = 1..=layers`; returns `E^(0)..E^(layers)`.
pub fn propagate_matrix(adj: &NormalizedAdjacency, initial: &Matrix, layers: usize) -> Result<Vec<Matrix>> {
    note_propagation();
    if initial.rows() != adj.dim() {
        return Err(GcmError::Dimension {
            expected: adj.dim(),
            actual: initial.rows(),
        });
    }
    let mut out = Vec::with_capacity(layers + 1);
    out.push(initial.clone());
    for _ in 0..layers {
        let next = adj.matrix.mul_dense(out.last().expect("layer 0"))?;
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_graph, LogBuilder, Schema};

    fn graph(edges: &[(&str, &str, &str)]) -> AttributedGraph {
        let mut b = LogBuilder::new(Schema::new([""; 0], [""; 0], ["c"]));
        for (t, (u, i, c)) in edges.iter().enumerate() {
            b.push(u, &[], i, &[], &[("c", c)], t as i64);
        }
        build_graph(&b.finish())
    }

    #[test]
    fn one_edge_user_row() {
        let g = graph(&[("u", "i", "x")]);
        let ctx = ContextNodes::from_graph(&g);
        let adj = build_normalized_adjacency(&g, Some(&ctx), NormalizationVariant::SqrtSingleSide).unwrap();
        assert_eq!(adj.matrix.to_dense().row(0), &[0.0, 1.0, 1.0]);
        assert_eq!(adj.matrix.to_dense().row(2), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn four_items_give_half() {
        let g = graph(&[("u", "a", "x"), ("u", "b", "x"), ("u", "c", "y"), ("u", "d", "z")]);
        let ctx = ContextNodes::from_graph(&g);
        let adj = build_normalized_adjacency(&g, Some(&ctx), NormalizationVariant::SqrtSingleSide).unwrap();
        let (cols, vals) = adj.matrix.row(0);
        assert_eq!(cols, &[1, 2, 3, 4, 5, 6, 7]);
        // context x is shared by two edges and sums to 2 · 1/2
        assert_eq!(vals, &[0.5, 0.5, 0.5, 0.5, 1.0, 0.5, 0.5]);
    }

    #[test]
    fn no_edges_leaves_identity_context_block() {
        let mut b = LogBuilder::new(Schema::default());
        b.push("u", &[], "i", &[], &[], 0);
        let log = b.finish();
        let g = build_graph(&log.with_records(vec![]));
        let ctx = ContextNodes::new(vec![vec![0]], vec![]).unwrap();
        let adj = build_normalized_adjacency(&g, Some(&ctx), NormalizationVariant::SqrtSingleSide).unwrap();
        let dense = adj.matrix.to_dense();
        assert_eq!(dense.as_slice(), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn missing_assignment_is_an_error() {
        let g = graph(&[("u", "i", "x"), ("u", "j", "x")]);
        let ctx = ContextNodes::new(vec![vec![0]], vec![0]).unwrap();
        assert!(matches!(
            build_normalized_adjacency(&g, Some(&ctx), NormalizationVariant::L1),
            Err(GcmError::Construction(_))
        ));
        assert!(ContextNodes::new(vec![], vec![0]).is_err());
    }

    #[test]
    fn matrix_single_edge_layer() {
        let g = graph(&[("u", "i", "x")]);
        let ctx = ContextNodes::from_graph(&g);
        let adj = build_normalized_adjacency(&g, Some(&ctx), NormalizationVariant::SqrtSingleSide).unwrap();
        let e0 = Matrix::from_vec(3, 2, vec![1.0, 1.0, 2.0, 3.0, 0.5, 0.25]).unwrap();
        let layers = propagate_matrix(&adj, &e0, 2).unwrap();
        assert_eq!(layers[1].row(0), &[2.5, 3.25]);
        assert_eq!(layers[2].row(2), &[0.5, 0.25]);
        assert!(propagate_matrix(&adj, &Matrix::zeros(2, 2), 1).is_err());
    }
}
