use super::{note_propagation, NormalizationVariant};
use crate::dataset::AttributedGraph;
use crate::encoder::NodeEmbeddings;
use crate::error::{GcmError, Result};
use crate::linalg::{axpy, Matrix};

/// Reference propagation by walking edges.
///
/// Layer `l+1` of user `u` is `Σ_{(i,e) ∈ N_u} c_e (q_i^(l) + v̄_e)` where
/// `c_e` is the user-side coefficient of `norm` and `v̄_e` the pooled
/// context of edge `e` (row `e` of `pooled_edge_contexts`); items are
/// symmetric. Both sides update synchronously from layer `l`. Isolated nodes
/// propagate to zero. With no pooled contexts the message is `q_i^(l)` alone.
///
/// Returns layers `0..=layers`, layer 0 being `init`.
pub fn propagate_edge_list(
    init: &NodeEmbeddings,
    graph: &AttributedGraph,
    pooled_edge_contexts: Option<&Matrix>,
    layers: usize,
    norm: NormalizationVariant,
) -> Result<Vec<NodeEmbeddings>> {
    note_propagation();
    let d = init.dim();
    if init.users.rows() != graph.n_users() || init.items.rows() != graph.n_items() {
        return Err(GcmError::contract(format!(
            "embeddings cover {}x{} nodes, graph has {}x{}",
            init.users.rows(),
            init.items.rows(),
            graph.n_users(),
            graph.n_items()
        )));
    }
    if let Some(ctx) = pooled_edge_contexts {
        if ctx.rows() != graph.edge_count() || ctx.cols() != d {
            return Err(GcmError::Dimension {
                expected: graph.edge_count() * d,
                actual: ctx.rows() * ctx.cols(),
            });
        }
    }

    let mut out = Vec::with_capacity(layers + 1);
    out.push(init.clone());
    for _ in 0..layers {
        let prev = out.last().expect("layer 0");
        let mut next = NodeEmbeddings::zeros(graph.n_users(), graph.n_items(), d);
        let mut msg = vec![0.0; d];
        for u in 0..graph.n_users() {
            let du = graph.user_degree(u);
            let dst = next.users.row_mut(u);
            for &(i, e) in graph.user_neighbors(u) {
                let (cu, _) = norm.edge_coefficients(du, graph.item_degree(i as usize));
                message(&mut msg, prev.items.row(i as usize), pooled_edge_contexts, e);
                axpy(cu, &msg, dst);
            }
        }
        for i in 0..graph.n_items() {
            let di = graph.item_degree(i);
            let dst = next.items.row_mut(i);
            for &(u, e) in graph.item_neighbors(i) {
                let (_, ci) = norm.edge_coefficients(graph.user_degree(u as usize), di);
                message(&mut msg, prev.users.row(u as usize), pooled_edge_contexts, e);
                axpy(ci, &msg, dst);
            }
        }
        out.push(next);
    }
    Ok(out)
}

fn message(buf: &mut [f64], neighbour: &[f64], contexts: Option<&Matrix>, edge: u32) {
    buf.copy_from_slice(neighbour);
    if let Some(ctx) = contexts {
        for (b, c) in buf.iter_mut().zip(ctx.row(edge as usize)) {
            *b += c;
        }
    }
}
