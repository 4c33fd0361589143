mod common;

use gcm::dataset::build_graph;
use gcm::encoder::{encode_all, init_embeddings, pool_context, VocabSizes};
use gcm::linalg::Matrix;
use gcm::model::{ModelConfig, ModelState, PropagationPlan};
use gcm::propagation::{
    assemble_initial, build_normalized_adjacency, precompute, propagate_edge_list, propagate_matrix, ContextNodes,
    LayerWeights, NormalizationVariant,
};
use proptest::prelude::*;

use common::log_from_tuples;

fn norm_strategy() -> impl Strategy<Value = NormalizationVariant> {
    prop_oneof![
        Just(NormalizationVariant::SqrtSingleSide),
        Just(NormalizationVariant::Symmetric),
        Just(NormalizationVariant::L1),
    ]
}

/// Up to 16 users, 16 items and 16 context combinations, at most 200 edges.
fn edges_strategy() -> impl Strategy<Value = Vec<(u8, u8, u8, u8)>> {
    prop::collection::vec((0u8..16, 0u8..16, 0u8..4, 0u8..4), 1..=200)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matrix_form_matches_edge_list(
        edges in edges_strategy(),
        dim in 1usize..=8,
        layers in 0usize..=3,
        norm in norm_strategy(),
        with_context in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let log = log_from_tuples(&edges);
        let g = build_graph(&log);
        let sizes = VocabSizes::from(&g.features);
        let tables = init_embeddings(sizes, dim, seed, 1.0).unwrap();
        let init = encode_all(&g.features, &tables).unwrap();

        let pooled = if with_context {
            let mut m = Matrix::zeros(g.edge_count(), dim);
            for e in 0..g.edge_count() {
                m.row_mut(e).copy_from_slice(&pool_context(g.edge_context(e), &tables.context).unwrap());
            }
            Some(m)
        } else {
            None
        };
        let reference = propagate_edge_list(&init, &g, pooled.as_ref(), layers, norm).unwrap();

        let nodes = ContextNodes::from_graph(&g);
        let ctx_vectors = nodes.vectors(&tables.context).unwrap();
        let adj = build_normalized_adjacency(&g, with_context.then_some(&nodes), norm).unwrap();
        let e0 = assemble_initial(&init, with_context.then_some(&ctx_vectors)).unwrap();
        let stacked = propagate_matrix(&adj, &e0, layers).unwrap();

        prop_assert!(g.n_users() + g.n_items() + nodes.len() <= 48);
        prop_assert_eq!(stacked.len(), layers + 1);
        let (nu, ni) = (g.n_users(), g.n_items());
        for (l, (m, r)) in stacked.iter().zip(&reference).enumerate() {
            let users = m.slice_rows(0, nu);
            let items = m.slice_rows(nu, nu + ni);
            let diff = users.max_abs_diff(&r.users).max(items.max_abs_diff(&r.items));
            prop_assert!(diff < 1e-10, "layer {l}: {diff}");
            if with_context {
                let ctx = m.slice_rows(nu + ni, m.rows());
                prop_assert_eq!(ctx.max_abs_diff(&ctx_vectors), 0.0);
            }
        }
    }

    #[test]
    fn propagation_is_linear_in_the_initial_embeddings(
        edges in edges_strategy(),
        layers in 0usize..=3,
        norm in norm_strategy(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let g = build_graph(&log_from_tuples(&edges));
        let nodes = ContextNodes::from_graph(&g);
        let adj = build_normalized_adjacency(&g, Some(&nodes), norm).unwrap();
        let sizes = VocabSizes::from(&g.features);
        let x = init_embeddings(sizes, 3, seed, 1.0).unwrap();
        let y = init_embeddings(sizes, 3, seed.wrapping_add(1), 1.0).unwrap();
        let stack = |t: &gcm::encoder::EmbeddingTables| {
            let init = encode_all(&g.features, t).unwrap();
            assemble_initial(&init, Some(&nodes.vectors(&t.context).unwrap())).unwrap()
        };
        let (ex, ey) = (stack(&x), stack(&y));
        let mut mix = ex.clone();
        mix.scale(a);
        mix.add_scaled(b, &ey).unwrap();
        let px = propagate_matrix(&adj, &ex, layers).unwrap();
        let py = propagate_matrix(&adj, &ey, layers).unwrap();
        let pm = propagate_matrix(&adj, &mix, layers).unwrap();
        let mut expect = px[layers].clone();
        expect.scale(a);
        expect.add_scaled(b, &py[layers]).unwrap();
        prop_assert!(pm[layers].max_abs_diff(&expect) < 1e-9);
    }

    #[test]
    fn relabeling_users_permutes_the_output(
        edges in edges_strategy(),
        layers in 1usize..=3,
        norm in norm_strategy(),
    ) {
        // reversing the record order changes first-seen ids but not the graph
        let log = log_from_tuples(&edges);
        let mut reversed: Vec<_> = edges.clone();
        reversed.reverse();
        let log_r = log_from_tuples(&reversed);
        let run = |log: &gcm::dataset::InteractionLog| {
            let g = build_graph(log);
            let cfg = ModelConfig {
                dim: 3,
                alphas: LayerWeights::uniform(layers),
                norm,
                ..ModelConfig::default()
            };
            let mut m = ModelState::init(cfg, VocabSizes::from(&g.features), 0).unwrap();
            // embeddings keyed by raw feature name so both runs agree
            for (id, field, value) in log.vocab.user.iter() {
                fill(m.params.tables.user.row_mut(id as usize), field, value);
            }
            for (id, field, value) in log.vocab.item.iter() {
                fill(m.params.tables.item.row_mut(id as usize), field, value);
            }
            for (id, field, value) in log.vocab.context.iter() {
                fill(m.params.tables.context.row_mut(id as usize), field, value);
            }
            let plan = PropagationPlan::new(&g, &m.config).unwrap();
            m.propagate(&plan).unwrap()
        };
        let (p, q) = (run(&log), run(&log_r));
        for (u, raw) in log.users.iter().enumerate() {
            let v = log_r.users.iter().position(|r| r == raw).unwrap();
            for (x, y) in p.users.row(u).iter().zip(q.users.row(v)) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
        for (i, raw) in log.items.iter().enumerate() {
            let j = log_r.items.iter().position(|r| r == raw).unwrap();
            for (x, y) in p.items.row(i).iter().zip(q.items.row(j)) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}

fn fill(row: &mut [f64], field: &str, value: &str) {
    let mut h: u64 = 1469598103934665603;
    for b in field.bytes().chain([0]).chain(value.bytes()) {
        h = (h ^ b as u64).wrapping_mul(1099511628211);
    }
    for (k, x) in row.iter_mut().enumerate() {
        let bits = h.rotate_left(k as u32 * 13) >> 40;
        *x = bits as f64 / (1u64 << 24) as f64 - 0.5;
    }
}

#[test]
fn zero_layers_return_the_encoder_output() {
    let log = log_from_tuples(&[(0, 0, 1, 0), (1, 0, 2, 1), (1, 2, 0, 0)]);
    let g = build_graph(&log);
    let cfg = ModelConfig {
        dim: 5,
        alphas: LayerWeights::uniform(0),
        ..ModelConfig::default()
    };
    let m = ModelState::init(cfg, VocabSizes::from(&g.features), 3).unwrap();
    let p = precompute(&m, &g).unwrap();
    let e = encode_all(&g.features, &m.params.tables).unwrap();
    assert_eq!(p.users, e.users);
    assert_eq!(p.items, e.items);
}

#[test]
fn blank_contexts_share_one_context_node() {
    let log = log_from_tuples(&[(0, 0, 0, 0), (1, 1, 0, 0)]);
    let g = build_graph(&log);
    let nodes = ContextNodes::from_graph(&g);
    // every edge has the empty combination
    assert_eq!(nodes.len(), 1);
    assert!(nodes.combos()[0].is_empty());
}
