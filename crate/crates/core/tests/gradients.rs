use gcm::dataset::{build_graph, parse_interaction_log, AttributedGraph, Schema};
use gcm::decoder::DecoderKind;
use gcm::encoder::VocabSizes;
use gcm::model::{ModelConfig, ModelState, PropagationPlan};
use gcm::propagation::{LayerWeights, NormalizationVariant};
use gcm::training::{add_l2_gradient, backward, forward, LabeledTriple};

const EPS: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

/// 4 users, 5 items, 3 context features (`time` ∈ {am, pm}, `place` = home).
fn small_graph() -> AttributedGraph {
    let tsv = "\
user\titem\tts\tage\tcat\ttime\tplace
u0\ti0\t1\tyoung\tbook\tam\thome
u0\ti1\t2\tyoung\tfilm\tpm\t
u1\ti1\t3\told\tfilm\tam\thome
u1\ti2\t4\told\tbook\tpm\thome
u1\ti3\t5\told\tgame\tam\t
u2\ti3\t6\tyoung\tgame\tpm\thome
u2\ti4\t7\tyoung\tbook\tam\thome
u3\ti0\t8\t\tbook\tam\t
u3\ti4\t9\t\tbook\tpm\thome
u3\ti2\t10\t\tbook\tpm\thome
";
    let schema = Schema::new(["age"], ["cat"], ["time", "place"]);
    let log = parse_interaction_log(tsv.as_bytes(), &schema).unwrap();
    assert_eq!((log.n_users(), log.n_items()), (4, 5));
    assert_eq!(log.vocab.context.len(), 3);
    build_graph(&log)
}

fn batch() -> Vec<LabeledTriple> {
    let t = |user, item, context: &[u32], label| LabeledTriple {
        user,
        item,
        context: context.to_vec(),
        label,
    };
    vec![
        t(0, 0, &[0, 1], 1.0),
        t(0, 3, &[0, 1], 0.0),
        t(1, 2, &[2, 1], 1.0),
        t(1, 4, &[2], 0.0),
        t(2, 4, &[0, 1], 1.0),
        t(3, 1, &[2, 1], 0.0),
        t(3, 2, &[2, 1], 1.0),
    ]
}

fn model(graph: &AttributedGraph, config: ModelConfig) -> ModelState {
    ModelState::init(config, VocabSizes::from(&graph.features), 11).unwrap()
}

fn config(decoder: DecoderKind, norm: NormalizationVariant, layers: usize, graph_context: bool, biases: bool) -> ModelConfig {
    ModelConfig {
        dim: 4,
        alphas: match layers {
            0 => LayerWeights::uniform(0),
            1 => LayerWeights::new(vec![0.3, 0.7]).unwrap(),
            _ => LayerWeights::new(vec![0.2, 0.5, 0.3]).unwrap(),
        },
        norm,
        decoder,
        graph_context,
        biases,
        init_scale: 0.4,
    }
}

fn randomize_biases(m: &mut ModelState) {
    if let Some(b) = m.params.bias.as_mut() {
        let mut x = 0.1;
        for v in b.global.iter_mut().chain(&mut b.user).chain(&mut b.item).chain(&mut b.context) {
            *v = x;
            x = -x * 1.3 + 0.05;
        }
    }
}

fn loss(m: &ModelState, plan: &PropagationPlan, batch: &[LabeledTriple], l2: f64) -> f64 {
    forward(batch, m, plan, l2).unwrap().loss()
}

/// Central differences for every parameter; returns the worst relative
/// error.
fn check(m: &ModelState, plan: &PropagationPlan, batch: &[LabeledTriple], l2: f64) -> f64 {
    let analytic = backward(batch, m, plan, l2).unwrap();
    let a_flat: Vec<f64> = analytic.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut probe = m.clone();
    let mut worst: f64 = 0.0;
    let mut k = 0;
    let n_tensors = probe.params.tensors().len();
    for t in 0..n_tensors {
        let len = probe.params.tensors()[t].len();
        for j in 0..len {
            let orig = probe.params.tensors()[t][j];
            probe.params.tensors_mut()[t][j] = orig + EPS;
            let up = loss(&probe, plan, batch, l2);
            probe.params.tensors_mut()[t][j] = orig - EPS;
            let down = loss(&probe, plan, batch, l2);
            probe.params.tensors_mut()[t][j] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let a = a_flat[k];
            let err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            assert!(
                err <= REL_TOL * scale + 1e-9,
                "tensor {t} entry {j}: analytic {a} numeric {numeric}"
            );
            if scale > 1e-6 {
                worst = worst.max(err / scale);
            }
            k += 1;
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences_across_variants() {
    let g = small_graph();
    let b = batch();
    let mut cases = 0;
    for decoder in [DecoderKind::Fm, DecoderKind::InnerProduct] {
        for norm in NormalizationVariant::ALL {
            for layers in 0..=2 {
                for graph_context in [true, false] {
                    for biases in [false, true] {
                        let cfg = config(decoder, norm, layers, graph_context, biases);
                        let mut m = model(&g, cfg);
                        randomize_biases(&mut m);
                        let plan = PropagationPlan::new(&g, &m.config).unwrap();
                        let worst = check(&m, &plan, &b, 0.01);
                        assert!(worst < REL_TOL, "{} worst {worst}", m.config.label());
                        cases += 1;
                    }
                }
            }
        }
    }
    assert_eq!(cases, 72);
}

#[test]
fn regularization_only_gradient_is_two_lambda_theta() {
    let g = small_graph();
    let mut m = model(&g, config(DecoderKind::Fm, NormalizationVariant::SqrtSingleSide, 2, true, true));
    randomize_biases(&mut m);
    let plan = PropagationPlan::new(&g, &m.config).unwrap();
    let b = batch();
    let lambda = 0.25;
    let with = backward(&b, &m, &plan, lambda).unwrap();
    let without = backward(&b, &m, &plan, 0.0).unwrap();
    for ((w, wo), theta) in with.tensors().iter().zip(without.tensors()).zip(m.params.tensors()) {
        for ((x, y), t) in w.iter().zip(wo).zip(theta) {
            assert!((x - y - 2.0 * lambda * t).abs() <= 1e-14 * x.abs().max(1.0));
        }
    }
    // with the data term switched off the gradient is exactly 2λθ
    let mut reg_only = m.params.zeros_like();
    add_l2_gradient(&mut reg_only, &m.params, lambda);
    for (g, theta) in reg_only.tensors().iter().zip(m.params.tensors()) {
        for (x, t) in g.iter().zip(theta) {
            assert_eq!(*x, 2.0 * lambda * t);
        }
    }
}

#[test]
fn zero_parameters_add_no_penalty() {
    let g = small_graph();
    let mut m = model(&g, config(DecoderKind::Fm, NormalizationVariant::SqrtSingleSide, 2, true, false));
    m.params = m.params.zeros_like();
    let plan = PropagationPlan::new(&g, &m.config).unwrap();
    let out = forward(&batch(), &m, &plan, 0.5).unwrap();
    assert_eq!(out.reg_loss, 0.0);
    let ln2 = std::f64::consts::LN_2;
    assert!((out.loss() - batch().len() as f64 * ln2).abs() < 1e-12);
}

#[test]
fn context_only_in_graph_still_gets_gradient() {
    let g = small_graph();
    let mut m = model(&g, config(DecoderKind::Fm, NormalizationVariant::SqrtSingleSide, 2, true, false));
    randomize_biases(&mut m);
    let plan = PropagationPlan::new(&g, &m.config).unwrap();
    // the decoder sees only `time=am` (feature 0); `place=home` (1) and
    // `time=pm` (2) appear on graph edges
    let b: Vec<LabeledTriple> = batch()
        .into_iter()
        .map(|mut t| {
            t.context = vec![0];
            t
        })
        .collect();
    let grads = backward(&b, &m, &plan, 0.0).unwrap();
    for f in [1usize, 2] {
        let row = grads.tables.context.row(f);
        assert!(row.iter().any(|v| v.abs() > 1e-6), "feature {f}: {row:?}");
    }
    check(&m, &plan, &b, 0.0);

    // without graph context the same features receive nothing
    let mut m2 = m.clone();
    m2.config.graph_context = false;
    let plan2 = PropagationPlan::new(&g, &m2.config).unwrap();
    let grads2 = backward(&b, &m2, &plan2, 0.0).unwrap();
    for f in [1usize, 2] {
        assert!(grads2.tables.context.row(f).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn loss_increases_with_lambda() {
    let g = small_graph();
    let m = model(&g, config(DecoderKind::Fm, NormalizationVariant::Symmetric, 1, true, false));
    let plan = PropagationPlan::new(&g, &m.config).unwrap();
    let b = batch();
    let mut prev = f64::NEG_INFINITY;
    for lambda in [0.0, 1e-5, 1e-3, 1e-1, 1.0] {
        let l = loss(&m, &plan, &b, lambda);
        assert!(l > prev);
        prev = l;
    }
}

#[test]
fn empty_batch_is_rejected() {
    let g = small_graph();
    let m = model(&g, ModelConfig::default());
    let plan = PropagationPlan::new(&g, &m.config).unwrap();
    assert!(forward(&[], &m, &plan, 0.0).is_err());
}
