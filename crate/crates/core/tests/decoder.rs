use gcm::decoder::{score_candidates, score_fm, score_inner, DecoderKind, FirstOrder, ScoringArtifacts};
use gcm::linalg::Matrix;
use proptest::prelude::*;

fn pair_sum(vs: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for a in 0..vs.len() {
        for b in a + 1..vs.len() {
            s += vs[a].iter().zip(&vs[b]).map(|(x, y)| x * y).sum::<f64>();
        }
    }
    s
}

fn vectors() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=16).prop_flat_map(|d| prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), 1..=20))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fm_identity_matches_pair_sum(vs in vectors()) {
        let refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
        let fast = score_fm(&refs).unwrap();
        prop_assert!((fast - pair_sum(&vs)).abs() < 1e-10);
    }
}

fn matrix(rows: usize, d: usize, seed: f64) -> Matrix {
    let data = (0..rows * d).map(|k| ((k as f64 + 1.0) * seed).sin()).collect();
    Matrix::from_vec(rows, d, data).unwrap()
}

proptest! {
    #[test]
    fn batched_scoring_matches_per_triple(
        user in 0u32..4,
        ctx in prop::sample::subsequence(vec![0u32, 1, 2, 3, 4], 0..=5),
        biases in any::<bool>(),
        fm in any::<bool>(),
    ) {
        let first_order = biases.then(|| FirstOrder {
            global: 0.3,
            user: vec![0.1, -0.2, 0.05, 0.0],
            item: vec![0.2, -0.1, 0.4, 0.0, -0.3, 0.1],
            context: vec![0.01, 0.02, -0.03, 0.5, -0.5],
        });
        let a = ScoringArtifacts {
            decoder: if fm { DecoderKind::Fm } else { DecoderKind::InnerProduct },
            users: matrix(4, 6, 0.7),
            items: matrix(6, 6, 1.3),
            context: matrix(5, 6, 2.1),
            first_order,
        };
        let items: Vec<u32> = (0..6).collect();
        let batch = score_candidates(&a, user, &items, &ctx).unwrap();
        for (&i, s) in items.iter().zip(batch) {
            let single = a.input(user, i, &ctx).unwrap().score(a.decoder).unwrap();
            prop_assert!((s - single).abs() < 1e-12);
        }
    }
}

#[test]
fn hand_values() {
    assert_eq!(score_fm(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap(), 11.0);
    let three = score_fm(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 2.0]]).unwrap();
    assert!((three - 4.0).abs() < 1e-15);
    assert_eq!(score_fm(&[&[5.0, 5.0]]).unwrap(), 0.0);
    assert_eq!(score_inner(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
    assert!(score_fm(&[&[1.0], &[1.0, 2.0]]).is_err());
    assert!(score_fm(&[]).is_err());
}

#[test]
fn inner_product_ignores_context() {
    let a = ScoringArtifacts {
        decoder: DecoderKind::InnerProduct,
        users: matrix(2, 3, 0.5),
        items: matrix(3, 3, 0.9),
        context: matrix(2, 3, 1.7),
        first_order: None,
    };
    let with = score_candidates(&a, 1, &[0, 1, 2], &[0, 1]).unwrap();
    let without = score_candidates(&a, 1, &[0, 1, 2], &[]).unwrap();
    assert_eq!(with, without);
}
