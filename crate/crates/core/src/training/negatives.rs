use rand::Rng;

use super::LabeledTriple;
use crate::dataset::AttributedGraph;
use crate::error::{GcmError, Result};

/// Uniform sampler over the items each user has not consumed in training.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    consumed: Vec<Vec<u32>>,
    n_items: usize,
}

impl NegativeSampler {
    pub fn from_graph(graph: &AttributedGraph) -> Self {
        NegativeSampler {
            consumed: (0..graph.n_users()).map(|u| graph.consumed_items(u)).collect(),
            n_items: graph.n_items(),
        }
    }

    /// Sorted training items of `user`.
    pub fn consumed(&self, user: u32) -> &[u32] {
        &self.consumed[user as usize]
    }

    /// `n` independent uniform draws from the user's unconsumed items.
    pub fn sample_items<R: Rng + ?Sized>(&self, user: u32, n: usize, rng: &mut R) -> Result<Vec<u32>> {
        let consumed = self
            .consumed
            .get(user as usize)
            .ok_or_else(|| GcmError::UnknownUser(user.to_string()))?;
        let free = self.n_items - consumed.len();
        if free == 0 {
            return Err(GcmError::Sampling(format!(
                "user {user} has interacted with all {} items",
                self.n_items
            )));
        }
        // dense histories draw from the complement directly; sparse ones
        // reject
        if consumed.len() * 2 > self.n_items {
            let complement: Vec<u32> = (0..self.n_items as u32)
                .filter(|i| consumed.binary_search(i).is_err())
                .collect();
            return Ok((0..n).map(|_| complement[rng.random_range(0..free)]).collect());
        }
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let i = rng.random_range(0..self.n_items as u32);
            if consumed.binary_search(&i).is_err() {
                out.push(i);
            }
        }
        Ok(out)
    }

    /// Negatives for one positive: same user and context, label 0.
    pub fn sample<R: Rng + ?Sized>(&self, positive: &LabeledTriple, n: usize, rng: &mut R) -> Result<Vec<LabeledTriple>> {
        Ok(self
            .sample_items(positive.user, n, rng)?
            .into_iter()
            .map(|item| LabeledTriple {
                user: positive.user,
                item,
                context: positive.context.clone(),
                label: 0.0,
            })
            .collect())
    }
}

/// One-off form of [`NegativeSampler::sample`].
pub fn sample_negatives<R: Rng + ?Sized>(
    positive: &LabeledTriple,
    graph: &AttributedGraph,
    n: usize,
    rng: &mut R,
) -> Result<Vec<LabeledTriple>> {
    if n == 0 {
        return Err(GcmError::param("need at least one negative per positive"));
    }
    NegativeSampler::from_graph(graph).sample(positive, n, rng)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dataset::{build_graph, LogBuilder, Schema};

    fn graph(pairs: &[(&str, &str)], extra_items: &[&str]) -> AttributedGraph {
        let mut b = LogBuilder::new(Schema::new([""; 0], [""; 0], ["c"]));
        for (t, (u, i)) in pairs.iter().enumerate() {
            b.push(u, &[], i, &[], &[("c", "x")], t as i64);
        }
        let n = pairs.len();
        for (k, i) in extra_items.iter().enumerate() {
            b.push("other", &[], i, &[], &[("c", "x")], (n + k) as i64);
        }
        build_graph(&b.finish())
    }

    #[test]
    fn only_option_is_taken() {
        let g = graph(&[("u", "i0")], &["i1"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pos = LabeledTriple::positive(0, 0, vec![0]);
        let neg = sample_negatives(&pos, &g, 3, &mut rng).unwrap();
        assert_eq!(neg.len(), 3);
        assert!(neg.iter().all(|t| t.item == 1 && t.context == vec![0] && t.label == 0.0));
    }

    #[test]
    fn never_returns_consumed_items_and_is_reproducible() {
        let items: Vec<String> = (0..50).map(|i| format!("i{i}")).collect();
        let mut pairs: Vec<(&str, &str)> = items[..10].iter().map(|i| ("u", i.as_str())).collect();
        pairs.push(("v", "i0"));
        let extra: Vec<&str> = items[10..].iter().map(String::as_str).collect();
        let g = graph(&pairs, &extra);
        let s = NegativeSampler::from_graph(&g);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            s.sample_items(0, 500, &mut rng).unwrap()
        };
        let a = draw(7);
        assert!(a.iter().all(|i| *i >= 10));
        assert_eq!(a, draw(7));
    }

    #[test]
    fn saturated_user_is_an_error() {
        let g = graph(&[("u", "a"), ("u", "b")], &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pos = LabeledTriple::positive(0, 0, vec![0]);
        assert!(matches!(
            sample_negatives(&pos, &g, 1, &mut rng),
            Err(GcmError::Sampling(_))
        ));
    }
}
