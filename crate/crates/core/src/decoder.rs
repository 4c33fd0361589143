//! Scoring of `(user, item, context)` triples from refined embeddings.
//!
//! The FM decoder sums inner products over all unordered pairs of the set
//! `{p_u, q_i} ∪ {v_s : s ∈ c}` using the `½(‖Σv‖² − Σ‖v‖²)` identity. The
//! inner-product decoder keeps only `p_u · q_i` and ignores context.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GcmError, Result};
use crate::linalg::{add_assign, dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// Pairwise-interaction decoder over user, item and context vectors.
    #[default]
    Fm,
    /// `p_u · q_i`; context-free.
    #[serde(alias = "mf")]
    InnerProduct,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 2] = [DecoderKind::Fm, DecoderKind::InnerProduct];

    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::Fm => "fm",
            DecoderKind::InnerProduct => "mf",
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecoderKind {
    type Err = GcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fm" => Ok(DecoderKind::Fm),
            "mf" | "inner" | "inner_product" => Ok(DecoderKind::InnerProduct),
            other => Err(GcmError::param(format!(
                "unknown decoder `{other}` (expected fm or mf)"
            ))),
        }
    }
}

/// `½(‖Σ_s v_s‖² − Σ_s ‖v_s‖²)`, the sum of `v_s · v_t` over unordered
/// pairs `s ≠ t`.
pub fn score_fm(vectors: &[&[f64]]) -> Result<f64> {
    let Some(first) = vectors.first() else {
        return Err(GcmError::contract("FM decoder needs at least one vector"));
    };
    let d = first.len();
    let mut sum = vec![0.0; d];
    let mut self_sq = 0.0;
    for v in vectors {
        if v.len() != d {
            return Err(GcmError::Dimension {
                expected: d,
                actual: v.len(),
            });
        }
        add_assign(&mut sum, v);
        self_sq += dot(v, v);
    }
    Ok(0.5 * (dot(&sum, &sum) - self_sq))
}

pub fn score_inner(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(GcmError::Dimension {
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(dot(p, q))
}

/// Optional first-order terms: a global bias plus one bias per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrder {
    pub global: f64,
    /// Summed feature biases per user node.
    pub user: Vec<f64>,
    /// Summed feature biases per item node.
    pub item: Vec<f64>,
    /// Bias per context feature.
    pub context: Vec<f64>,
}

/// One triple, assembled.
#[derive(Debug, Clone)]
pub struct ScoringInput<'a> {
    pub user: &'a [f64],
    pub item: &'a [f64],
    /// One vector per context feature, not pooled.
    pub contexts: Vec<&'a [f64]>,
    /// Sum of all applicable first-order terms.
    pub bias: f64,
}

impl ScoringInput<'_> {
    pub fn score(&self, decoder: DecoderKind) -> Result<f64> {
        let pairwise = match decoder {
            DecoderKind::Fm => {
                let mut all = Vec::with_capacity(self.contexts.len() + 2);
                all.push(self.user);
                all.push(self.item);
                all.extend(self.contexts.iter().copied());
                score_fm(&all)?
            }
            DecoderKind::InnerProduct => score_inner(self.user, self.item)?,
        };
        Ok(pairwise + self.bias)
    }
}

/// Everything needed to score at serving time: final user/item embeddings,
/// raw context-feature embeddings and the decoder. Holds no graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringArtifacts {
    pub decoder: DecoderKind,
    pub users: Matrix,
    pub items: Matrix,
    pub context: Matrix,
    pub first_order: Option<FirstOrder>,
}

impl ScoringArtifacts {
    pub fn n_users(&self) -> usize {
        self.users.rows()
    }

    pub fn n_items(&self) -> usize {
        self.items.rows()
    }

    fn check_context(&self, context: &[u32]) -> Result<()> {
        for (k, &c) in context.iter().enumerate() {
            if c as usize >= self.context.rows() {
                return Err(GcmError::contract(format!("unknown context feature {c}")));
            }
            if context[..k].contains(&c) {
                return Err(GcmError::contract(format!("duplicate context feature {c}")));
            }
        }
        Ok(())
    }

    /// Assembles the decoder input for one triple.
    pub fn input(&self, user: u32, item: u32, context: &[u32]) -> Result<ScoringInput<'_>> {
        self.check_user(user)?;
        self.check_item(item)?;
        self.check_context(context)?;
        let use_context = self.decoder == DecoderKind::Fm;
        let bias = self.first_order.as_ref().map_or(0.0, |b| {
            let ctx: f64 = if use_context {
                context.iter().map(|&c| b.context[c as usize]).sum()
            } else {
                0.0
            };
            b.global + b.user[user as usize] + b.item[item as usize] + ctx
        });
        Ok(ScoringInput {
            user: self.users.row(user as usize),
            item: self.items.row(item as usize),
            contexts: if use_context {
                context.iter().map(|&c| self.context.row(c as usize)).collect()
            } else {
                Vec::new()
            },
            bias,
        })
    }

    fn check_user(&self, user: u32) -> Result<()> {
        if user as usize >= self.n_users() {
            return Err(GcmError::UnknownUser(user.to_string()));
        }
        Ok(())
    }

    fn check_item(&self, item: u32) -> Result<()> {
        if item as usize >= self.n_items() {
            return Err(GcmError::UnknownItem(item.to_string()));
        }
        Ok(())
    }
}

/// Scores many items for one `(user, context)`.
///
/// Context-only partial sums (the summed context vector, the context pair
/// term and the user–context cross term) are computed once per call; each
/// candidate then costs one inner product.
pub fn score_candidates(
    artifacts: &ScoringArtifacts,
    user: u32,
    candidates: &[u32],
    context: &[u32],
) -> Result<Vec<f64>> {
    artifacts.check_user(user)?;
    artifacts.check_context(context)?;
    if let Some(&bad) = candidates.iter().find(|&&i| i as usize >= artifacts.n_items()) {
        return Err(GcmError::UnknownItem(bad.to_string()));
    }
    let p = artifacts.users.row(user as usize);
    let first = artifacts.first_order.as_ref();
    let item_bias = |i: u32| first.map_or(0.0, |b| b.item[i as usize]);
    let mut constant = first.map_or(0.0, |b| b.global + b.user[user as usize]);

    let query: Vec<f64> = match artifacts.decoder {
        DecoderKind::InnerProduct => p.to_vec(),
        DecoderKind::Fm => {
            let mut ctx_sum = vec![0.0; p.len()];
            let mut ctx_self = 0.0;
            for &c in context {
                let v = artifacts.context.row(c as usize);
                add_assign(&mut ctx_sum, v);
                ctx_self += dot(v, v);
            }
            constant += dot(p, &ctx_sum) + 0.5 * (dot(&ctx_sum, &ctx_sum) - ctx_self);
            if let Some(b) = first {
                constant += context.iter().map(|&c| b.context[c as usize]).sum::<f64>();
            }
            let mut w = ctx_sum;
            add_assign(&mut w, p);
            w
        }
    };
    Ok(candidates
        .iter()
        .map(|&i| dot(artifacts.items.row(i as usize), &query) + constant + item_bias(i))
        .collect())
}

/// Source of candidate scores for ranking.
pub trait ItemScorer: Sync {
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    fn score_items(&self, user: u32, context: &[u32], items: &[u32]) -> Result<Vec<f64>>;
}

impl ItemScorer for ScoringArtifacts {
    fn n_users(&self) -> usize {
        ScoringArtifacts::n_users(self)
    }

    fn n_items(&self) -> usize {
        ScoringArtifacts::n_items(self)
    }

    fn score_items(&self, user: u32, context: &[u32], items: &[u32]) -> Result<Vec<f64>> {
        score_candidates(self, user, items, context)
    }
}
