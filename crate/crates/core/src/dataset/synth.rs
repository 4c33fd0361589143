use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{InteractionLog, LogBuilder, Schema};
use crate::error::{GcmError, Result};

/// How the preferred item of a synthetic record is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantedRule {
    /// Items are uniform at random; no structure.
    Uniform,
    /// Users fall into `n_groups` hidden groups. Items are partitioned into
    /// `n_groups × n_context_values` cells; a record of a user in group `g`
    /// under first-context-field value `c` picks an item from cell `(g, c)`.
    /// Inside a cell, the item at position `r` has weight `(r + 1)^-skew`.
    GroupContext { n_groups: usize, popularity_skew: f64 },
}

impl Default for PlantedRule {
    fn default() -> Self {
        PlantedRule::GroupContext {
            n_groups: 8,
            popularity_skew: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_users: usize,
    pub n_items: usize,
    pub n_context_fields: usize,
    pub n_context_values: usize,
    pub records_per_user: usize,
    pub rule: PlantedRule,
    pub noise_rate: f64,
    /// Adds an uninformative user field (`age`) and item field (`price`).
    pub side_features: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_users: 500,
            n_items: 200,
            n_context_fields: 2,
            n_context_values: 4,
            records_per_user: 3,
            rule: PlantedRule::default(),
            noise_rate: 0.1,
            side_features: false,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0
            || self.n_items == 0
            || self.n_context_values == 0
            || self.records_per_user == 0
        {
            return Err(GcmError::param("synthetic counts must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) || self.noise_rate.is_nan() {
            return Err(GcmError::param(format!(
                "noise_rate must lie in [0, 1], got {}",
                self.noise_rate
            )));
        }
        if let PlantedRule::GroupContext {
            n_groups,
            popularity_skew,
        } = self.rule
        {
            if n_groups == 0 || self.n_context_fields == 0 {
                return Err(GcmError::param(
                    "group-context rule needs at least one group and one context field",
                ));
            }
            if self.n_items < n_groups * self.n_context_values {
                return Err(GcmError::param(format!(
                    "need at least {} items for {} groups x {} context values",
                    n_groups * self.n_context_values,
                    n_groups,
                    self.n_context_values
                )));
            }
            if !popularity_skew.is_finite() || popularity_skew < 0.0 {
                return Err(GcmError::param("popularity_skew must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        let ctx = (0..self.n_context_fields).map(|f| format!("ctx{f}"));
        if self.side_features {
            Schema::new(["age"], ["price"], ctx)
        } else {
            Schema::new([""; 0], [""; 0], ctx)
        }
    }

    /// Hidden group of user `u` under the group-context rule.
    pub fn user_group(&self, user: usize) -> Option<usize> {
        match self.rule {
            PlantedRule::GroupContext { n_groups, .. } => Some(user % n_groups),
            PlantedRule::Uniform => None,
        }
    }

    /// Items of cell `(group, value)`, in id order.
    pub fn cell_items(&self, group: usize, value: usize) -> Vec<usize> {
        match self.rule {
            PlantedRule::GroupContext { n_groups, .. } => {
                let cells = n_groups * self.n_context_values;
                let cell = group * self.n_context_values + value;
                (cell..self.n_items).step_by(cells).collect()
            }
            PlantedRule::Uniform => (0..self.n_items).collect(),
        }
    }
}

/// Deterministic synthetic interaction log.
///
/// Users are `u{n}`, items `i{n}`, context fields `ctx{f}` with values
/// `v{n}`. Record `j` of user `u` gets timestamp `base + j·n_users + u`, and
/// records are emitted in timestamp order.
pub fn generate_synthetic(params: &SynthParams, seed: u64) -> Result<InteractionLog> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = params.schema();

    let (n_groups, skew) = match params.rule {
        PlantedRule::GroupContext {
            n_groups,
            popularity_skew,
        } => (n_groups, popularity_skew),
        PlantedRule::Uniform => (1, 0.0),
    };
    let cells: Vec<(Vec<usize>, WeightedIndex<f64>)> = (0..n_groups)
        .flat_map(|g| (0..params.n_context_values).map(move |c| (g, c)))
        .map(|(g, c)| {
            let items = params.cell_items(g, c);
            let weights: Vec<f64> = (0..items.len())
                .map(|r| ((r + 1) as f64).powf(-skew))
                .collect();
            let dist = WeightedIndex::new(&weights).expect("non-empty cell");
            (items, dist)
        })
        .collect();

    let user_age: Vec<String> = (0..params.n_users)
        .map(|_| format!("a{}", rng.random_range(0..5)))
        .collect();
    let item_price: Vec<String> = (0..params.n_items)
        .map(|_| format!("p{}", rng.random_range(0..4)))
        .collect();

    let mut builder = LogBuilder::new(schema.clone());
    let base_ts: i64 = 1_600_000_000;
    for j in 0..params.records_per_user {
        for u in 0..params.n_users {
            let ctx: Vec<usize> = (0..params.n_context_fields)
                .map(|_| rng.random_range(0..params.n_context_values))
                .collect();
            let noisy = rng.random::<f64>() < params.noise_rate;
            let item = match params.user_group(u) {
                Some(g) if !noisy => {
                    let (items, dist) = &cells[g * params.n_context_values + ctx[0]];
                    items[dist.sample(&mut rng)]
                }
                _ => rng.random_range(0..params.n_items),
            };
            let ctx_pairs: Vec<(String, String)> = ctx
                .iter()
                .enumerate()
                .map(|(f, v)| (schema.context_fields[f].clone(), format!("v{v}")))
                .collect();
            let ctx_refs: Vec<(&str, &str)> = ctx_pairs
                .iter()
                .map(|(f, v)| (f.as_str(), v.as_str()))
                .collect();
            let (ua, ia) = if params.side_features {
                (
                    vec![("age", user_age[u].as_str())],
                    vec![("price", item_price[item].as_str())],
                )
            } else {
                (vec![], vec![])
            };
            builder.push(
                &format!("u{u}"),
                &ua,
                &format!("i{item}"),
                &ia,
                &ctx_refs,
                base_ts + (j * params.n_users + u) as i64,
            );
        }
    }
    Ok(builder.finish())
}
