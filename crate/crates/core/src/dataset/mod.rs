//! Interaction logs with side features, vocabularies, filtering, splitting and
//! the attributed user–item graph.
//!
//! Every log built here is *canonical*: dense user, item and feature ids are
//! assigned in first-seen order while walking the records. Re-densifying a
//! canonical log therefore reproduces it exactly, which makes k-core
//! filtering idempotent and TSV round-trips lossless.

mod filter;
mod graph;
mod io;
mod synth;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::error::{GcmError, Result};

pub use filter::{apply_user_k_core, split_leave_last_out, Split};
pub use graph::{build_graph, AttributedGraph, NodeFeatures};
pub use io::{
    parse_interaction_log, read_log_jsonl, read_vocabulary_tsv, write_log_jsonl, write_log_tsv,
    write_vocabulary_tsv, LOG_FORMAT_VERSION,
};
pub use synth::{generate_synthetic, PlantedRule, SynthParams};

/// Column holding the raw user id; doubles as the user ID feature's field name.
pub const USER_COLUMN: &str = "user";
/// Column holding the raw item id; doubles as the item ID feature's field name.
pub const ITEM_COLUMN: &str = "item";
pub const TIMESTAMP_COLUMN: &str = "ts";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    User,
    Item,
    Context,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::User => "user",
            FieldKind::Item => "item",
            FieldKind::Context => "context",
        }
    }
}

/// Declared feature columns, grouped by the entity they describe.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub user_fields: Vec<String>,
    #[serde(default)]
    pub item_fields: Vec<String>,
    #[serde(default)]
    pub context_fields: Vec<String>,
}

impl Schema {
    pub fn new(
        user_fields: impl IntoIterator<Item = impl Into<String>>,
        item_fields: impl IntoIterator<Item = impl Into<String>>,
        context_fields: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Schema {
            user_fields: user_fields.into_iter().map(Into::into).collect(),
            item_fields: item_fields.into_iter().map(Into::into).collect(),
            context_fields: context_fields.into_iter().map(Into::into).collect(),
        }
    }

    /// Rejects duplicate names and names that shadow the fixed columns.
    pub fn validate(&self) -> Result<()> {
        let mut seen = IndexSet::new();
        for name in self.all_fields() {
            if name.is_empty() {
                return Err(GcmError::Schema("empty field name".into()));
            }
            if [USER_COLUMN, ITEM_COLUMN, TIMESTAMP_COLUMN].contains(&name) {
                return Err(GcmError::Schema(format!(
                    "field `{name}` collides with a reserved column"
                )));
            }
            if !seen.insert(name) {
                return Err(GcmError::Schema(format!("field `{name}` declared twice")));
            }
        }
        Ok(())
    }

    pub fn all_fields(&self) -> impl Iterator<Item = &str> {
        self.user_fields
            .iter()
            .chain(&self.item_fields)
            .chain(&self.context_fields)
            .map(String::as_str)
    }
}

/// Dense ids for the features of one field group.
///
/// Keys are `(field, value)` pairs, so equal raw values in different fields
/// never share an id. Ids are contiguous in `[0, len)` and assigned in
/// insertion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVocabulary {
    kind: FieldKind,
    entries: IndexSet<(String, String)>,
}

impl FeatureVocabulary {
    pub fn new(kind: FieldKind) -> Self {
        FeatureVocabulary {
            kind,
            entries: IndexSet::new(),
        }
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get_or_insert(&mut self, field: &str, value: &str) -> u32 {
        if let Some(id) = self.id(field, value) {
            return id;
        }
        let (idx, _) = self.entries.insert_full((field.to_owned(), value.to_owned()));
        idx as u32
    }

    pub fn id(&self, field: &str, value: &str) -> Option<u32> {
        // IndexSet lookups need an owned key of the same type.
        self.entries
            .get_index_of(&(field.to_owned(), value.to_owned()))
            .map(|i| i as u32)
    }

    pub fn entry(&self, id: u32) -> Option<(&str, &str)> {
        self.entries
            .get_index(id as usize)
            .map(|(f, v)| (f.as_str(), v.as_str()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str, &str)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (f, v))| (i as u32, f.as_str(), v.as_str()))
    }

    pub(crate) fn from_entries(kind: FieldKind, entries: Vec<(String, String)>) -> Result<Self> {
        let n = entries.len();
        let entries: IndexSet<_> = entries.into_iter().collect();
        if entries.len() != n {
            return Err(GcmError::format("duplicate vocabulary entry"));
        }
        Ok(FeatureVocabulary { kind, entries })
    }

    pub(crate) fn entries(&self) -> Vec<(String, String)> {
        self.entries.iter().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabularies {
    pub user: FeatureVocabulary,
    pub item: FeatureVocabulary,
    pub context: FeatureVocabulary,
}

impl Default for Vocabularies {
    fn default() -> Self {
        Vocabularies {
            user: FeatureVocabulary::new(FieldKind::User),
            item: FeatureVocabulary::new(FieldKind::Item),
            context: FeatureVocabulary::new(FieldKind::Context),
        }
    }
}

/// One observed `(user, item, context)` interaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: u32,
    pub item: u32,
    /// Context-vocabulary ids, at most one per context field, in schema order.
    /// Empty when every context cell of the row was blank.
    pub context: Vec<u32>,
    pub timestamp: i64,
}

/// Records plus the id spaces they live in.
///
/// Logs produced by a split share their parent's id space, so `n_users` and
/// `n_items` may count entities that have no records in that half.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionLog {
    pub schema: Schema,
    pub records: Vec<InteractionRecord>,
    /// Raw user id per dense user.
    pub users: Vec<String>,
    /// Raw item id per dense item.
    pub items: Vec<String>,
    /// User-vocabulary ids per dense user; the ID feature comes first.
    pub user_features: Vec<Vec<u32>>,
    /// Item-vocabulary ids per dense item; the ID feature comes first.
    pub item_features: Vec<Vec<u32>>,
    pub vocab: Vocabularies,
}

impl InteractionLog {
    pub fn empty(schema: Schema) -> Self {
        LogBuilder::new(schema).finish()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Raw `(field, value)` pairs of a user's side features, ID excluded.
    pub fn user_attributes(&self, user: u32) -> Vec<(&str, &str)> {
        attributes(&self.vocab.user, &self.user_features[user as usize])
    }

    pub fn item_attributes(&self, item: u32) -> Vec<(&str, &str)> {
        attributes(&self.vocab.item, &self.item_features[item as usize])
    }

    pub fn context_values(&self, record: &InteractionRecord) -> Vec<(&str, &str)> {
        record
            .context
            .iter()
            .filter_map(|&c| self.vocab.context.entry(c))
            .collect()
    }

    /// Same id space and metadata, different records.
    pub fn with_records(&self, records: Vec<InteractionRecord>) -> Self {
        InteractionLog {
            schema: self.schema.clone(),
            records,
            users: self.users.clone(),
            items: self.items.clone(),
            user_features: self.user_features.clone(),
            item_features: self.item_features.clone(),
            vocab: self.vocab.clone(),
        }
    }

    /// Rebuilds dense ids in first-seen order over the given subset of
    /// records, dropping users, items and features nothing refers to.
    pub fn compact(&self, keep: impl Fn(&InteractionRecord) -> bool) -> Self {
        let mut builder = LogBuilder::new(self.schema.clone());
        for rec in self.records.iter().filter(|r| keep(r)) {
            builder.push(
                &self.users[rec.user as usize],
                &self.user_attributes(rec.user),
                &self.items[rec.item as usize],
                &self.item_attributes(rec.item),
                &self.context_values(rec),
                rec.timestamp,
            );
        }
        builder.finish()
    }
}

fn attributes<'a>(vocab: &'a FeatureVocabulary, ids: &[u32]) -> Vec<(&'a str, &'a str)> {
    ids.iter()
        .skip(1)
        .filter_map(|&id| vocab.entry(id))
        .collect()
}

/// Assigns dense ids in first-seen order.
///
/// Per record the walk order is: user (ID feature, then side features in
/// schema order), item (likewise), then context features in schema order.
pub(crate) struct LogBuilder {
    schema: Schema,
    records: Vec<InteractionRecord>,
    users: IndexSet<String>,
    items: IndexSet<String>,
    user_features: Vec<Vec<u32>>,
    item_features: Vec<Vec<u32>>,
    vocab: Vocabularies,
}

impl LogBuilder {
    pub(crate) fn new(schema: Schema) -> Self {
        LogBuilder {
            schema,
            records: Vec::new(),
            users: IndexSet::new(),
            items: IndexSet::new(),
            user_features: Vec::new(),
            item_features: Vec::new(),
            vocab: Vocabularies::default(),
        }
    }

    /// Side-feature pairs must use fields declared for that group; fields
    /// are stored in schema order regardless of argument order.
    pub(crate) fn push(
        &mut self,
        user: &str,
        user_attrs: &[(&str, &str)],
        item: &str,
        item_attrs: &[(&str, &str)],
        context: &[(&str, &str)],
        timestamp: i64,
    ) {
        let (u, new_user) = self.users.insert_full(user.to_owned());
        if new_user {
            let feats = node_features(
                &mut self.vocab.user,
                USER_COLUMN,
                user,
                &self.schema.user_fields,
                user_attrs,
            );
            self.user_features.push(feats);
        }
        let (i, new_item) = self.items.insert_full(item.to_owned());
        if new_item {
            let feats = node_features(
                &mut self.vocab.item,
                ITEM_COLUMN,
                item,
                &self.schema.item_fields,
                item_attrs,
            );
            self.item_features.push(feats);
        }
        let mut ctx = Vec::with_capacity(context.len());
        for field in &self.schema.context_fields {
            if let Some((_, value)) = context.iter().find(|(f, _)| f == field) {
                ctx.push(self.vocab.context.get_or_insert(field, value));
            }
        }
        self.records.push(InteractionRecord {
            user: u as u32,
            item: i as u32,
            context: ctx,
            timestamp,
        });
    }

    pub(crate) fn finish(self) -> InteractionLog {
        InteractionLog {
            schema: self.schema,
            records: self.records,
            users: self.users.into_iter().collect(),
            items: self.items.into_iter().collect(),
            user_features: self.user_features,
            item_features: self.item_features,
            vocab: self.vocab,
        }
    }
}

fn node_features(
    vocab: &mut FeatureVocabulary,
    id_field: &str,
    raw_id: &str,
    fields: &[String],
    attrs: &[(&str, &str)],
) -> Vec<u32> {
    let mut feats = vec![vocab.get_or_insert(id_field, raw_id)];
    for field in fields {
        if let Some((_, value)) = attrs.iter().find(|(f, _)| f == field) {
            feats.push(vocab.get_or_insert(field, value));
        }
    }
    feats
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn namespacing_keeps_equal_values_apart() {
        let mut v = FeatureVocabulary::new(FieldKind::Context);
        let a = v.get_or_insert("stars", "5");
        let b = v.get_or_insert("month", "5");
        assert_ne!(a, b);
        assert_eq!(v.get_or_insert("stars", "5"), a);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn schema_rejects_reserved_and_duplicate_names() {
        assert!(Schema::new(["user"], [""; 0], [""; 0]).validate().is_err());
        assert!(Schema::new(["a"], ["a"], [""; 0]).validate().is_err());
        assert!(Schema::new(["a"], ["b"], ["c"]).validate().is_ok());
    }

    #[test]
    fn builder_injects_id_features_first() {
        let schema = Schema::new(["age"], ["color"], ["hour"]);
        let mut b = LogBuilder::new(schema);
        b.push("u1", &[("age", "30")], "i1", &[("color", "blue")], &[("hour", "9")], 1);
        b.push("u1", &[("age", "31")], "i2", &[], &[], 2);
        let log = b.finish();
        assert_eq!(log.vocab.user.entry(log.user_features[0][0]), Some(("user", "u1")));
        // first-seen side features win
        assert_eq!(log.user_attributes(0), vec![("age", "30")]);
        assert_eq!(log.item_features[1].len(), 1);
        assert!(log.records[1].context.is_empty());
    }
}
