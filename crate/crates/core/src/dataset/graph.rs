use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::InteractionLog;
use crate::error::{GcmError, Result};

const GRAPH_FORMAT_NAME: &str = "gcm-attributed-graph";
const GRAPH_FORMAT_VERSION: u32 = 1;

/// Feature-id lists per node and the sizes of the three feature spaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeFeatures {
    pub users: Vec<Vec<u32>>,
    pub items: Vec<Vec<u32>>,
    pub n_user_features: usize,
    pub n_item_features: usize,
    pub n_context_features: usize,
}

impl NodeFeatures {
    pub fn from_log(log: &InteractionLog) -> Self {
        NodeFeatures {
            users: log.user_features.clone(),
            items: log.item_features.clone(),
            n_user_features: log.vocab.user.len(),
            n_item_features: log.vocab.item.len(),
            n_context_features: log.vocab.context.len(),
        }
    }
}

/// Bipartite user–item multigraph; every edge is one training record and
/// carries that record's context-feature ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributedGraph {
    n_users: usize,
    n_items: usize,
    user_offsets: Vec<usize>,
    /// `(item, edge)` pairs grouped by user.
    user_adjacency: Vec<(u32, u32)>,
    item_offsets: Vec<usize>,
    /// `(user, edge)` pairs grouped by item.
    item_adjacency: Vec<(u32, u32)>,
    edge_users: Vec<u32>,
    edge_items: Vec<u32>,
    edge_contexts: Vec<Vec<u32>>,
    pub features: NodeFeatures,
}

/// One edge per training record, in record order.
pub fn build_graph(train: &InteractionLog) -> AttributedGraph {
    let n_users = train.n_users();
    let n_items = train.n_items();
    let edge_users: Vec<u32> = train.records.iter().map(|r| r.user).collect();
    let edge_items: Vec<u32> = train.records.iter().map(|r| r.item).collect();
    let edge_contexts = train.records.iter().map(|r| r.context.clone()).collect();

    let (user_offsets, user_adjacency) = group(n_users, &edge_users, &edge_items);
    let (item_offsets, item_adjacency) = group(n_items, &edge_items, &edge_users);
    AttributedGraph {
        n_users,
        n_items,
        user_offsets,
        user_adjacency,
        item_offsets,
        item_adjacency,
        edge_users,
        edge_items,
        edge_contexts,
        features: NodeFeatures::from_log(train),
    }
}

/// Counting sort of edges by `key`, stable in edge order.
fn group(n: usize, key: &[u32], other: &[u32]) -> (Vec<usize>, Vec<(u32, u32)>) {
    let mut offsets = vec![0usize; n + 1];
    for &k in key {
        offsets[k as usize + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let mut cursor = offsets.clone();
    let mut adj = vec![(0u32, 0u32); key.len()];
    for (e, (&k, &o)) in key.iter().zip(other).enumerate() {
        let slot = &mut cursor[k as usize];
        adj[*slot] = (o, e as u32);
        *slot += 1;
    }
    (offsets, adj)
}

impl AttributedGraph {
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn edge_count(&self) -> usize {
        self.edge_users.len()
    }

    /// `(item, edge)` neighbours of a user.
    pub fn user_neighbors(&self, user: usize) -> &[(u32, u32)] {
        &self.user_adjacency[self.user_offsets[user]..self.user_offsets[user + 1]]
    }

    /// `(user, edge)` neighbours of an item.
    pub fn item_neighbors(&self, item: usize) -> &[(u32, u32)] {
        &self.item_adjacency[self.item_offsets[item]..self.item_offsets[item + 1]]
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.user_offsets[user + 1] - self.user_offsets[user]
    }

    pub fn item_degree(&self, item: usize) -> usize {
        self.item_offsets[item + 1] - self.item_offsets[item]
    }

    pub fn edge_endpoints(&self, edge: usize) -> (u32, u32) {
        (self.edge_users[edge], self.edge_items[edge])
    }

    pub fn edge_context(&self, edge: usize) -> &[u32] {
        &self.edge_contexts[edge]
    }

    pub fn edge_contexts(&self) -> &[Vec<u32>] {
        &self.edge_contexts
    }

    /// Sorted, de-duplicated items a user interacted with.
    pub fn consumed_items(&self, user: usize) -> Vec<u32> {
        let mut items: Vec<u32> = self.user_neighbors(user).iter().map(|&(i, _)| i).collect();
        items.sort_unstable();
        items.dedup();
        items
    }

    /// Same graph with every edge's context list emptied.
    pub fn without_contexts(&self) -> AttributedGraph {
        let mut g = self.clone();
        g.edge_contexts.iter_mut().for_each(Vec::clear);
        g
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(
            &mut out,
            &serde_json::json!({"format": GRAPH_FORMAT_NAME, "version": GRAPH_FORMAT_VERSION}),
        )?;
        out.write_all(b"\n")?;
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header: serde_json::Value = match lines.next() {
            Some(l) => serde_json::from_str(&l?)?,
            None => return Err(GcmError::format("empty graph file")),
        };
        if header["format"] != GRAPH_FORMAT_NAME || header["version"] != GRAPH_FORMAT_VERSION {
            return Err(GcmError::format(format!("unsupported graph header {header}")));
        }
        let body = lines
            .next()
            .ok_or_else(|| GcmError::format("truncated graph file"))??;
        Ok(serde_json::from_str(&body)?)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{LogBuilder, Schema};
    use super::*;

    #[test]
    fn single_record_graph() {
        let mut b = LogBuilder::new(Schema::new([""; 0], [""; 0], ["c"]));
        b.push("u0", &[], "i0", &[], &[("c", "5")], 1);
        let g = build_graph(&b.finish());
        assert_eq!(g.user_degree(0), 1);
        assert_eq!(g.item_degree(0), 1);
        assert_eq!(g.edge_context(0), &[0]);
    }

    #[test]
    fn repeated_pair_yields_two_edges() {
        let mut b = LogBuilder::new(Schema::default());
        b.push("u0", &[], "i0", &[], &[], 1);
        b.push("u0", &[], "i0", &[], &[], 2);
        let g = build_graph(&b.finish());
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.user_neighbors(0), &[(0, 0), (0, 1)]);
        assert_eq!(g.item_neighbors(0), &[(0, 0), (0, 1)]);
        assert_eq!(g.consumed_items(0), vec![0]);
    }

    #[test]
    fn empty_train_has_no_edges() {
        let g = build_graph(&InteractionLog::empty(Schema::default()));
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn json_round_trip() {
        let mut b = LogBuilder::new(Schema::new([""; 0], [""; 0], ["c"]));
        b.push("u0", &[], "i0", &[], &[("c", "5")], 1);
        b.push("u1", &[], "i0", &[], &[], 2);
        let g = build_graph(&b.finish());
        let mut buf = Vec::new();
        g.write_json(&mut buf).unwrap();
        assert_eq!(AttributedGraph::read_json(buf.as_slice()).unwrap(), g);
    }
}
