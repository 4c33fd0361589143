//! All-rank top-K evaluation and the item-popularity breakdown.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AttributedGraph, InteractionLog, InteractionRecord};
use crate::decoder::ItemScorer;
use crate::error::{GcmError, Result};

/// Candidates for `user`: every item outside `consumed` (sorted).
pub fn candidates(n_items: usize, consumed: &[u32]) -> Vec<u32> {
    (0..n_items as u32)
        .filter(|i| consumed.binary_search(i).is_err())
        .collect()
}

/// All unconsumed items ordered by score descending, ties by lower id.
pub fn rank_all(scorer: &dyn ItemScorer, user: u32, context: &[u32], consumed: &[u32]) -> Result<Vec<u32>> {
    if user as usize >= scorer.n_users() {
        return Err(GcmError::UnknownUser(user.to_string()));
    }
    let cands = candidates(scorer.n_items(), consumed);
    let scores = scorer.score_items(user, context, &cands)?;
    let mut order: Vec<(u32, f64)> = cands.into_iter().zip(scores).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(order.into_iter().map(|(i, _)| i).collect())
}

/// 1-based rank of `target` among the unconsumed items under the
/// [`rank_all`] ordering. The target is always a candidate.
pub fn target_rank(scorer: &dyn ItemScorer, user: u32, context: &[u32], consumed: &[u32], target: u32) -> Result<usize> {
    if user as usize >= scorer.n_users() {
        return Err(GcmError::UnknownUser(user.to_string()));
    }
    if target as usize >= scorer.n_items() {
        return Err(GcmError::UnknownItem(target.to_string()));
    }
    let mut cands = candidates(scorer.n_items(), consumed);
    if let Err(pos) = cands.binary_search(&target) {
        cands.insert(pos, target);
    }
    let scores = scorer.score_items(user, context, &cands)?;
    let pos = cands.binary_search(&target).expect("target inserted");
    let t = scores[pos];
    let ahead = cands
        .iter()
        .zip(&scores)
        .filter(|&(&i, &s)| s > t || (s == t && i < target))
        .count();
    Ok(ahead + 1)
}

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    /// Mean HR per entry of `ks`.
    pub hr: Vec<f64>,
    /// Mean NDCG per entry of `ks`.
    pub ndcg: Vec<f64>,
    pub n_users: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buckets: Option<Vec<BucketReport>>,
}

impl MetricsReport {
    fn from_ranks(ranks: &[usize], ks: &[usize]) -> Self {
        let n = ranks.len() as f64;
        let mean = |f: fn(usize, usize) -> f64, k: usize| ranks.iter().map(|&r| f(r, k)).sum::<f64>() / n;
        MetricsReport {
            ks: ks.to_vec(),
            hr: ks.iter().map(|&k| mean(hr_at_k, k)).collect(),
            ndcg: ks.iter().map(|&k| mean(ndcg_at_k, k)).collect(),
            n_users: ranks.len(),
            buckets: None,
        }
    }

    pub fn hr_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.hr[p])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.ndcg[p])
    }
}

/// Metrics over test cases whose target popularity lies in
/// `[lower, upper)`; `upper = None` is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub lower: usize,
    pub upper: Option<usize>,
    pub count: usize,
    /// `None` for an empty bucket.
    pub hr: Option<Vec<f64>>,
    pub ndcg: Option<Vec<f64>>,
}

impl BucketReport {
    pub fn label(&self) -> String {
        match self.upper {
            Some(u) => format!("[{},{})", self.lower, u),
            None => format!("[{},inf)", self.lower),
        }
    }
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(GcmError::param("K values must be non-empty and positive"));
    }
    Ok(())
}

/// Ranks of every test target, in test-record order.
pub fn test_ranks(test: &InteractionLog, graph: &AttributedGraph, scorer: &dyn ItemScorer) -> Result<Vec<usize>> {
    if scorer.n_items() != graph.n_items() || scorer.n_users() != graph.n_users() {
        return Err(GcmError::contract(format!(
            "scorer covers {}x{} nodes, graph has {}x{}",
            scorer.n_users(),
            scorer.n_items(),
            graph.n_users(),
            graph.n_items()
        )));
    }
    let rank = |r: &InteractionRecord| -> Result<usize> {
        if r.user as usize >= graph.n_users() {
            return Err(GcmError::UnknownUser(r.user.to_string()));
        }
        let consumed = graph.consumed_items(r.user as usize);
        target_rank(scorer, r.user, &r.context, &consumed, r.item)
    };
    test.records.par_iter().map(rank).collect()
}

/// Mean HR@K and NDCG@K over all test cases.
pub fn evaluate(test: &InteractionLog, graph: &AttributedGraph, scorer: &dyn ItemScorer, ks: &[usize]) -> Result<MetricsReport> {
    check_ks(ks)?;
    if test.is_empty() {
        return Err(GcmError::contract("test log is empty"));
    }
    let ranks = test_ranks(test, graph, scorer)?;
    Ok(MetricsReport::from_ranks(&ranks, ks))
}

/// Training interaction count of every item.
pub fn item_popularity(graph: &AttributedGraph) -> Vec<usize> {
    (0..graph.n_items()).map(|i| graph.item_degree(i)).collect()
}

/// Quartiles of target popularity over the test set, deduplicated and
/// positive, for use as bucket edges.
pub fn quartile_edges(test: &InteractionLog, graph: &AttributedGraph) -> Vec<usize> {
    let pop = item_popularity(graph);
    let mut v: Vec<usize> = test
        .records
        .iter()
        .map(|r| pop.get(r.item as usize).copied().unwrap_or(0))
        .collect();
    if v.is_empty() {
        return Vec::new();
    }
    v.sort_unstable();
    let mut edges: Vec<usize> = [1, 2, 3]
        .iter()
        .map(|q| v[(q * v.len() / 4).min(v.len() - 1)])
        .filter(|&e| e > 0)
        .collect();
    edges.dedup();
    edges
}

/// Index of the bucket holding `popularity` under strictly increasing
/// `edges`.
pub fn bucket_of(popularity: usize, edges: &[usize]) -> usize {
    edges.partition_point(|&e| e <= popularity)
}

/// Splits the test set by target popularity and evaluates each bucket.
/// Returns the overall report with `buckets` filled in.
pub fn popularity_breakdown(
    test: &InteractionLog,
    graph: &AttributedGraph,
    scorer: &dyn ItemScorer,
    ks: &[usize],
    edges: &[usize],
) -> Result<MetricsReport> {
    check_ks(ks)?;
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GcmError::param(format!("bucket edges must be strictly increasing: {edges:?}")));
    }
    if test.is_empty() {
        return Err(GcmError::contract("test log is empty"));
    }
    let ranks = test_ranks(test, graph, scorer)?;
    let pop = item_popularity(graph);
    let mut per_bucket: Vec<Vec<usize>> = vec![Vec::new(); edges.len() + 1];
    for (r, &rank) in test.records.iter().zip(&ranks) {
        per_bucket[bucket_of(pop[r.item as usize], edges)].push(rank);
    }
    let buckets = per_bucket
        .iter()
        .enumerate()
        .map(|(b, ranks)| {
            let (hr, ndcg) = if ranks.is_empty() {
                (None, None)
            } else {
                let rep = MetricsReport::from_ranks(ranks, ks);
                (Some(rep.hr), Some(rep.ndcg))
            };
            BucketReport {
                lower: if b == 0 { 0 } else { edges[b - 1] },
                upper: edges.get(b).copied(),
                count: ranks.len(),
                hr,
                ndcg,
            }
        })
        .collect();
    let mut report = MetricsReport::from_ranks(&ranks, ks);
    report.buckets = Some(buckets);
    Ok(report)
}

/// Flat CSV with one row per (model, K, bucket); `bucket` is `all` for the
/// overall figures. Empty buckets leave the metric cells blank.
pub fn write_metrics_csv<W: Write>(reports: &[(String, MetricsReport)], mut out: W) -> Result<()> {
    writeln!(out, "model,k,bucket,count,hr,ndcg")?;
    for (model, rep) in reports {
        for (j, k) in rep.ks.iter().enumerate() {
            writeln!(out, "{model},{k},all,{},{},{}", rep.n_users, rep.hr[j], rep.ndcg[j])?;
            for b in rep.buckets.iter().flatten() {
                let cell = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v[j].to_string()).unwrap_or_default();
                writeln!(out, "{model},{k},\"{}\",{},{},{}", b.label(), b.count, cell(&b.hr), cell(&b.ndcg))?;
            }
        }
    }
    Ok(())
}

/// Whitespace-separated data for plotting metric against popularity
/// bucket: one row per bucket, one HR and NDCG column pair per model at
/// cutoff `k`. Missing values are written as `?`.
pub fn write_gnuplot_data<W: Write>(reports: &[(String, MetricsReport)], k: usize, mut out: W) -> Result<()> {
    let Some((_, first)) = reports.first() else {
        return Ok(());
    };
    let Some(buckets) = first.buckets.as_ref() else {
        return Err(GcmError::contract("reports carry no popularity buckets"));
    };
    write!(out, "# bucket count")?;
    for (name, _) in reports {
        write!(out, " {name}_hr@{k} {name}_ndcg@{k}")?;
    }
    writeln!(out)?;
    for (b, bucket) in buckets.iter().enumerate() {
        write!(out, "\"{}\" {}", bucket.label(), bucket.count)?;
        for (_, rep) in reports {
            let j = rep.ks.iter().position(|&x| x == k);
            let cell = |v: Option<&Vec<f64>>| match (v, j) {
                (Some(v), Some(j)) => v[j].to_string(),
                _ => "?".to_string(),
            };
            let bk = rep.buckets.as_ref().and_then(|bs| bs.get(b));
            write!(
                out,
                " {} {}",
                cell(bk.and_then(|x| x.hr.as_ref())),
                cell(bk.and_then(|x| x.ndcg.as_ref()))
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}
