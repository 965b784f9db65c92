//! Document rankings from retrieval paths, IR metrics, and end-to-end
//! evaluation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::confidence::filter_paths;
use crate::corpus::{QrelSet, Query};
use crate::error::{Error, Result};
use crate::index::MemoryHierarchy;
use crate::router::{route, FusedContext, RouterConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const RECALL_FORMULA: &str = "|top-k ∩ relevant| / |relevant|";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Document score is its best path confidence.
    #[default]
    Max,
    /// Document score is the sum of its path confidences.
    Sum,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "sum" => Ok(Self::Sum),
            _ => Err(Error::Config(format!("unknown aggregation {s:?}"))),
        }
    }
}

/// Documents ordered by (score desc, doc id asc).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRanking {
    pub query_id: u64,
    pub docs: Vec<u64>,
    pub scores: Vec<f64>,
}

impl DocRanking {
    pub fn from_scores(query_id: u64, scores: impl IntoIterator<Item = (u64, f64)>) -> Self {
        let mut pairs: Vec<(u64, f64)> = scores.into_iter().collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        DocRanking {
            query_id,
            docs: pairs.iter().map(|p| p.0).collect(),
            scores: pairs.iter().map(|p| p.1).collect(),
        }
    }
}

pub fn aggregate_ranking(query_id: u64, ctx: &FusedContext, mode: Aggregation) -> DocRanking {
    let mut by_doc: BTreeMap<u64, f64> = BTreeMap::new();
    for p in &ctx.paths {
        let e = by_doc.entry(p.doc_id).or_insert(match mode {
            Aggregation::Max => f64::NEG_INFINITY,
            Aggregation::Sum => 0.0,
        });
        match mode {
            Aggregation::Max => *e = e.max(p.path_confidence),
            Aggregation::Sum => *e += p.path_confidence,
        }
    }
    DocRanking::from_scores(query_id, by_doc)
}

fn check(relevant: &BTreeSet<u64>, k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::Eval("k must be at least 1".into()));
    }
    if relevant.is_empty() {
        return Err(Error::Eval("relevant set is empty".into()));
    }
    Ok(())
}

pub fn recall_at_k(r: &DocRanking, relevant: &BTreeSet<u64>, k: usize) -> Result<f64> {
    check(relevant, k)?;
    let hits = r
        .docs
        .iter()
        .take(k)
        .filter(|d| relevant.contains(d))
        .count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// Binary-gain NDCG with `log2(rank + 1)` discounts.
pub fn ndcg_at_k(r: &DocRanking, relevant: &BTreeSet<u64>, k: usize) -> Result<f64> {
    check(relevant, k)?;
    let dcg: f64 = r
        .docs
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, d)| relevant.contains(d))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..relevant.len().min(k))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    Ok(dcg / ideal)
}

/// Average precision over the full ranking.
pub fn average_precision(r: &DocRanking, relevant: &BTreeSet<u64>) -> Result<f64> {
    check(relevant, 1)?;
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, d) in r.docs.iter().enumerate() {
        if relevant.contains(d) {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub router: RouterConfig,
    /// Gate threshold; `None` skips the gating stage entirely.
    pub tau_path: Option<f64>,
    pub metric_k: usize,
    pub aggregation: Aggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            router: RouterConfig::default(),
            tau_path: Some(0.0),
            metric_k: 5,
            aggregation: Aggregation::Max,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.router.validate()?;
        if let Some(t) = self.tau_path {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("tau_path {t} outside [0, 1]")));
            }
        }
        if self.metric_k == 0 {
            return Err(Error::Config("metric k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: u64,
    pub recall_at_k: f64,
    pub ndcg_at_k: f64,
    pub average_precision: f64,
    pub routing_entropy: f64,
    pub kept_paths: usize,
    pub dropped_paths: usize,
    pub gate_bypassed: bool,
    /// The query had no features, so nothing was retrieved.
    pub degenerate: bool,
    pub top_docs: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config: EvalConfig,
    pub depth: usize,
    pub k: usize,
    pub recall_formula: String,
    pub mean_recall_at_k: f64,
    pub mean_ndcg_at_k: f64,
    pub map: f64,
    pub mean_routing_entropy: f64,
    pub qa_accuracy: Option<f64>,
    pub queries_evaluated: usize,
    pub queries_without_qrels: usize,
    pub qrels_missing_documents: usize,
    pub corpus_hash: String,
    pub per_query: Vec<QueryResult>,
    pub timestamp: Option<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Route, gate and rank one query.
pub fn rank_query(
    hier: &MemoryHierarchy,
    query: &Query,
    cfg: &EvalConfig,
) -> Result<Option<(DocRanking, FusedContext, crate::confidence::GateOutcome)>> {
    let encodings = hier.encode_query(&query.text);
    if encodings.iter().all(|e| e.is_zero()) {
        return Ok(None);
    }
    let ctx = route(hier, &encodings, &cfg.router)?;
    let gate = match cfg.tau_path {
        Some(tau) => filter_paths(hier, &ctx, tau, &cfg.router)?,
        None => crate::confidence::GateOutcome {
            context: ctx.clone(),
            kept: ctx.paths.len(),
            dropped: 0,
            bypassed: false,
        },
    };
    let ranking = aggregate_ranking(query.query_id, &gate.context, cfg.aggregation);
    Ok(Some((ranking, ctx, gate)))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

pub fn evaluate(
    hier: &MemoryHierarchy,
    queries: &[Query],
    qrels: &QrelSet,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let k = cfg.metric_k;
    let mut per_query = Vec::new();
    let mut without = 0;
    for q in queries {
        let Some(relevant) = qrels.relevant(q.query_id).filter(|r| !r.is_empty()) else {
            without += 1;
            continue;
        };
        let result = match rank_query(hier, q, cfg)? {
            Some((ranking, ctx, gate)) => QueryResult {
                query_id: q.query_id,
                recall_at_k: recall_at_k(&ranking, relevant, k)?,
                ndcg_at_k: ndcg_at_k(&ranking, relevant, k)?,
                average_precision: average_precision(&ranking, relevant)?,
                routing_entropy: ctx.weights.entropy(),
                kept_paths: gate.kept,
                dropped_paths: gate.dropped,
                gate_bypassed: gate.bypassed,
                degenerate: false,
                top_docs: ranking.docs.iter().take(k).copied().collect(),
            },
            None => {
                log::warn!(
                    "query {} has no features; scored as empty retrieval",
                    q.query_id
                );
                QueryResult {
                    query_id: q.query_id,
                    recall_at_k: 0.0,
                    ndcg_at_k: 0.0,
                    average_precision: 0.0,
                    routing_entropy: 0.0,
                    kept_paths: 0,
                    dropped_paths: 0,
                    gate_bypassed: false,
                    degenerate: true,
                    top_docs: Vec::new(),
                }
            }
        };
        per_query.push(result);
    }
    if per_query.is_empty() {
        return Err(Error::Eval("no query has relevance judgments".into()));
    }
    let docs: BTreeSet<u64> = hier.layer(1).unit_ids().iter().map(|u| u.doc_id).collect();
    let evaluated: BTreeSet<u64> = per_query.iter().map(|r| r.query_id).collect();
    let missing = qrels
        .iter()
        .filter(|(q, _)| evaluated.contains(q))
        .flat_map(|(_, d)| d.iter())
        .filter(|d| !docs.contains(d))
        .count();
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        depth: hier.depth(),
        k,
        recall_formula: RECALL_FORMULA.to_string(),
        mean_recall_at_k: mean(per_query.iter().map(|r| r.recall_at_k)),
        mean_ndcg_at_k: mean(per_query.iter().map(|r| r.ndcg_at_k)),
        map: mean(per_query.iter().map(|r| r.average_precision)),
        mean_routing_entropy: mean(per_query.iter().map(|r| r.routing_entropy)),
        qa_accuracy: None,
        queries_evaluated: per_query.len(),
        queries_without_qrels: without,
        qrels_missing_documents: missing,
        corpus_hash: hier.manifest().corpus_hash.clone(),
        per_query,
        timestamp: None,
    })
}
