//! Independent reference implementations checked against the library.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mgrag::corpus::UnitId;
use mgrag::embedder::{embed, EmbedderSpec};
use mgrag::eval::{evaluate, ndcg_at_k, recall_at_k, DocRanking, EvalConfig};
use mgrag::index::{search_layer, LayerMemory, MemoryHierarchy};
use mgrag::router::RouterConfig;
use mgrag::synth;

/// Full scan plus a stable sort on (similarity desc, unit id asc).
fn brute_force(mem: &LayerMemory, q: &[f64], k: usize) -> Vec<(UnitId, f64)> {
    let mut all: Vec<(UnitId, f64)> = mem
        .unit_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut s = 0.0;
            for (a, b) in mem.row(i).iter().zip(q) {
                s += a * b;
            }
            (*id, s)
        })
        .collect();
    all.sort_by_key(|a| a.0);
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    all.truncate(k);
    all
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[test]
fn search_matches_full_scan() {
    let kc = synth::keyword_corpus(20, 40, 11, 0);
    let hier = MemoryHierarchy::build(&kc.corpus, &EmbedderSpec::with_dim(64), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..300 {
        let mem = hier.layer(1 + trial % 3);
        let k = rng.random_range(1..=12);
        let q = random_unit(&mut rng, 64);
        let got: Vec<(UnitId, f64)> = search_layer(mem, &q, k)
            .into_iter()
            .map(|h| (h.unit_id, h.sim))
            .collect();
        let want = brute_force(mem, &q, k);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.0, w.0, "trial {trial}");
            assert!((g.1 - w.1).abs() <= 1e-12);
        }
    }
}

#[test]
fn search_breaks_ties_by_unit_id() {
    let mut mem = LayerMemory::new(1, 2);
    for d in [5u64, 2, 9] {
        let id = UnitId {
            doc_id: d,
            layer: 1,
            ordinal: 0,
        };
        mem.push(id, &vec![1.0, 0.0].into()).unwrap();
    }
    let hits = search_layer(&mem, &[1.0, 0.0], 3);
    let docs: Vec<u64> = hits.iter().map(|h| h.doc_id).collect();
    assert_eq!(docs, [2, 5, 9]);
    assert!(search_layer(&mem, &[0.0, 0.0], 3).is_empty());
}

fn recall_reference(ranked: &[u64], rel: &BTreeSet<u64>, k: usize) -> f64 {
    let mut found = 0;
    for (i, d) in ranked.iter().enumerate() {
        if i >= k {
            break;
        }
        if rel.contains(d) {
            found += 1;
        }
    }
    found as f64 / rel.len() as f64
}

fn ndcg_reference(ranked: &[u64], rel: &BTreeSet<u64>, k: usize) -> f64 {
    let mut dcg = 0.0;
    for (i, d) in ranked.iter().enumerate().take(k) {
        if rel.contains(d) {
            dcg += 1.0 / ((i + 2) as f64).log2();
        }
    }
    let mut ideal = 0.0;
    for i in 0..k.min(rel.len()) {
        ideal += 1.0 / ((i + 2) as f64).log2();
    }
    dcg / ideal
}

#[test]
fn metrics_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..500 {
        let n = rng.random_range(1..30u64);
        let mut docs: Vec<u64> = (1..=n).collect();
        docs.shuffle(&mut rng);
        let ranked: Vec<u64> = docs[..rng.random_range(0..=n as usize)].to_vec();
        let mut rel = BTreeSet::new();
        while rel.is_empty() {
            for d in 1..=n + 3 {
                if rng.random_bool(0.2) {
                    rel.insert(d);
                }
            }
        }
        let k = rng.random_range(1..=12);
        let r = DocRanking::from_scores(
            0,
            ranked
                .iter()
                .enumerate()
                .map(|(i, &d)| (d, 1.0 - i as f64 * 1e-3)),
        );
        assert_eq!(r.docs, ranked);
        let recall = recall_at_k(&r, &rel, k).unwrap();
        let ndcg = ndcg_at_k(&r, &rel, k).unwrap();
        assert!((recall - recall_reference(&ranked, &rel, k)).abs() <= 1e-12);
        assert!((ndcg - ndcg_reference(&ranked, &rel, k)).abs() <= 1e-12);
        assert!((0.0..=1.0).contains(&recall) && (0.0..=1.0 + 1e-12).contains(&ndcg));
    }
}

#[test]
fn metric_examples() {
    let r = DocRanking::from_scores(0, (1..=10u64).map(|d| (d, 1.0 / d as f64)));
    let one: BTreeSet<u64> = [2].into();
    assert!((ndcg_at_k(&r, &one, 5).unwrap() - 1.0 / 3f64.log2()).abs() <= 1e-12);
    let ten: BTreeSet<u64> = [1, 3, 5, 11, 12, 13, 14, 15, 16, 17].into();
    assert!((recall_at_k(&r, &ten, 5).unwrap() - 0.3).abs() <= 1e-12);
    let none: BTreeSet<u64> = [99].into();
    assert_eq!(recall_at_k(&r, &none, 5).unwrap(), 0.0);
    assert_eq!(ndcg_at_k(&r, &none, 5).unwrap(), 0.0);
    assert!(recall_at_k(&r, &one, 0).is_err());
}

/// A single-layer retriever written from scratch: embed every document with
/// the layer-1 function and sort by cosine.
fn standalone_top(
    corpus: &mgrag::corpus::Corpus,
    spec: &EmbedderSpec,
    text: &str,
    k: usize,
) -> Vec<u64> {
    let q = embed(text, 1, spec);
    let mut scored: Vec<(u64, f64)> = corpus
        .documents()
        .iter()
        .map(|d| {
            let v = embed(&d.body, 1, spec);
            (d.doc_id, q.iter().zip(v.iter()).map(|(a, b)| a * b).sum())
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(d, _)| d).collect()
}

#[test]
fn depth_one_matches_standalone_retriever() {
    let files = synth::cisi_like(120, 50, 6, 3);
    let corpus =
        mgrag::corpus::Corpus::new(mgrag::corpus::parse_cisi_documents(&files.all).unwrap())
            .unwrap();
    let queries = mgrag::corpus::parse_cisi_queries(&files.qry).unwrap();
    let mut qrels = mgrag::corpus::QrelSet::new();
    for q in &queries {
        qrels.insert(q.query_id, 1);
    }
    let spec = EmbedderSpec::default();
    let hier = MemoryHierarchy::build(&corpus, &spec, 1).unwrap();
    let cfg = EvalConfig {
        router: RouterConfig {
            k_per_layer: 5,
            ..RouterConfig::default()
        },
        ..EvalConfig::default()
    };
    let report = evaluate(&hier, &queries, &qrels, &cfg).unwrap();
    assert_eq!(report.per_query.len(), 50);
    for (q, r) in queries.iter().zip(&report.per_query) {
        assert_eq!(
            r.top_docs,
            standalone_top(&corpus, &spec, &q.text, 5),
            "query {}",
            q.query_id
        );
        assert_eq!(r.routing_entropy, 0.0);
    }
}

const GOLDEN_TEXTS: [&str; 5] = [
    "library",
    "Citation analysis of periodicals.",
    "information retrieval systems",
    "A",
    "naïve café résumé 2024",
];

#[test]
fn golden_vectors() {
    let fixture = include_str!("fixtures/golden_vectors.txt");
    let golden = mgrag::embedder::parse_external_vectors(fixture).unwrap();
    assert_eq!(golden.len(), 15);
    let spec = EmbedderSpec::with_dim(32);
    for (i, t) in GOLDEN_TEXTS.iter().enumerate() {
        for l in 1..=3 {
            let want = &golden[&format!("s{i}:l{l}")];
            let got = embed(t, l, &spec);
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() <= 1e-15, "text {i} layer {l}");
            }
        }
    }
}
