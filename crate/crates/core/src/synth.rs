//! Synthetic corpora with known answers.
//!
//! * [`keyword_corpus`]: every query names a made-up keyword that occurs in
//!   exactly one document, so a working retriever must rank it first.
//! * [`toy_qa`]: a classification set where each answer class owns a
//!   signature keyword planted in its documents and queries.
//! * [`cisi_like`]: topic-clustered documents, queries and judgments emitted
//!   in Cranfield/CISI file format, for exercising the CISI path end to end
//!   when the real collection is not at hand.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document, QrelSet, Query};
use crate::generator::QAExample;

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ru", "te", "zan", "qui", "vor", "pel", "dax", "ny", "sho", "bri", "gol",
    "fen", "ux", "wet", "jor", "hal", "cys",
];

const FILLER: &[&str] = &[
    "the",
    "system",
    "results",
    "method",
    "analysis",
    "data",
    "study",
    "model",
    "report",
    "approach",
    "information",
    "general",
    "review",
    "paper",
    "work",
    "process",
    "set",
    "problem",
    "describes",
    "presents",
    "using",
    "based",
    "several",
    "within",
    "between",
    "large",
    "new",
    "various",
    "current",
    "discussed",
];

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables)
        .map(|_| *SYLLABLES.choose(rng).unwrap())
        .collect()
}

/// `n` distinct pseudo-words not present in `taken`.
fn fresh_words(
    rng: &mut ChaCha8Rng,
    n: usize,
    syllables: usize,
    taken: &mut std::collections::HashSet<String>,
) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(rng, syllables);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn filler_sentence(rng: &mut ChaCha8Rng, words: usize) -> String {
    let mut s: Vec<&str> = (0..words).map(|_| *FILLER.choose(rng).unwrap()).collect();
    let first = s[0];
    let cap = capitalize(first);
    s[0] = &cap;
    format!("{}.", s.join(" "))
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub struct KeywordCorpus {
    pub corpus: Corpus,
    pub queries: Vec<Query>,
    pub qrels: QrelSet,
}

/// `n_queries` queries each matched to one keyword document, plus
/// `n_distractors` keyword-free documents. Document ids start at
/// `id_offset + 1`, query ids at `id_offset + 1`.
pub fn keyword_corpus(
    n_queries: usize,
    n_distractors: usize,
    seed: u64,
    id_offset: u64,
) -> KeywordCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = std::collections::HashSet::new();
    let keywords = fresh_words(&mut rng, n_queries, 4, &mut taken);
    let mut docs = Vec::new();
    let mut queries = Vec::new();
    let mut qrels = QrelSet::new();
    let total = n_queries + n_distractors;
    // interleave keyword and distractor documents
    let mut order: Vec<Option<usize>> = (0..n_queries)
        .map(Some)
        .chain((0..n_distractors).map(|_| None))
        .collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    for (pos, slot) in order.into_iter().enumerate() {
        let doc_id = id_offset + pos as u64 + 1;
        let mut paras = Vec::new();
        for p in 0..2 {
            let mut sents: Vec<String> = (0..3).map(|_| filler_sentence(&mut rng, 7)).collect();
            if let (Some(qi), 0) = (slot, p) {
                let kw = &keywords[qi];
                sents[1] = format!("The {kw} technique is central here.");
            }
            paras.push(sents.join(" "));
        }
        docs.push(
            Document::new(
                doc_id,
                format!("Synthetic document {doc_id}"),
                paras.join("\n\n"),
            )
            .with_domain("synthetic"),
        );
        if let Some(qi) = slot {
            let query_id = id_offset + qi as u64 + 1;
            queries.push(Query::new(query_id, keywords[qi].clone()));
            qrels.insert(query_id, doc_id);
        }
    }
    debug_assert_eq!(docs.len(), total);
    queries.sort_by_key(|q| q.query_id);
    KeywordCorpus {
        corpus: Corpus::new(docs).expect("ids are unique"),
        queries,
        qrels,
    }
}

pub struct ToyQa {
    pub corpus: Corpus,
    pub examples: Vec<QAExample>,
    pub keywords: Vec<String>,
}

/// `classes` answer classes with `docs_per_class` documents each and
/// `examples` queries spread round-robin over the classes.
pub fn toy_qa(classes: usize, examples: usize, docs_per_class: usize, seed: u64) -> ToyQa {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = std::collections::HashSet::new();
    let keywords = fresh_words(&mut rng, classes, 3, &mut taken);
    let mut docs = Vec::new();
    for (c, kw) in keywords.iter().enumerate() {
        for j in 0..docs_per_class {
            let doc_id = (c * docs_per_class + j + 1) as u64;
            let body = format!(
                "{} Notes on {kw} and {kw} usage. {}\n\n{}",
                filler_sentence(&mut rng, 6),
                filler_sentence(&mut rng, 6),
                filler_sentence(&mut rng, 8)
            );
            docs.push(Document::new(doc_id, format!("{kw} {j}"), body).with_domain("toy"));
        }
    }
    let examples = (0..examples)
        .map(|i| {
            let gold = i % classes;
            let extra: Vec<&str> = (0..2).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
            QAExample {
                query: Query::new(
                    i as u64 + 1,
                    format!("{} {}", keywords[gold], extra.join(" ")),
                ),
                gold,
            }
        })
        .collect();
    ToyQa {
        corpus: Corpus::new(docs).expect("ids are unique"),
        examples,
        keywords,
    }
}

/// CISI-format text for a synthetic collection.
pub struct CisiFiles {
    pub all: String,
    pub qry: String,
    pub rel: String,
}

/// Topic-clustered collection in CISI layout. Each document belongs to one
/// topic and draws most of its vocabulary from it; a query's relevant
/// documents are the ones sharing its topic.
pub fn cisi_like(n_docs: usize, n_queries: usize, n_topics: usize, seed: u64) -> CisiFiles {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = std::collections::HashSet::new();
    let topics: Vec<Vec<String>> = (0..n_topics)
        .map(|_| fresh_words(&mut rng, 14, 3, &mut taken))
        .collect();
    let mut all = String::new();
    let mut doc_topic = Vec::with_capacity(n_docs);
    for d in 1..=n_docs {
        let t = rng.random_range(0..n_topics);
        doc_topic.push(t);
        let mut sents = Vec::new();
        for _ in 0..rng.random_range(3..7) {
            let mut words: Vec<String> = Vec::new();
            for _ in 0..rng.random_range(6..12) {
                if rng.random_bool(0.45) {
                    words.push(topics[t].choose(&mut rng).unwrap().clone());
                } else {
                    words.push(FILLER.choose(&mut rng).unwrap().to_string());
                }
            }
            words[0] = capitalize(&words[0]);
            sents.push(format!("{}.", words.join(" ")));
        }
        // wrap like the CISI abstracts, with a paragraph break midway
        let half = sents.len() / 2;
        let body = format!(
            "{}\n\n{}",
            wrap(&sents[..half].join(" ")),
            wrap(&sents[half..].join(" "))
        );
        all.push_str(&format!(
            ".I {d}\n.T\n{} {}\n.A\nAuthor, A.\n.W\n{body}\n.X\n{d}\t5\t{d}\n",
            capitalize(&topics[t][0]),
            topics[t][1]
        ));
    }
    let mut qry = String::new();
    let mut rel = String::new();
    for q in 1..=n_queries {
        let t = (q - 1) % n_topics;
        let words: Vec<&str> = (0..6)
            .map(|_| topics[t].choose(&mut rng).unwrap().as_str())
            .collect();
        qry.push_str(&format!(
            ".I {q}\n.W\nWhat is known about {}?\n",
            words.join(" ")
        ));
        for (d, &dt) in doc_topic.iter().enumerate() {
            if dt == t {
                rel.push_str(&format!("{q} {} 0 0.000000\n", d + 1));
            }
        }
    }
    CisiFiles { all, qry, rel }
}

fn wrap(text: &str) -> String {
    let mut out = String::new();
    let mut line = 0;
    for w in text.split_whitespace() {
        if line > 0 && line + w.len() > 70 {
            out.push('\n');
            line = 0;
        } else if line > 0 {
            out.push(' ');
            line += 1;
        }
        out.push_str(w);
        line += w.len();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_cisi_documents, parse_cisi_qrels, parse_cisi_queries};

    #[test]
    fn keyword_corpus_shape() {
        let kc = keyword_corpus(10, 5, 1, 1000);
        assert_eq!(kc.corpus.len(), 15);
        assert_eq!(kc.queries.len(), 10);
        for q in &kc.queries {
            let rel = kc.qrels.relevant(q.query_id).unwrap();
            assert_eq!(rel.len(), 1);
            let holders: Vec<_> = kc
                .corpus
                .documents()
                .iter()
                .filter(|d| d.body.contains(&q.text))
                .collect();
            assert_eq!(holders.len(), 1);
            assert!(rel.contains(&holders[0].doc_id));
        }
    }

    #[test]
    fn cisi_like_parses() {
        let f = cisi_like(50, 6, 3, 2);
        assert_eq!(parse_cisi_documents(&f.all).unwrap().len(), 50);
        assert_eq!(parse_cisi_queries(&f.qry).unwrap().len(), 6);
        assert_eq!(parse_cisi_qrels(&f.rel).unwrap().len(), 6);
    }

    #[test]
    fn toy_is_deterministic() {
        let a = toy_qa(4, 12, 2, 3);
        let b = toy_qa(4, 12, 2, 3);
        assert_eq!(a.examples, b.examples);
        assert_eq!(a.corpus, b.corpus);
    }
}
