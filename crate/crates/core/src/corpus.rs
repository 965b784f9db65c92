//! Corpus ingestion and granularity segmentation.
//!
//! Documents, queries and relevance judgments are read either from
//! Cranfield-style files (`.I` / `.T` / `.A` / `.W` / `.X` markers, as used
//! by CISI) or from JSONL. Each document is then cut into units at up to five
//! granularity layers:
//!
//! | layer | unit |
//! |-------|------|
//! | 1 | whole document |
//! | 2 | paragraphs (blank-line separated), or 64-token windows if there are none |
//! | 3 | sentences |
//! | 4 | 16-token windows, stride 8 |
//! | 5 | 8-token windows, stride 4 |

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing;

/// Deepest supported layer.
pub const MAX_DEPTH: usize = 5;

pub const DEFAULT_DOMAIN: &str = "default";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: u64,
    pub title: String,
    pub body: String,
    pub domain_tag: String,
}

impl Document {
    pub fn new(doc_id: u64, title: impl Into<String>, body: impl Into<String>) -> Self {
        Document {
            doc_id,
            title: title.into(),
            body: body.into(),
            domain_tag: DEFAULT_DOMAIN.to_string(),
        }
    }

    pub fn with_domain(mut self, tag: impl Into<String>) -> Self {
        self.domain_tag = tag.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: u64,
    pub text: String,
}

impl Query {
    pub fn new(query_id: u64, text: impl Into<String>) -> Self {
        Query {
            query_id,
            text: text.into(),
        }
    }
}

/// Relevance judgments: query id to the set of relevant document ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrelSet {
    map: BTreeMap<u64, BTreeSet<u64>>,
}

impl QrelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: u64, doc_id: u64) {
        self.map.entry(query_id).or_default().insert(doc_id);
    }

    pub fn relevant(&self, query_id: u64) -> Option<&BTreeSet<u64>> {
        self.map.get(&query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.map.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &BTreeSet<u64>)> {
        self.map.iter().map(|(q, d)| (*q, d))
    }

    /// Merge another judgment set into this one.
    pub fn extend(&mut self, other: &QrelSet) {
        for (q, docs) in other.iter() {
            for &d in docs {
                self.insert(q, d);
            }
        }
    }

    /// `(query_id, doc_id)` pairs whose document is absent from `corpus`.
    pub fn missing_documents(&self, corpus: &Corpus) -> Vec<(u64, u64)> {
        let ids: HashSet<u64> = corpus.documents().iter().map(|d| d.doc_id).collect();
        self.iter()
            .flat_map(|(q, docs)| docs.iter().map(move |&d| (q, d)))
            .filter(|(_, d)| !ids.contains(d))
            .collect()
    }

    /// Restrict to documents present in `corpus`, dropping queries left empty.
    pub fn restricted_to(&self, corpus: &Corpus) -> QrelSet {
        let ids: HashSet<u64> = corpus.documents().iter().map(|d| d.doc_id).collect();
        let mut out = QrelSet::new();
        for (q, docs) in self.iter() {
            for d in docs.iter().filter(|d| ids.contains(d)) {
                out.insert(q, *d);
            }
        }
        out
    }
}

/// An ordered collection of documents with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for d in &documents {
            if !seen.insert(d.doc_id) {
                return Err(Error::Corpus(format!("duplicate document id {}", d.doc_id)));
            }
        }
        Ok(Corpus { documents })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn with_domain(mut self, tag: &str) -> Self {
        for d in &mut self.documents {
            d.domain_tag = tag.to_string();
        }
        self
    }

    /// Hash of the canonical JSONL serialization.
    pub fn content_hash(&self) -> String {
        hashing::hash_hex(write_documents_jsonl(&self.documents).as_bytes())
    }
}

/// Opaque unit identifier. Orders by (document, layer, ordinal), which is
/// the tie-break order used by search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UnitId {
    pub doc_id: u64,
    pub layer: u8,
    pub ordinal: u32,
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.doc_id, self.layer, self.ordinal)
    }
}

impl FromStr for UnitId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Corpus(format!("malformed unit id {s:?}"));
        let mut parts = s.split(':');
        let (Some(d), Some(l), Some(o), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        Ok(UnitId {
            doc_id: d.parse().map_err(|_| bad())?,
            layer: l.parse().map_err(|_| bad())?,
            ordinal: o.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for UnitId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for UnitId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One indexable span of a document at a given layer. `char_span` holds
/// byte offsets into the parent body (always on UTF-8 boundaries), so
/// `text == body[span.0..span.1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GranularUnit {
    pub unit_id: UnitId,
    pub doc_id: u64,
    pub layer: usize,
    pub text: String,
    pub char_span: (usize, usize),
}

/// Per-layer segmentation rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSpec {
    /// Window size used for layer 2 when a body has no blank lines.
    pub paragraph_fallback_tokens: usize,
    /// Minimum non-space characters for a sentence break to be accepted.
    pub sentence_min_chars: usize,
    /// Window sizes for layers 4 and 5.
    pub window_tokens: [usize; 2],
}

impl Default for SegmentationSpec {
    fn default() -> Self {
        SegmentationSpec {
            paragraph_fallback_tokens: 64,
            sentence_min_chars: 2,
            window_tokens: [16, 8],
        }
    }
}

/// Cut `doc` into units for `layer`.
pub fn segment(doc: &Document, layer: usize, spec: &SegmentationSpec) -> Result<Vec<GranularUnit>> {
    if !(1..=MAX_DEPTH).contains(&layer) {
        return Err(Error::Config(format!(
            "layer {layer} outside [1, {MAX_DEPTH}]"
        )));
    }
    let body = doc.body.as_str();
    let Some(whole) = trim_span(body, 0, body.len()) else {
        log::warn!("document {} has an empty body; skipped", doc.doc_id);
        return Ok(Vec::new());
    };
    let spans = match layer {
        1 => vec![whole],
        2 => {
            let paras = paragraphs(body);
            if paras.len() > 1 {
                paras
            } else {
                let n = spec.paragraph_fallback_tokens.max(1);
                windows(&tokens(body, whole), n, n)
            }
        }
        3 => paragraphs(body)
            .into_iter()
            .flat_map(|p| sentences(body, p, spec.sentence_min_chars))
            .collect(),
        _ => {
            let n = spec.window_tokens[layer - 4].max(1);
            windows(&tokens(body, whole), n, (n / 2).max(1))
        }
    };
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| GranularUnit {
            unit_id: UnitId {
                doc_id: doc.doc_id,
                layer: layer as u8,
                ordinal: i as u32,
            },
            doc_id: doc.doc_id,
            layer,
            text: body[s..e].to_string(),
            char_span: (s, e),
        })
        .collect())
}

fn trim_span(text: &str, start: usize, end: usize) -> Option<(usize, usize)> {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if trimmed.is_empty() {
        None
    } else {
        Some((start + lead, start + lead + trimmed.len()))
    }
}

/// Blank-line separated blocks, trimmed.
fn paragraphs(body: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut offset = 0;
    let mut current: Option<(usize, usize)> = None;
    for line in body.split_inclusive('\n') {
        let (s, e) = (offset, offset + line.len());
        offset = e;
        if line.trim().is_empty() {
            if let Some((ps, pe)) = current.take() {
                out.extend(trim_span(body, ps, pe));
            }
        } else {
            current = Some(match current {
                Some((ps, _)) => (ps, e),
                None => (s, e),
            });
        }
    }
    if let Some((ps, pe)) = current {
        out.extend(trim_span(body, ps, pe));
    }
    out
}

fn tokens(body: &str, (start, end): (usize, usize)) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut tok_start = None;
    for (i, c) in body[start..end].char_indices() {
        let i = start + i;
        match (c.is_whitespace(), tok_start) {
            (true, Some(s)) => {
                out.push((s, i));
                tok_start = None;
            }
            (false, None) => tok_start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = tok_start {
        out.push((s, end));
    }
    out
}

fn windows(toks: &[(usize, usize)], size: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let end = (i + size).min(toks.len());
        out.push((toks[i].0, toks[end - 1].1));
        if end == toks.len() {
            break;
        }
        i += stride;
    }
    out
}

/// Sentence spans inside one paragraph. A break happens after `.`, `!` or
/// `?` followed by whitespace, unless the candidate sentence is shorter than
/// `min_chars` non-space characters or the next word starts lowercase
/// (abbreviations such as "e.g. the").
fn sentences(body: &str, (start, end): (usize, usize), min_chars: usize) -> Vec<(usize, usize)> {
    let para = &body[start..end];
    let mut out = Vec::new();
    let mut sent_start = start;
    let mut chars = para.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let Some(&(_, next)) = chars.peek() else {
            continue;
        };
        if !next.is_whitespace() {
            continue;
        }
        let cut = start + i + c.len_utf8();
        let non_space = body[sent_start..cut]
            .chars()
            .filter(|c| !c.is_whitespace())
            .count();
        if non_space < min_chars {
            continue;
        }
        let following = body[cut..end].trim_start().chars().next();
        if following.is_some_and(char::is_lowercase) {
            continue;
        }
        out.extend(trim_span(body, sent_start, cut));
        sent_start = cut;
    }
    out.extend(trim_span(body, sent_start, end));
    out
}

// ---------------------------------------------------------------------------
// Cranfield / CISI format

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Title,
    Author,
    Words,
    Xref,
    Other,
}

struct CisiRecord {
    id: u64,
    title: Vec<String>,
    words: Vec<String>,
}

fn marker(line: &str) -> Option<(char, &str)> {
    let mut chars = line.chars();
    if chars.next() != Some('.') {
        return None;
    }
    let tag = chars.next().filter(char::is_ascii_uppercase)?;
    let rest = chars.as_str();
    if rest.is_empty() || rest.starts_with(char::is_whitespace) {
        Some((tag, rest.trim()))
    } else {
        None
    }
}

fn parse_cisi_records(stream: &str) -> Result<Vec<CisiRecord>> {
    let mut records: Vec<CisiRecord> = Vec::new();
    let mut seen = HashSet::new();
    let mut field = Field::Other;
    for (idx, line) in stream.lines().enumerate() {
        let lineno = idx + 1;
        if let Some((tag, rest)) = marker(line) {
            if tag == 'I' {
                let id: u64 = rest
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("malformed .I line {line:?}")))?;
                if !seen.insert(id) {
                    return Err(Error::parse(lineno, format!("duplicate record id {id}")));
                }
                records.push(CisiRecord {
                    id,
                    title: Vec::new(),
                    words: Vec::new(),
                });
                field = Field::Other;
                continue;
            }
            if records.is_empty() {
                return Err(Error::parse(
                    lineno,
                    "field marker before the first .I record",
                ));
            }
            field = match tag {
                'T' => Field::Title,
                'A' => Field::Author,
                'W' => Field::Words,
                'X' => Field::Xref,
                _ => Field::Other,
            };
            continue;
        }
        let Some(rec) = records.last_mut() else {
            if line.trim().is_empty() {
                continue;
            }
            return Err(Error::parse(lineno, "content before the first .I record"));
        };
        match field {
            Field::Title => rec.title.push(line.to_string()),
            Field::Words => rec.words.push(line.to_string()),
            Field::Author | Field::Xref | Field::Other => {}
        }
    }
    Ok(records)
}

fn join_field(lines: &[String]) -> String {
    lines.join("\n").trim().to_string()
}

/// Parse a CISI.ALL-style document file.
pub fn parse_cisi_documents(stream: &str) -> Result<Vec<Document>> {
    Ok(parse_cisi_records(stream)?
        .into_iter()
        .map(|r| Document::new(r.id, join_field(&r.title), join_field(&r.words)))
        .collect())
}

/// Parse a CISI.QRY-style query file; the query text is the `.W` field.
pub fn parse_cisi_queries(stream: &str) -> Result<Vec<Query>> {
    Ok(parse_cisi_records(stream)?
        .into_iter()
        .map(|r| Query::new(r.id, join_field(&r.words)))
        .collect())
}

/// Parse CISI.REL: whitespace-separated columns, first two are query and
/// document id.
pub fn parse_cisi_qrels(stream: &str) -> Result<QrelSet> {
    let mut qrels = QrelSet::new();
    for (idx, line) in stream.lines().enumerate() {
        let mut cols = line.split_whitespace();
        let Some(q) = cols.next() else { continue };
        let d = cols
            .next()
            .ok_or_else(|| Error::parse(idx + 1, "expected at least two columns"))?;
        let q = q
            .parse()
            .map_err(|_| Error::parse(idx + 1, format!("query id {q:?} is not an integer")))?;
        let d = d
            .parse()
            .map_err(|_| Error::parse(idx + 1, format!("document id {d:?} is not an integer")))?;
        qrels.insert(q, d);
    }
    Ok(qrels)
}

// ---------------------------------------------------------------------------
// JSONL

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    id: u64,
    #[serde(default)]
    title: Option<String>,
    body: String,
    #[serde(default)]
    domain: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryRecord {
    id: u64,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct QrelRecord {
    query_id: u64,
    doc_id: u64,
}

fn jsonl_records<T: serde::de::DeserializeOwned>(stream: &str) -> Result<Vec<T>> {
    stream
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string())))
        .collect()
}

pub fn parse_documents_jsonl(stream: &str) -> Result<Vec<Document>> {
    let docs: Vec<Document> = jsonl_records::<DocumentRecord>(stream)?
        .into_iter()
        .map(|r| Document {
            doc_id: r.id,
            title: r.title.unwrap_or_default(),
            body: r.body,
            domain_tag: r.domain.unwrap_or_else(|| DEFAULT_DOMAIN.to_string()),
        })
        .collect();
    let mut seen = HashSet::new();
    for (i, d) in docs.iter().enumerate() {
        if !seen.insert(d.doc_id) {
            return Err(Error::parse(
                i + 1,
                format!("duplicate record id {}", d.doc_id),
            ));
        }
    }
    Ok(docs)
}

pub fn parse_queries_jsonl(stream: &str) -> Result<Vec<Query>> {
    Ok(jsonl_records::<QueryRecord>(stream)?
        .into_iter()
        .map(|r| Query::new(r.id, r.text))
        .collect())
}

pub fn parse_qrels_jsonl(stream: &str) -> Result<QrelSet> {
    let mut qrels = QrelSet::new();
    for r in jsonl_records::<QrelRecord>(stream)? {
        qrels.insert(r.query_id, r.doc_id);
    }
    Ok(qrels)
}

pub fn write_documents_jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        let rec = DocumentRecord {
            id: d.doc_id,
            title: Some(d.title.clone()),
            body: d.body.clone(),
            domain: Some(d.domain_tag.clone()),
        };
        out.push_str(&serde_json::to_string(&rec).expect("document serializes"));
        out.push('\n');
    }
    out
}

pub fn write_queries_jsonl(queries: &[Query]) -> String {
    let mut out = String::new();
    for q in queries {
        let rec = QueryRecord {
            id: q.query_id,
            text: q.text.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("query serializes"));
        out.push('\n');
    }
    out
}

pub fn write_qrels_jsonl(qrels: &QrelSet) -> String {
    let mut out = String::new();
    for (query_id, docs) in qrels.iter() {
        for &doc_id in docs {
            let rec = QrelRecord { query_id, doc_id };
            out.push_str(&serde_json::to_string(&rec).expect("qrel serializes"));
            out.push('\n');
        }
    }
    out
}

/// Read a file as UTF-8, replacing invalid sequences.
pub fn read_text_lossy(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn looks_like_cisi(stream: &str) -> bool {
    stream
        .lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.starts_with(".I"))
}

/// Documents from either format, detected by the first non-blank line.
pub fn parse_documents_auto(stream: &str) -> Result<Vec<Document>> {
    if looks_like_cisi(stream) {
        parse_cisi_documents(stream)
    } else {
        parse_documents_jsonl(stream)
    }
}

pub fn parse_queries_auto(stream: &str) -> Result<Vec<Query>> {
    if looks_like_cisi(stream) {
        parse_cisi_queries(stream)
    } else {
        parse_queries_jsonl(stream)
    }
}

pub fn parse_qrels_auto(stream: &str) -> Result<QrelSet> {
    let first = stream.lines().find(|l| !l.trim().is_empty());
    if first.is_some_and(|l| l.trim_start().starts_with('{')) {
        parse_qrels_jsonl(stream)
    } else {
        parse_cisi_qrels(stream)
    }
}

// ---------------------------------------------------------------------------
// Domain mixing

/// Number of documents drawn from the second source for `ratio` and `size`.
pub fn mixed_count(ratio: f64, size: usize) -> usize {
    ((ratio * size as f64) + 1e-9).floor() as usize
}

/// Sample `size` documents: `floor(ratio * size)` from the second source and
/// the rest from the first, each relabelled with its source tag. Output keeps
/// first-source documents before second-source ones, each in source order.
pub fn mix_corpora(
    sources: &[(&Corpus, &str)],
    ratio: f64,
    size: usize,
    seed: u64,
) -> Result<Corpus> {
    let [(a, tag_a), (b, tag_b)] = sources else {
        return Err(Error::Config(format!(
            "mixing needs exactly two tagged corpora, got {}",
            sources.len()
        )));
    };
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("mix ratio {ratio} outside [0, 1]")));
    }
    let from_b = mixed_count(ratio, size);
    let from_a = size - from_b;
    if from_a > a.len() {
        return Err(Error::Corpus(format!(
            "source {tag_a:?} has {} documents, {from_a} requested",
            a.len()
        )));
    }
    if from_b > b.len() {
        return Err(Error::Corpus(format!(
            "source {tag_b:?} has {} documents, {from_b} requested",
            b.len()
        )));
    }
    let pick = |corpus: &Corpus, tag: &str, n: usize, stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(hashing::mix_seeds(seed, stream));
        let mut idx = rand::seq::index::sample(&mut rng, corpus.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter()
            .map(|i| corpus.documents()[i].clone().with_domain(tag))
            .collect::<Vec<_>>()
    };
    let mut docs = pick(a, tag_a, from_a, hashing::hash64(0, tag_a.as_bytes()));
    docs.extend(pick(b, tag_b, from_b, hashing::hash64(0, tag_b.as_bytes())));
    Corpus::new(docs).map_err(|e| Error::Corpus(format!("mixed sources share document ids: {e}")))
}
