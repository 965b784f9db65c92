//! The layered memory: one exact cosine index per granularity layer.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{segment, Corpus, SegmentationSpec, UnitId, MAX_DEPTH};
use crate::embedder::{dot, embed, EmbedderSpec, Vector};
use crate::error::{Error, Result};
use crate::hashing;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MGRAGIDX";

/// One layer of memory: unit-normalized rows, one per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMemory {
    layer: usize,
    dim: usize,
    unit_ids: Vec<UnitId>,
    vectors: Vec<f64>,
}

impl LayerMemory {
    pub fn new(layer: usize, dim: usize) -> Self {
        LayerMemory {
            layer,
            dim,
            unit_ids: Vec::new(),
            vectors: Vec::new(),
        }
    }

    /// Append a row. Zero vectors are rejected; other rows are normalized.
    pub fn push(&mut self, unit_id: UnitId, v: &Vector) -> Result<bool> {
        if v.dim() != self.dim {
            return Err(Error::Build(format!(
                "unit {unit_id} has dimension {}, layer expects {}",
                v.dim(),
                self.dim
            )));
        }
        if v.is_zero() {
            return Ok(false);
        }
        if !v.is_finite() {
            return Err(Error::Build(format!(
                "unit {unit_id} has non-finite components"
            )));
        }
        self.unit_ids.push(unit_id);
        self.vectors.extend_from_slice(&v.clone().normalized());
        Ok(true)
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_ids.is_empty()
    }

    pub fn unit_ids(&self) -> &[UnitId] {
        &self.unit_ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn doc_of(&self, i: usize) -> u64 {
        self.unit_ids[i].doc_id
    }

    pub fn position(&self, unit: &UnitId) -> Option<usize> {
        self.unit_ids.binary_search(unit).ok().or_else(|| {
            // rows pushed out of order (external vectors)
            self.unit_ids.iter().position(|u| u == unit)
        })
    }
}

/// A search result. `row` locates the unit's vector in its layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub unit_id: UnitId,
    pub doc_id: u64,
    pub sim: f64,
    #[serde(skip)]
    pub row: usize,
}

/// Exact top-`k` by descending similarity, ties broken by ascending unit id.
/// A zero query yields no hits.
pub fn search_layer(mem: &LayerMemory, query: &[f64], k: usize) -> Vec<Hit> {
    if k == 0 || mem.is_empty() || query.iter().all(|&x| x == 0.0) {
        return Vec::new();
    }
    let mut scored: Vec<(f64, usize)> = (0..mem.len())
        .map(|i| (dot(mem.row(i), query), i))
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| {
        b.0.total_cmp(&a.0)
            .then_with(|| mem.unit_ids[a.1].cmp(&mem.unit_ids[b.1]))
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(order);
    scored
        .into_iter()
        .map(|(sim, row)| Hit {
            unit_id: mem.unit_ids[row],
            doc_id: mem.doc_of(row),
            sim,
            row,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub corpus_hash: String,
    pub config_hash: String,
    pub depth: usize,
    pub dim: usize,
    pub documents: usize,
    pub skipped_documents: usize,
    pub layer_sizes: Vec<usize>,
    pub degenerate_units: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryHierarchy {
    layers: Vec<LayerMemory>,
    embedder: EmbedderSpec,
    segmentation: SegmentationSpec,
    manifest: Manifest,
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    version: u32,
    embedder: EmbedderSpec,
    segmentation: SegmentationSpec,
    manifest: Manifest,
    layers: Vec<LayerHeader>,
}

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    layer: usize,
    unit_ids: Vec<UnitId>,
}

fn config_hash(spec: &EmbedderSpec, seg: &SegmentationSpec, depth: usize) -> String {
    let cfg = serde_json::json!({ "embedder": spec, "segmentation": seg, "depth": depth });
    hashing::hash_hex(cfg.to_string().as_bytes())
}

impl MemoryHierarchy {
    pub fn build(corpus: &Corpus, spec: &EmbedderSpec, depth: usize) -> Result<Self> {
        Self::build_with(corpus, spec, &SegmentationSpec::default(), depth, None)
    }

    /// Build all layers. Units listed in `external` (keyed by unit id string)
    /// take that vector instead of the hashed embedding.
    pub fn build_with(
        corpus: &Corpus,
        spec: &EmbedderSpec,
        seg: &SegmentationSpec,
        depth: usize,
        external: Option<&HashMap<String, Vector>>,
    ) -> Result<Self> {
        spec.validate()?;
        if !(1..=MAX_DEPTH).contains(&depth) {
            return Err(Error::Config(format!(
                "depth {depth} outside [1, {MAX_DEPTH}]"
            )));
        }
        if corpus.is_empty() {
            return Err(Error::Build("corpus is empty".into()));
        }
        let mut layers: Vec<LayerMemory> =
            (1..=depth).map(|l| LayerMemory::new(l, spec.dim)).collect();
        let mut degenerate = vec![0usize; depth];
        let mut skipped = 0;
        for doc in corpus.documents() {
            if doc.body.trim().is_empty() {
                log::warn!("document {} has an empty body; skipped", doc.doc_id);
                skipped += 1;
                continue;
            }
            for (li, mem) in layers.iter_mut().enumerate() {
                let layer = li + 1;
                for unit in segment(doc, layer, seg)? {
                    let v = match external.and_then(|m| m.get(&unit.unit_id.to_string())) {
                        Some(v) => v.clone(),
                        None => embed(&unit.text, layer, spec),
                    };
                    if !mem.push(unit.unit_id, &v)? {
                        degenerate[li] += 1;
                    }
                }
            }
        }
        if layers.iter().all(LayerMemory::is_empty) {
            return Err(Error::Build("corpus has no indexable units".into()));
        }
        let manifest = Manifest {
            corpus_hash: corpus.content_hash(),
            config_hash: config_hash(spec, seg, depth),
            depth,
            dim: spec.dim,
            documents: corpus.len(),
            skipped_documents: skipped,
            layer_sizes: layers.iter().map(LayerMemory::len).collect(),
            degenerate_units: degenerate,
        };
        Ok(MemoryHierarchy {
            layers,
            embedder: spec.clone(),
            segmentation: seg.clone(),
            manifest,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerMemory] {
        &self.layers
    }

    /// Layer `l`, 1-based.
    pub fn layer(&self, l: usize) -> &LayerMemory {
        &self.layers[l - 1]
    }

    pub fn embedder(&self) -> &EmbedderSpec {
        &self.embedder
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Per-layer query encodings.
    pub fn encode_query(&self, text: &str) -> Vec<Vector> {
        crate::embedder::embed_layers(text, self.depth(), &self.embedder)
    }

    /// Warn and return false if `corpus` differs from the one indexed.
    pub fn check_corpus(&self, corpus: &Corpus) -> bool {
        let fresh = corpus.content_hash() == self.manifest.corpus_hash;
        if !fresh {
            log::warn!(
                "index manifest corpus hash {} does not match corpus {}; index may be stale",
                self.manifest.corpus_hash,
                corpus.content_hash()
            );
        }
        fresh
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = IndexHeader {
            version: FORMAT_VERSION,
            embedder: self.embedder.clone(),
            segmentation: self.segmentation.clone(),
            manifest: self.manifest.clone(),
            layers: self
                .layers
                .iter()
                .map(|m| LayerHeader {
                    layer: m.layer,
                    unit_ids: m.unit_ids.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let rows: usize = self.layers.iter().map(|m| m.vectors.len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + rows * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for m in &self.layers {
            for x in &m.vectors {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |what: &str| Error::Load(format!("truncated file: missing {what}"));
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(Error::Load("not an index file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(
            bytes
                .get(8..12)
                .ok_or_else(|| truncated("version"))?
                .try_into()
                .unwrap(),
        );
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(
            bytes
                .get(12..20)
                .ok_or_else(|| truncated("header length"))?
                .try_into()
                .unwrap(),
        ) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| truncated("header"))?;
        let header: IndexHeader = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| Error::Load(format!("corrupt header: {e}")))?;
        if header.version != version {
            return Err(Error::Load(
                "header version disagrees with file version".into(),
            ));
        }
        let dim = header.embedder.dim;
        let total: usize = header.layers.iter().map(|l| l.unit_ids.len() * dim).sum();
        let body = &bytes[header_end..];
        if body.len() < total * 8 {
            return Err(truncated("vector rows"));
        }
        if body.len() > total * 8 {
            return Err(Error::Load("trailing bytes after vector rows".into()));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let layers = header
            .layers
            .into_iter()
            .map(|lh| {
                let n = lh.unit_ids.len() * dim;
                LayerMemory {
                    layer: lh.layer,
                    dim,
                    unit_ids: lh.unit_ids,
                    vectors: values.by_ref().take(n).collect(),
                }
            })
            .collect::<Vec<_>>();
        for (i, m) in layers.iter().enumerate() {
            if m.layer != i + 1 {
                return Err(Error::Load(format!(
                    "layer {} stored at position {}",
                    m.layer,
                    i + 1
                )));
            }
        }
        if layers.len() != header.manifest.depth {
            return Err(Error::Load(
                "manifest depth disagrees with stored layers".into(),
            ));
        }
        Ok(MemoryHierarchy {
            layers,
            embedder: header.embedder,
            segmentation: header.segmentation,
            manifest: header.manifest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
