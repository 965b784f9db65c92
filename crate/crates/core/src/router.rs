//! Cross-layer routing and context fusion.
//!
//! Each layer is reduced to one score (mean or max of its top-k hit
//! similarities), the scores go through a temperature softmax to give the
//! routing weights, each layer's hits are collapsed into a readout vector,
//! and the readouts are summed under the routing weights into the fused
//! context.

use serde::{Deserialize, Serialize};

use crate::corpus::UnitId;
use crate::embedder::Vector;
use crate::error::{Error, Result};
use crate::index::{search_layer, Hit, LayerMemory, MemoryHierarchy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LayerScoreMode {
    #[default]
    MeanTopk,
    Max,
}

impl std::str::FromStr for LayerScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_topk" => Ok(Self::MeanTopk),
            "max" => Ok(Self::Max),
            _ => Err(Error::Config(format!("unknown layer score mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterConfig {
    pub k_per_layer: usize,
    pub temperature: f64,
    pub layer_score_mode: LayerScoreMode,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            k_per_layer: 5,
            temperature: 1.0,
            layer_score_mode: LayerScoreMode::MeanTopk,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.k_per_layer == 0 {
            return Err(Error::Config("k_per_layer must be at least 1".into()));
        }
        Ok(())
    }
}

/// Distribution over layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoutingWeights(Vec<f64>);

impl RoutingWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&a| a > 0.0)
            .map(|&a| a * a.ln())
            .sum::<f64>()
    }

    /// Convex combination `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, other: &RoutingWeights, alpha: f64) -> RoutingWeights {
        RoutingWeights(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                .collect(),
        )
    }
}

impl From<Vec<f64>> for RoutingWeights {
    fn from(v: Vec<f64>) -> Self {
        RoutingWeights(v)
    }
}

/// One (layer, unit) route from the query to a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalPath {
    pub layer: usize,
    pub unit_id: UnitId,
    pub doc_id: u64,
    pub sim: f64,
    pub within_layer_weight: f64,
    pub path_confidence: f64,
    #[serde(skip)]
    pub(crate) row: usize,
}

impl RetrievalPath {
    pub(crate) fn hit(&self) -> Hit {
        Hit {
            unit_id: self.unit_id,
            doc_id: self.doc_id,
            sim: self.sim,
            row: self.row,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedContext {
    pub c: Vector,
    pub paths: Vec<RetrievalPath>,
    pub weights: RoutingWeights,
    /// Per-layer scores; empty layers hold `-inf` (serialized as null).
    pub scores: Vec<f64>,
}

impl FusedContext {
    /// Hits of layer `l` (1-based) still present in the context.
    pub fn layer_hits(&self, l: usize) -> Vec<Hit> {
        self.paths
            .iter()
            .filter(|p| p.layer == l)
            .map(RetrievalPath::hit)
            .collect()
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }
}

pub struct LayerScores {
    pub scores: Vec<f64>,
    pub hits: Vec<Vec<Hit>>,
}

/// Reduce a layer's hits to a scalar; `-inf` for an empty layer.
pub fn layer_score(hits: &[Hit], mode: LayerScoreMode) -> f64 {
    if hits.is_empty() {
        return f64::NEG_INFINITY;
    }
    match mode {
        LayerScoreMode::MeanTopk => hits.iter().map(|h| h.sim).sum::<f64>() / hits.len() as f64,
        LayerScoreMode::Max => hits.iter().map(|h| h.sim).fold(f64::NEG_INFINITY, f64::max),
    }
}

pub fn layer_scores(
    hier: &MemoryHierarchy,
    encodings: &[Vector],
    cfg: &RouterConfig,
) -> Result<LayerScores> {
    if encodings.len() != hier.depth() {
        return Err(Error::Routing(format!(
            "{} query encodings for a depth-{} hierarchy",
            encodings.len(),
            hier.depth()
        )));
    }
    let hits: Vec<Vec<Hit>> = hier
        .layers()
        .iter()
        .zip(encodings)
        .map(|(mem, h)| search_layer(mem, h, cfg.k_per_layer))
        .collect();
    let scores: Vec<f64> = hits
        .iter()
        .map(|h| layer_score(h, cfg.layer_score_mode))
        .collect();
    if scores.iter().all(|s| *s == f64::NEG_INFINITY) {
        return Err(Error::Routing("no layer returned any hit".into()));
    }
    Ok(LayerScores { scores, hits })
}

/// Temperature softmax over layer scores. `-inf` entries get weight 0.
pub fn routing_weights(scores: &[f64], temperature: f64) -> Result<RoutingWeights> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let max = scores
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Routing("no finite layer score".into()));
    }
    Ok(RoutingWeights(softmax_shifted(scores, max, temperature)))
}

fn softmax_shifted(scores: &[f64], max: f64, temperature: f64) -> Vec<f64> {
    let exps: Vec<f64> = scores
        .iter()
        .map(|&s| {
            if s.is_finite() {
                ((s - max) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Softmax (temperature 1) over the hits' similarities.
pub fn within_layer_weights(hits: &[Hit]) -> Vec<f64> {
    if hits.is_empty() {
        return Vec::new();
    }
    let sims: Vec<f64> = hits.iter().map(|h| h.sim).collect();
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    softmax_shifted(&sims, max, 1.0)
}

/// Similarity-softmax weighted sum of the hits' stored vectors. Not
/// re-normalized. Empty hits give the zero vector.
pub fn readout(hits: &[Hit], mem: &LayerMemory) -> Vector {
    let mut out = Vector::zeros(mem.dim());
    for (hit, w) in hits.iter().zip(within_layer_weights(hits)) {
        out.add_scaled(w, mem.row(hit.row));
    }
    out
}

/// `sum_l weights[l] * readouts[l]`.
pub fn fuse(weights: &RoutingWeights, readouts: &[Vector]) -> Result<Vector> {
    if weights.len() != readouts.len() {
        return Err(Error::Invariant(format!(
            "{} routing weights for {} readouts",
            weights.len(),
            readouts.len()
        )));
    }
    let dim = readouts.first().map_or(0, Vector::dim);
    if readouts.iter().any(|r| r.dim() != dim) {
        return Err(Error::Invariant("readouts differ in dimension".into()));
    }
    let mut c = Vector::zeros(dim);
    for (a, r) in weights.as_slice().iter().zip(readouts) {
        c.add_scaled(*a, r);
    }
    Ok(c)
}

/// Build a fused context from per-layer hits (layer `l` at index `l - 1`).
pub fn assemble(
    hier: &MemoryHierarchy,
    hits: &[Vec<Hit>],
    cfg: &RouterConfig,
) -> Result<FusedContext> {
    let scores: Vec<f64> = hits
        .iter()
        .map(|h| layer_score(h, cfg.layer_score_mode))
        .collect();
    let weights = routing_weights(&scores, cfg.temperature)?;
    let readouts: Vec<Vector> = hits
        .iter()
        .zip(hier.layers())
        .map(|(h, mem)| readout(h, mem))
        .collect();
    let c = fuse(&weights, &readouts)?;
    let mut paths = Vec::new();
    for (li, layer_hits) in hits.iter().enumerate() {
        let a = weights.as_slice()[li];
        for (hit, w) in layer_hits.iter().zip(within_layer_weights(layer_hits)) {
            paths.push(RetrievalPath {
                layer: li + 1,
                unit_id: hit.unit_id,
                doc_id: hit.doc_id,
                sim: hit.sim,
                within_layer_weight: w,
                path_confidence: a * w,
                row: hit.row,
            });
        }
    }
    Ok(FusedContext {
        c,
        paths,
        weights,
        scores,
    })
}

/// Search every layer and fuse.
pub fn route(
    hier: &MemoryHierarchy,
    encodings: &[Vector],
    cfg: &RouterConfig,
) -> Result<FusedContext> {
    cfg.validate()?;
    let LayerScores { hits, .. } = layer_scores(hier, encodings, cfg)?;
    assemble(hier, &hits, cfg)
}
