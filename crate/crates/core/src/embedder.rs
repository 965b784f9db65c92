//! Per-layer hashed embeddings.
//!
//! Every layer gets its own embedding function: the same signed feature
//! hashing, but seeded with `hash_seed ^ layer_salt(layer)` so that the
//! layers live in decorrelated coordinate systems. Features are lowercase
//! alphanumeric word unigrams plus character n-grams of each word padded as
//! `<word>`.

use std::collections::HashMap;
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::MAX_DEPTH;
use crate::error::{Error, Result};
use crate::hashing::{hash64, splitmix64};

/// A dense double-precision vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        self.dot(&self.0).sqrt()
    }

    /// True for the degenerate embedding of a featureless text.
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Scale to unit L2 norm; zero vectors are returned unchanged.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.0.iter_mut().for_each(|x| *x /= n);
        }
        self
    }

    pub(crate) fn add_scaled(&mut self, w: f64, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += w * b;
        }
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Sequential dot product. Search and its tests both rely on this exact
/// summation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub dim: usize,
    pub char_ngram_range: (usize, usize),
    pub hash_seed: u64,
    /// Collapse all layer salts to zero, sharing one embedding function
    /// across layers (ablation switch).
    #[serde(default)]
    pub shared_phi: bool,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec {
            dim: 256,
            char_ngram_range: (3, 5),
            hash_seed: 0,
            shared_phi: false,
        }
    }
}

impl EmbedderSpec {
    pub fn with_dim(dim: usize) -> Self {
        EmbedderSpec {
            dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 8 {
            return Err(Error::Config(format!("embedding dim {} < 8", self.dim)));
        }
        let (lo, hi) = self.char_ngram_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("bad char n-gram range ({lo}, {hi})")));
        }
        Ok(())
    }

    pub fn layer_salt(&self, layer: usize) -> u64 {
        if self.shared_phi {
            0
        } else {
            splitmix64(layer as u64)
        }
    }
}

fn for_each_feature(text: &str, (lo, hi): (usize, usize), mut f: impl FnMut(&[u8])) {
    let lower = text.to_lowercase();
    let mut buf = Vec::with_capacity(64);
    for word in lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        buf.clear();
        buf.extend_from_slice(b"w\x01");
        buf.extend_from_slice(word.as_bytes());
        f(&buf);

        let padded: Vec<char> = std::iter::once('<')
            .chain(word.chars())
            .chain(std::iter::once('>'))
            .collect();
        for n in lo..=hi {
            for gram in padded.windows(n) {
                buf.clear();
                buf.extend_from_slice(b"c\x01");
                for c in gram {
                    let mut tmp = [0u8; 4];
                    buf.extend_from_slice(c.encode_utf8(&mut tmp).as_bytes());
                }
                f(&buf);
            }
        }
    }
}

/// Embed `text` with the layer-`layer` function. Texts without any feature
/// yield the zero vector; check [`Vector::is_zero`].
pub fn embed(text: &str, layer: usize, spec: &EmbedderSpec) -> Vector {
    debug_assert!((1..=MAX_DEPTH).contains(&layer));
    let seed = spec.hash_seed ^ spec.layer_salt(layer);
    let mut acc = vec![0.0f64; spec.dim];
    for_each_feature(text, spec.char_ngram_range, |feat| {
        let h = hash64(seed, feat);
        let idx = (h % spec.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[idx] += sign;
    });
    Vector(acc).normalized()
}

/// Embed a query once per layer, for layers `1..=depth`.
pub fn embed_layers(text: &str, depth: usize, spec: &EmbedderSpec) -> Vec<Vector> {
    (1..=depth).map(|l| embed(text, l, spec)).collect()
}

/// Parse `<unit_id> <v1> ... <v_dim>` lines; vectors are normalized on load.
pub fn parse_external_vectors(stream: &str) -> Result<HashMap<String, Vector>> {
    let mut out = HashMap::new();
    let mut dim = None;
    for (idx, line) in stream.lines().enumerate() {
        let lineno = idx + 1;
        let mut cols = line.split_whitespace();
        let Some(id) = cols.next() else { continue };
        let values = cols
            .map(|c| {
                let v: f64 = c
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("{c:?} is not a number")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::parse(lineno, format!("non-finite value {c:?}")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(Error::parse(
                lineno,
                format!("unit {id:?} has no components"),
            ));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::parse(
                    lineno,
                    format!(
                        "dimension {} differs from {d} on earlier lines",
                        values.len()
                    ),
                ))
            }
            Some(_) => {}
        }
        out.insert(id.to_string(), Vector(values).normalized());
    }
    Ok(out)
}

pub fn load_external_vectors(path: &Path) -> Result<HashMap<String, Vector>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_external_vectors(&text)
}
