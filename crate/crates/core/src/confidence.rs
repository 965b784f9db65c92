//! Uncertainty terms, the regularized objective, and path gating.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::embedder::Vector;
use crate::error::{Error, Result};
use crate::hashing::mix_seeds;
use crate::index::{Hit, MemoryHierarchy};
use crate::router::{assemble, FusedContext, RouterConfig};

const SIMPLEX_TOL: f64 = 1e-9;

/// A probability vector over `V` outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Distribution("empty".into()));
        }
        if let Some(x) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::Distribution(format!(
                "entry {x} is not a finite non-negative"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Distribution(format!("entries sum to {sum}")));
        }
        Ok(Distribution(p))
    }

    pub fn uniform(v: usize) -> Self {
        Distribution(vec![1.0 / v as f64; v])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most probable outcome; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub(crate) fn from_softmax(p: Vec<f64>) -> Self {
        Distribution(p)
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(d: &Distribution) -> f64 {
    -d.0.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Mean over outcomes of the across-sample variance (divisor `K`).
pub fn ensemble_variance(samples: &[Distribution]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Config(format!(
            "ensemble variance needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let v = samples[0].len();
    if samples.iter().any(|s| s.len() != v) {
        return Err(Error::Distribution(
            "ensemble samples differ in length".into(),
        ));
    }
    let k = samples.len() as f64;
    let mut total = 0.0;
    // deviations are taken from the first sample so identical samples give
    // exactly zero
    for i in 0..v {
        let origin = samples[0].0[i];
        let (s1, s2) = samples.iter().fold((0.0, 0.0), |(s1, s2), s| {
            let d = s.0[i] - origin;
            (s1 + d, s2 + d * d)
        });
        let m = s1 / k;
        total += (s2 / k - m * m).max(0.0);
    }
    Ok(total / v as f64)
}

/// Spread of one distribution around uniform: `(1/V) sum (p_i - 1/V)^2`.
pub fn intra_variance(d: &Distribution) -> f64 {
    let v = d.len() as f64;
    d.0.iter().map(|p| (p - 1.0 / v).powi(2)).sum::<f64>() / v
}

/// `l_gen + lambda1 * h + lambda2 * var`.
pub fn combined_objective(l_gen: f64, h: f64, var: f64, lambda1: f64, lambda2: f64) -> Result<f64> {
    let total = l_gen + lambda1 * h + lambda2 * var;
    if [l_gen, h, var, lambda1, lambda2, total]
        .iter()
        .all(|x| x.is_finite())
    {
        Ok(total)
    } else {
        Err(Error::Config(format!(
            "non-finite objective input (l_gen={l_gen}, H={h}, Var={var})"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarMode {
    /// Variance across perturbed forward passes.
    #[default]
    Ensemble,
    /// Variance of a single distribution's entries around uniform.
    Intra,
}

impl std::str::FromStr for VarMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensemble" => Ok(Self::Ensemble),
            "intra" => Ok(Self::Intra),
            _ => Err(Error::Config(format!("unknown var mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub tau_path: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub ensemble_k: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub var_mode: VarMode,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            tau_path: 0.0,
            lambda1: 0.0,
            lambda2: 0.0,
            ensemble_k: 8,
            noise_sigma: 0.05,
            seed: 0,
            var_mode: VarMode::Ensemble,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_path) {
            return Err(Error::Config(format!(
                "tau_path {} outside [0, 1]",
                self.tau_path
            )));
        }
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::Config(format!(
                "lambda1 {} must be >= 0",
                self.lambda1
            )));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::Config(format!(
                "lambda2 {} must be >= 0",
                self.lambda2
            )));
        }
        if self.ensemble_k < 2 {
            return Err(Error::Config(format!("ensemble_k {} < 2", self.ensemble_k)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma {} must be >= 0",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Add seeded Gaussian noise to `c`. The stream depends only on
/// `(seed, sample)`, so passes can be replayed or run in any order.
pub fn perturb(c: &Vector, sigma: f64, seed: u64, sample: u64) -> Vector {
    if sigma == 0.0 {
        return c.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seeds(seed, sample));
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    c.iter()
        .map(|x| x + normal.sample(&mut rng))
        .collect::<Vec<_>>()
        .into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub entropy: f64,
    pub variance: f64,
    pub l_gen: f64,
    pub total: f64,
    pub kept_paths: usize,
    pub dropped_paths: usize,
    pub gate_bypassed: bool,
}

/// Result of gating a context.
#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    pub context: FusedContext,
    pub kept: usize,
    pub dropped: usize,
    pub bypassed: bool,
}

/// Drop paths whose confidence is below `tau` and recompute the context
/// over the survivors. If every path would go, nothing is dropped and the
/// outcome is flagged as bypassed.
pub fn filter_paths(
    hier: &MemoryHierarchy,
    ctx: &FusedContext,
    tau: f64,
    router: &RouterConfig,
) -> Result<GateOutcome> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau_path {tau} outside [0, 1]")));
    }
    let total = ctx.paths.len();
    let kept = ctx
        .paths
        .iter()
        .filter(|p| p.path_confidence >= tau)
        .count();
    if kept == total || kept == 0 {
        return Ok(GateOutcome {
            context: ctx.clone(),
            kept: total,
            dropped: 0,
            bypassed: kept == 0 && total > 0,
        });
    }
    let mut hits: Vec<Vec<Hit>> = vec![Vec::new(); ctx.depth()];
    for p in ctx.paths.iter().filter(|p| p.path_confidence >= tau) {
        hits[p.layer - 1].push(p.hit());
    }
    Ok(GateOutcome {
        context: assemble(hier, &hits, router)?,
        kept,
        dropped: total - kept,
        bypassed: false,
    })
}
