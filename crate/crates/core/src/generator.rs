//! Single-step conditional generator over a small answer vocabulary.
//!
//! `p(y | q, c) = softmax(W [h_q ; c] + b)` where `h_q` is the layer-1 query
//! encoding and `c` the fused (and gated) context. It is trained by
//! full-batch gradient descent on
//!
//! ```text
//! L = -ln p(gold) + lambda1 * H(p) + lambda2 * Var(p)
//! ```
//!
//! Retrieval, routing and gating are constants of the forward pass; the
//! gradient only flows into `W` and `b`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{
    combined_objective, ensemble_variance, entropy, filter_paths, intra_variance, perturb,
    ConfidenceReport, Distribution, GateConfig, VarMode,
};
use crate::corpus::Query;
use crate::embedder::Vector;
use crate::error::{Error, Result};
use crate::hashing::mix_seeds;
use crate::index::MemoryHierarchy;
use crate::router::{route, FusedContext, RouterConfig};

pub const PARAMS_VERSION: u32 = 1;
const NLL_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub version: u32,
    /// Answer vocabulary size `V`.
    pub classes: usize,
    /// Embedding dimension `d`; inputs have `2d` components.
    pub dim: usize,
    /// Row-major `V x 2d`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl GeneratorParams {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        GeneratorParams {
            version: PARAMS_VERSION,
            classes,
            dim,
            w: vec![0.0; classes * 2 * dim],
            b: vec![0.0; classes],
        }
    }

    /// Uniform entries in `[-scale, scale)`.
    pub fn random(classes: usize, dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(classes, dim);
        for x in p.w.iter_mut().chain(p.b.iter_mut()) {
            *x = rng.random_range(-scale..scale);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        2 * self.dim
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn validate(&self) -> Result<()> {
        if self.classes == 0
            || self.w.len() != self.classes * self.input_dim()
            || self.b.len() != self.classes
        {
            return Err(Error::Generator(format!(
                "parameter shapes inconsistent with V={} d={}",
                self.classes, self.dim
            )));
        }
        if self.version != PARAMS_VERSION {
            return Err(Error::Generator(format!(
                "unsupported params version {}",
                self.version
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.w.iter().chain(&self.b).all(|x| x.is_finite())
    }

    fn param_mut(&mut self, i: usize) -> &mut f64 {
        let nw = self.w.len();
        if i < nw {
            &mut self.w[i]
        } else {
            &mut self.b[i - nw]
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Gradient of the loss with respect to `W` (row-major) and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Gradient {
    fn zeros(p: &GeneratorParams) -> Self {
        Gradient {
            w: vec![0.0; p.w.len()],
            b: vec![0.0; p.b.len()],
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        if i < self.w.len() {
            self.w[i]
        } else {
            self.b[i - self.w.len()]
        }
    }

    pub fn norm(&self) -> f64 {
        self.w
            .iter()
            .chain(&self.b)
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    fn add_outer(&mut self, dz: &[f64], x: &[f64]) {
        let n = x.len();
        for (i, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (w, xj) in self.w[i * n..(i + 1) * n].iter_mut().zip(x) {
                *w += g * xj;
            }
            self.b[i] += g;
        }
    }

    fn scale(&mut self, s: f64) {
        self.w
            .iter_mut()
            .chain(self.b.iter_mut())
            .for_each(|x| *x *= s);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub query: Query,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub gate: GateConfig,
    pub router: RouterConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            epochs: 100,
            gate: GateConfig::default(),
            router: RouterConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        self.gate.validate()?;
        self.router.validate()
    }
}

/// Generator input `[h_q^(1) ; c]`.
pub fn features(encodings: &[Vector], ctx: &FusedContext) -> Vec<f64> {
    let mut x = encodings[0].to_vec();
    x.extend_from_slice(&ctx.c);
    x
}

fn logits(params: &GeneratorParams, x: &[f64]) -> Vec<f64> {
    let n = params.input_dim();
    (0..params.classes)
        .map(|i| crate::embedder::dot(&params.w[i * n..(i + 1) * n], x) + params.b[i])
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `softmax(W x + b)` for a prepared input vector.
pub fn predict_features(params: &GeneratorParams, x: &[f64]) -> Result<Distribution> {
    if x.len() != params.input_dim() {
        return Err(Error::Generator(format!(
            "input has {} components, model expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    Ok(Distribution::from_softmax(softmax(&logits(params, x))))
}

pub fn predict(
    params: &GeneratorParams,
    encodings: &[Vector],
    ctx: &FusedContext,
) -> Result<Distribution> {
    if encodings.is_empty() {
        return Err(Error::Generator("no query encodings".into()));
    }
    predict_features(params, &features(encodings, ctx))
}

/// `-ln p[gold]`, with `p` floored at 1e-300.
pub fn nll(d: &Distribution, gold: usize) -> Result<f64> {
    let p = d.as_slice().get(gold).ok_or_else(|| {
        Error::Generator(format!("gold {gold} outside vocabulary of {}", d.len()))
    })?;
    Ok(-p.max(NLL_FLOOR).ln())
}

/// The parameter-independent part of one example's forward pass: the
/// routed, gated input and its replayable perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    pub query_id: u64,
    pub gold: usize,
    pub x: Vec<f64>,
    pub perturbed: Vec<Vec<f64>>,
    pub kept_paths: usize,
    pub dropped_paths: usize,
    pub gate_bypassed: bool,
}

pub fn prepare(
    example: &QAExample,
    hier: &MemoryHierarchy,
    cfg: &TrainConfig,
) -> Result<PreparedExample> {
    let encodings = hier.encode_query(&example.query.text);
    let ctx = route(hier, &encodings, &cfg.router)?;
    let gate = filter_paths(hier, &ctx, cfg.gate.tau_path, &cfg.router)?;
    let x = features(&encodings, &gate.context);
    let seed = mix_seeds(cfg.gate.seed, example.query.query_id);
    let perturbed = match cfg.gate.var_mode {
        VarMode::Ensemble => (0..cfg.gate.ensemble_k as u64)
            .map(|k| {
                features(
                    &encodings,
                    &FusedContext {
                        c: perturb(&gate.context.c, cfg.gate.noise_sigma, seed, k),
                        ..gate.context.clone()
                    },
                )
            })
            .collect(),
        VarMode::Intra => Vec::new(),
    };
    Ok(PreparedExample {
        query_id: example.query.query_id,
        gold: example.gold,
        x,
        perturbed,
        kept_paths: gate.kept,
        dropped_paths: gate.dropped,
        gate_bypassed: gate.bypassed,
    })
}

pub fn prepare_all(
    dataset: &[QAExample],
    hier: &MemoryHierarchy,
    cfg: &TrainConfig,
) -> Result<Vec<PreparedExample>> {
    dataset.par_iter().map(|e| prepare(e, hier, cfg)).collect()
}

/// Loss and report for a prepared example.
pub fn loss_prepared(
    params: &GeneratorParams,
    ex: &PreparedExample,
    gate: &GateConfig,
) -> Result<(f64, ConfidenceReport)> {
    let p = predict_features(params, &ex.x)?;
    let l_gen = nll(&p, ex.gold)?;
    let h = entropy(&p);
    let var = match gate.var_mode {
        VarMode::Ensemble => {
            let samples = ex
                .perturbed
                .iter()
                .map(|x| predict_features(params, x))
                .collect::<Result<Vec<_>>>()?;
            ensemble_variance(&samples)?
        }
        VarMode::Intra => intra_variance(&p),
    };
    let total = combined_objective(l_gen, h, var, gate.lambda1, gate.lambda2)?;
    Ok((
        total,
        ConfidenceReport {
            entropy: h,
            variance: var,
            l_gen,
            total,
            kept_paths: ex.kept_paths,
            dropped_paths: ex.dropped_paths,
            gate_bypassed: ex.gate_bypassed,
        },
    ))
}

/// Back-propagate `g = dL/dp` through the softmax: `dz = p * (g - <p, g>)`.
fn softmax_backward(p: &[f64], g: &[f64]) -> Vec<f64> {
    let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pi, gi)| pi * (gi - inner)).collect()
}

/// Analytic gradient for a prepared example.
pub fn grad_prepared(
    params: &GeneratorParams,
    ex: &PreparedExample,
    gate: &GateConfig,
) -> Result<Gradient> {
    let mut grad = Gradient::zeros(params);
    let p = predict_features(params, &ex.x)?;
    let p = p.as_slice();
    let v = p.len();
    if ex.gold >= v {
        return Err(Error::Generator(format!(
            "gold {} outside vocabulary of {v}",
            ex.gold
        )));
    }

    // -ln p_gold
    let mut dz: Vec<f64> = p.to_vec();
    dz[ex.gold] -= 1.0;

    if gate.lambda1 != 0.0 {
        // dH/dz_j = -p_j (ln p_j + H)
        let h = -p
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|x| x * x.ln())
            .sum::<f64>();
        for (d, &pj) in dz.iter_mut().zip(p) {
            if pj > 0.0 {
                *d += gate.lambda1 * -pj * (pj.ln() + h);
            }
        }
    }

    if gate.lambda2 != 0.0 && gate.var_mode == VarMode::Intra {
        let g: Vec<f64> = p
            .iter()
            .map(|pi| gate.lambda2 * 2.0 / v as f64 * (pi - 1.0 / v as f64))
            .collect();
        for (d, extra) in dz.iter_mut().zip(softmax_backward(p, &g)) {
            *d += extra;
        }
    }
    grad.add_outer(&dz, &ex.x);

    if gate.lambda2 != 0.0 && gate.var_mode == VarMode::Ensemble {
        let samples = ex
            .perturbed
            .iter()
            .map(|x| predict_features(params, x).map(|d| d.as_slice().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let k = samples.len() as f64;
        let mean: Vec<f64> = (0..v)
            .map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / k)
            .collect();
        let scale = gate.lambda2 * 2.0 / (v as f64 * k);
        for (s, x) in samples.iter().zip(&ex.perturbed) {
            let g: Vec<f64> = s.iter().zip(&mean).map(|(a, m)| scale * (a - m)).collect();
            grad.add_outer(&softmax_backward(s, &g), x);
        }
    }
    Ok(grad)
}

pub fn total_loss(
    params: &GeneratorParams,
    example: &QAExample,
    hier: &MemoryHierarchy,
    cfg: &TrainConfig,
) -> Result<(f64, ConfidenceReport)> {
    loss_prepared(params, &prepare(example, hier, cfg)?, &cfg.gate)
}

pub fn grad(
    params: &GeneratorParams,
    example: &QAExample,
    hier: &MemoryHierarchy,
    cfg: &TrainConfig,
) -> Result<Gradient> {
    grad_prepared(params, &prepare(example, hier, cfg)?, &cfg.gate)
}

/// Mean loss over prepared examples.
pub fn batch_loss(
    params: &GeneratorParams,
    batch: &[PreparedExample],
    gate: &GateConfig,
) -> Result<f64> {
    let mut sum = 0.0;
    for ex in batch {
        sum += loss_prepared(params, ex, gate)?.0;
    }
    Ok(sum / batch.len() as f64)
}

/// Mean gradient over prepared examples, reduced in example order.
pub fn batch_grad(
    params: &GeneratorParams,
    batch: &[PreparedExample],
    gate: &GateConfig,
) -> Result<Gradient> {
    let parts = batch
        .par_iter()
        .map(|ex| grad_prepared(params, ex, gate))
        .collect::<Result<Vec<_>>>()?;
    let mut total = Gradient::zeros(params);
    for g in parts {
        for (a, b) in total.w.iter_mut().zip(&g.w) {
            *a += b;
        }
        for (a, b) in total.b.iter_mut().zip(&g.b) {
            *a += b;
        }
    }
    total.scale(1.0 / batch.len() as f64);
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub entropy: f64,
    pub variance: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: GeneratorParams,
    /// Statistics of the parameters entering each epoch.
    pub history: Vec<EpochStats>,
    /// Statistics of the returned parameters.
    pub final_stats: EpochStats,
    /// Epoch at which the loss became non-finite, if it did. `params` then
    /// holds the last finite state.
    pub diverged_at: Option<usize>,
}

pub fn batch_stats(
    params: &GeneratorParams,
    batch: &[PreparedExample],
    gate: &GateConfig,
    epoch: usize,
) -> Result<EpochStats> {
    let n = batch.len() as f64;
    let (mut loss, mut h, mut var, mut correct) = (0.0, 0.0, 0.0, 0usize);
    for ex in batch {
        let (l, rep) = loss_prepared(params, ex, gate)?;
        loss += l;
        h += rep.entropy;
        var += rep.variance;
        if predict_features(params, &ex.x)?.argmax() == ex.gold {
            correct += 1;
        }
    }
    Ok(EpochStats {
        epoch,
        loss: loss / n,
        entropy: h / n,
        variance: var / n,
        accuracy: correct as f64 / n,
    })
}

/// Full-batch gradient descent from `initial`.
pub fn train(
    initial: GeneratorParams,
    dataset: &[QAExample],
    hier: &MemoryHierarchy,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Generator("training set is empty".into()));
    }
    initial.validate()?;
    if initial.dim != hier.embedder().dim {
        return Err(Error::Generator(format!(
            "params dim {} differs from index dim {}",
            initial.dim,
            hier.embedder().dim
        )));
    }
    if let Some(e) = dataset.iter().find(|e| e.gold >= initial.classes) {
        return Err(Error::Generator(format!(
            "example {} has gold {} >= V",
            e.query.query_id, e.gold
        )));
    }
    let batch = prepare_all(dataset, hier, cfg)?;
    train_prepared(initial, &batch, cfg)
}

pub fn train_prepared(
    initial: GeneratorParams,
    batch: &[PreparedExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut params = initial;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut diverged_at = None;
    for epoch in 0..cfg.epochs {
        let stats = match batch_stats(&params, batch, &cfg.gate, epoch) {
            Ok(s) if s.loss.is_finite() => s,
            _ => {
                diverged_at = Some(epoch);
                break;
            }
        };
        history.push(stats);
        let g = batch_grad(&params, batch, &cfg.gate)?;
        let mut next = params.clone();
        for (p, d) in next
            .w
            .iter_mut()
            .zip(&g.w)
            .chain(next.b.iter_mut().zip(&g.b))
        {
            *p -= cfg.lr * d;
        }
        if !next.all_finite() {
            diverged_at = Some(epoch);
            break;
        }
        params = next;
    }
    if let Some(epoch) = diverged_at {
        log::warn!("training diverged at epoch {epoch}; returning last finite parameters");
    }
    let final_stats = batch_stats(&params, batch, &cfg.gate, history.len())?;
    Ok(TrainOutcome {
        params,
        history,
        final_stats,
        diverged_at,
    })
}

/// Fraction of examples whose most probable answer is the gold one.
pub fn qa_accuracy(
    params: &GeneratorParams,
    dataset: &[QAExample],
    hier: &MemoryHierarchy,
    cfg: &TrainConfig,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Generator("accuracy of an empty dataset".into()));
    }
    let batch = prepare_all(dataset, hier, cfg)?;
    let mut correct = 0;
    for ex in &batch {
        if predict_features(params, &ex.x)?.argmax() == ex.gold {
            correct += 1;
        }
    }
    Ok(correct as f64 / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: usize,
    pub params_checked: usize,
}

/// Relative error with an absolute floor so exact zeros compare cleanly.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compare the analytic batch gradient against central differences of the
/// batch loss over every parameter.
pub fn gradient_check(
    params: &GeneratorParams,
    batch: &[PreparedExample],
    gate: &GateConfig,
    step: f64,
) -> Result<GradCheckReport> {
    let analytic = batch_grad(params, batch, gate)?;
    let mut worst = (0.0f64, 0usize);
    let mut probe = params.clone();
    for i in 0..params.num_params() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + step;
        let up = batch_loss(&probe, batch, gate)?;
        *probe.param_mut(i) = orig - step;
        let down = batch_loss(&probe, batch, gate)?;
        *probe.param_mut(i) = orig;
        let err = relative_error(analytic.get(i), (up - down) / (2.0 * step));
        if err > worst.0 {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport {
        max_rel_err: worst.0,
        worst_param: worst.1,
        params_checked: params.num_params(),
    })
}
