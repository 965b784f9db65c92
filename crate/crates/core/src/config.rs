//! Flat run configuration shared by the command-line verbs.
//!
//! Values come from built-in defaults, then an optional `key = value` file
//! (`#` starts a comment), then command-line flags. The effective config is
//! echoed into reports.

use serde::{Deserialize, Serialize};

use crate::confidence::{GateConfig, VarMode};
use crate::corpus::MAX_DEPTH;
use crate::embedder::EmbedderSpec;
use crate::error::{Error, Result};
use crate::eval::{Aggregation, EvalConfig};
use crate::generator::TrainConfig;
use crate::router::{LayerScoreMode, RouterConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub depth: usize,
    pub dim: usize,
    pub shared_phi: bool,
    pub k_per_layer: usize,
    pub temperature: f64,
    pub layer_score_mode: LayerScoreMode,
    pub tau_path: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub ensemble_k: usize,
    pub noise_sigma: f64,
    pub var_mode: VarMode,
    pub seed: u64,
    pub metric_k: usize,
    pub aggregation: Aggregation,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let router = RouterConfig::default();
        let gate = GateConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            depth: 3,
            dim: EmbedderSpec::default().dim,
            shared_phi: false,
            k_per_layer: router.k_per_layer,
            temperature: router.temperature,
            layer_score_mode: router.layer_score_mode,
            tau_path: gate.tau_path,
            lambda1: gate.lambda1,
            lambda2: gate.lambda2,
            ensemble_k: gate.ensemble_k,
            noise_sigma: gate.noise_sigma,
            var_mode: gate.var_mode,
            seed: 0,
            metric_k: 5,
            aggregation: Aggregation::Max,
            lr: train.lr,
            epochs: train.epochs,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "depth" => self.depth = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "shared_phi" => self.shared_phi = parse(key, value)?,
            "k_per_layer" => self.k_per_layer = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "layer_score_mode" => self.layer_score_mode = value.parse()?,
            "tau_path" => self.tau_path = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "ensemble_k" => self.ensemble_k = parse(key, value)?,
            "noise_sigma" => self.noise_sigma = parse(key, value)?,
            "var_mode" => self.var_mode = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "metric_k" => self.metric_k = parse(key, value)?,
            "aggregation" => self.aggregation = value.parse()?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply a `key = value` file on top of the current values.
    pub fn apply_file_str(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected key = value, got {raw:?}")))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_DEPTH).contains(&self.depth) {
            return Err(Error::Config(format!(
                "depth {} outside [1, {MAX_DEPTH}]",
                self.depth
            )));
        }
        if self.metric_k == 0 {
            return Err(Error::Config("metric_k must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        self.embedder().validate()?;
        self.train().validate()
    }

    pub fn embedder(&self) -> EmbedderSpec {
        EmbedderSpec {
            dim: self.dim,
            shared_phi: self.shared_phi,
            ..EmbedderSpec::default()
        }
    }

    pub fn router(&self) -> RouterConfig {
        RouterConfig {
            k_per_layer: self.k_per_layer,
            temperature: self.temperature,
            layer_score_mode: self.layer_score_mode,
        }
    }

    pub fn gate(&self) -> GateConfig {
        GateConfig {
            tau_path: self.tau_path,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            ensemble_k: self.ensemble_k,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            var_mode: self.var_mode,
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            router: self.router(),
            tau_path: Some(self.tau_path),
            metric_k: self.metric_k,
            aggregation: self.aggregation,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            gate: self.gate(),
            router: self.router(),
        }
    }
}
