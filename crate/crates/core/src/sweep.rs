//! Grid sweeps over index depth, routing temperature and domain mix ratio.
//!
//! Cells are grouped by (mix ratio, depth) so each hierarchy is built once
//! and reused across temperatures. Groups run in parallel; results are
//! always returned in grid order.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{mix_corpora, Corpus, QrelSet, Query, MAX_DEPTH};
use crate::embedder::EmbedderSpec;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport};
use crate::generator::{train, GeneratorParams, QAExample, TrainConfig};
use crate::hashing::mix_seeds;
use crate::index::MemoryHierarchy;
use crate::router::RouterConfig;

pub const CSV_HEADER: &str =
    "depth,temperature,mix_ratio,recall_at_k,ndcg_at_k,map,qa_accuracy,routing_entropy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub depths: Vec<usize>,
    pub temperatures: Vec<f64>,
    /// Ignored (and may be empty) when there is no second source to mix in.
    pub mix_ratios: Vec<f64>,
}

impl SweepGrid {
    /// Depths 1..=5 crossed with temperatures {0.5, 1.0, 1.2, 2.0}.
    pub fn depth_temperature() -> Self {
        SweepGrid {
            depths: (1..=MAX_DEPTH).collect(),
            temperatures: vec![0.5, 1.0, 1.2, 2.0],
            mix_ratios: vec![0.5],
        }
    }

    fn validate(&self, mixing: bool) -> Result<()> {
        if self.depths.is_empty()
            || self.temperatures.is_empty()
            || (mixing && self.mix_ratios.is_empty())
        {
            return Err(Error::Config("sweep grid has an empty axis".into()));
        }
        if let Some(d) = self.depths.iter().find(|d| !(1..=MAX_DEPTH).contains(*d)) {
            return Err(Error::Config(format!("depth {d} outside [1, {MAX_DEPTH}]")));
        }
        if let Some(t) = self.temperatures.iter().find(|t| !(**t > 0.0)) {
            return Err(Error::Config(format!("temperature {t} must be positive")));
        }
        if let Some(r) = self.mix_ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("mix ratio {r} outside [0, 1]")));
        }
        Ok(())
    }
}

/// Corpus sources: a single corpus, or two tagged corpora to be mixed.
#[derive(Debug, Clone)]
pub enum Sources {
    Single(Corpus),
    Mixed {
        a: (Corpus, String),
        b: (Corpus, String),
        size: usize,
        seed: u64,
    },
}

/// Optional generator training per cell, for the QA accuracy column.
#[derive(Debug, Clone)]
pub struct QaSetup {
    pub classes: usize,
    pub train: Vec<QAExample>,
    pub test: Vec<QAExample>,
    pub train_config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct SweepInputs {
    pub sources: Sources,
    pub queries: Vec<Query>,
    pub qrels: QrelSet,
    pub qa: Option<QaSetup>,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub embedder: EmbedderSpec,
    /// Base evaluation config; the temperature is overridden per cell.
    pub eval: EvalConfig,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub depth: usize,
    pub temperature: f64,
    pub mix_ratio: Option<f64>,
    pub routing_entropy: Option<f64>,
    pub qa_accuracy: Option<f64>,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: SweepGrid,
    pub cells: Vec<SweepCell>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let r = c.report.as_ref();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.depth,
                c.temperature,
                fmt_opt(c.mix_ratio),
                fmt_opt(r.map(|r| r.mean_recall_at_k)),
                fmt_opt(r.map(|r| r.mean_ndcg_at_k)),
                fmt_opt(r.map(|r| r.map)),
                fmt_opt(c.qa_accuracy),
                fmt_opt(c.routing_entropy),
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep serializes")
    }

    /// One row per (mix ratio, depth), one column per temperature, holding
    /// `metric` (one of recall_at_k, ndcg_at_k, map, qa_accuracy,
    /// routing_entropy).
    pub fn matrix_csv(&self, metric: &str) -> Result<String> {
        let pick = |c: &SweepCell| -> Result<Option<f64>> {
            let r = c.report.as_ref();
            Ok(match metric {
                "recall_at_k" => r.map(|r| r.mean_recall_at_k),
                "ndcg_at_k" => r.map(|r| r.mean_ndcg_at_k),
                "map" => r.map(|r| r.map),
                "qa_accuracy" => c.qa_accuracy,
                "routing_entropy" => c.routing_entropy,
                _ => return Err(Error::Config(format!("unknown metric {metric:?}"))),
            })
        };
        let mut out = String::from("mix_ratio,depth");
        for t in &self.grid.temperatures {
            let _ = write!(out, ",T={t}");
        }
        out.push('\n');
        for row in self.cells.chunks(self.grid.temperatures.len()) {
            let _ = write!(out, "{},{}", fmt_opt(row[0].mix_ratio), row[0].depth);
            for c in row {
                let _ = write!(out, ",{}", fmt_opt(pick(c)?));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

struct Group {
    ratio: Option<f64>,
    depth: usize,
    first_index: usize,
}

pub fn sweep(grid: &SweepGrid, inputs: &SweepInputs, cfg: &SweepConfig) -> Result<SweepResult> {
    let mixing = matches!(inputs.sources, Sources::Mixed { .. });
    grid.validate(mixing)?;
    cfg.eval.validate()?;
    cfg.embedder.validate()?;
    let ratios: Vec<Option<f64>> = if mixing {
        grid.mix_ratios.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let n_t = grid.temperatures.len();
    let mut groups = Vec::new();
    for r in &ratios {
        for &depth in &grid.depths {
            groups.push(Group {
                ratio: *r,
                depth,
                first_index: groups.len() * n_t,
            });
        }
    }
    let cells: Vec<Vec<SweepCell>> = groups
        .par_iter()
        .map(|g| run_group(g, grid, inputs, cfg))
        .collect();
    Ok(SweepResult {
        grid: grid.clone(),
        cells: cells.into_iter().flatten().collect(),
    })
}

fn corpus_for(inputs: &SweepInputs, ratio: Option<f64>) -> Result<Corpus> {
    match (&inputs.sources, ratio) {
        (Sources::Single(c), _) => Ok(c.clone()),
        (Sources::Mixed { a, b, size, seed }, Some(r)) => mix_corpora(
            &[(&a.0, a.1.as_str()), (&b.0, b.1.as_str())],
            r,
            *size,
            *seed,
        ),
        (Sources::Mixed { .. }, None) => {
            Err(Error::Invariant("mixed sources without a ratio".into()))
        }
    }
}

fn run_group(
    g: &Group,
    grid: &SweepGrid,
    inputs: &SweepInputs,
    cfg: &SweepConfig,
) -> Vec<SweepCell> {
    let blank = |i: usize, t: f64| SweepCell {
        index: g.first_index + i,
        depth: g.depth,
        temperature: t,
        mix_ratio: g.ratio,
        routing_entropy: None,
        qa_accuracy: None,
        report: None,
        error: None,
    };
    let built = corpus_for(inputs, g.ratio).and_then(|corpus| {
        let hier = MemoryHierarchy::build(&corpus, &cfg.embedder, g.depth)?;
        Ok((inputs.qrels.restricted_to(&corpus), hier))
    });
    let (qrels, hier) = match built {
        Ok(x) => x,
        Err(e) => {
            log::warn!(
                "sweep group depth={} ratio={:?} failed: {e}",
                g.depth,
                g.ratio
            );
            return grid
                .temperatures
                .iter()
                .enumerate()
                .map(|(i, &t)| SweepCell {
                    error: Some(e.to_string()),
                    ..blank(i, t)
                })
                .collect();
        }
    };
    grid.temperatures
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut cell = blank(i, t);
            let eval_cfg = EvalConfig {
                router: RouterConfig {
                    temperature: t,
                    ..cfg.eval.router.clone()
                },
                ..cfg.eval.clone()
            };
            let result =
                evaluate(&hier, &inputs.queries, &qrels, &eval_cfg).and_then(|mut report| {
                    if let Some(qa) = &inputs.qa {
                        let acc = cell_qa_accuracy(
                            qa,
                            &hier,
                            &eval_cfg,
                            mix_seeds(cfg.base_seed, cell.index as u64),
                        )?;
                        report.qa_accuracy = Some(acc);
                    }
                    Ok(report)
                });
            match result {
                Ok(report) => {
                    cell.routing_entropy = Some(report.mean_routing_entropy);
                    cell.qa_accuracy = report.qa_accuracy;
                    cell.report = Some(report);
                }
                Err(e) => {
                    log::warn!("sweep cell {} failed: {e}", cell.index);
                    cell.error = Some(e.to_string());
                }
            }
            cell
        })
        .collect()
}

fn cell_qa_accuracy(
    qa: &QaSetup,
    hier: &MemoryHierarchy,
    eval_cfg: &EvalConfig,
    seed: u64,
) -> Result<f64> {
    let mut tc = qa.train_config.clone();
    tc.router = eval_cfg.router.clone();
    tc.gate.tau_path = eval_cfg.tau_path.unwrap_or(0.0);
    tc.gate.seed = seed;
    let outcome = train(
        GeneratorParams::zeros(qa.classes, hier.embedder().dim),
        &qa.train,
        hier,
        &tc,
    )?;
    let held_out = if qa.test.is_empty() {
        &qa.train
    } else {
        &qa.test
    };
    crate::generator::qa_accuracy(&outcome.params, held_out, hier, &tc)
}
