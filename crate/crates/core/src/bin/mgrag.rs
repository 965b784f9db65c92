//! `mgrag` command-line entry point.
//!
//! Machine-readable output (JSON, CSV) goes to stdout or files; logs go to
//! stderr. Exit codes: 0 success, 1 runtime failure, 2 usage or validation
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mgrag::confidence::{
    ensemble_variance, entropy, filter_paths, intra_variance, perturb, VarMode,
};
use mgrag::config::RunConfig;
use mgrag::corpus::{self, Corpus, QrelSet, Query};
use mgrag::embedder::load_external_vectors;
use mgrag::eval::{evaluate, EvalReport};
use mgrag::generator::{
    features, gradient_check, predict_features, prepare_all, train, GeneratorParams, QAExample,
};
use mgrag::index::MemoryHierarchy;
use mgrag::router::route;
use mgrag::sweep::{sweep, QaSetup, Sources, SweepConfig, SweepGrid, SweepInputs};
use mgrag::synth;
use mgrag::Error;

const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Parser)]
#[command(
    name = "mgrag",
    version,
    about = "Multi-granularity retrieval with confidence gating"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Hyperparameters shared by every verb. Unset flags fall back to the
/// config file, then to built-in defaults.
#[derive(Args, Debug, Default)]
struct Knobs {
    /// `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    shared_phi: bool,
    /// Hits kept per layer
    #[arg(long = "k")]
    k_per_layer: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    layer_score_mode: Option<String>,
    #[arg(long = "tau")]
    tau_path: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    ensemble_k: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    var_mode: Option<String>,
    /// Defaults to 0
    #[arg(long)]
    seed: Option<u64>,
    /// Cutoff for Recall@k / NDCG@k
    #[arg(long)]
    metric_k: Option<usize>,
    #[arg(long)]
    aggregation: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl Knobs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            cfg.apply_file_str(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        }
        let mut set = |k: &str, v: Option<String>| -> Result<(), CliError> {
            match v {
                Some(v) => cfg.set(k, &v).map_err(CliError::from),
                None => Ok(()),
            }
        };
        let s = |x: Option<String>| x;
        let f = |x: Option<f64>| x.map(|v| v.to_string());
        let u = |x: Option<usize>| x.map(|v| v.to_string());
        set("depth", u(self.depth))?;
        set("dim", u(self.dim))?;
        set("shared_phi", self.shared_phi.then(|| "true".to_string()))?;
        set("k_per_layer", u(self.k_per_layer))?;
        set("temperature", f(self.temperature))?;
        set("layer_score_mode", s(self.layer_score_mode.clone()))?;
        set("tau_path", f(self.tau_path))?;
        set("lambda1", f(self.lambda1))?;
        set("lambda2", f(self.lambda2))?;
        set("ensemble_k", u(self.ensemble_k))?;
        set("noise_sigma", f(self.noise_sigma))?;
        set("var_mode", s(self.var_mode.clone()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("metric_k", u(self.metric_k))?;
        set("aggregation", s(self.aggregation.clone()))?;
        set("lr", f(self.lr))?;
        set("epochs", u(self.epochs))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse a corpus and write canonical JSONL
    Ingest(IngestArgs),
    /// Build a layered index from a corpus
    Build(BuildArgs),
    /// Route one query and print weights, paths and gate outcome
    Query(QueryArgs),
    /// Evaluate an index against queries and relevance judgments
    Eval(EvalArgs),
    /// Run a depth x temperature x mix-ratio grid
    Sweep(SweepArgs),
    /// Train the answer generator
    TrainGen(TrainArgs),
    /// Check analytic generator gradients against central differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, conflicts_with = "jsonl", required_unless_present = "jsonl")]
    cisi_docs: Option<PathBuf>,
    #[arg(long)]
    jsonl: Option<PathBuf>,
    #[arg(long)]
    cisi_queries: Option<PathBuf>,
    #[arg(long)]
    cisi_qrels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    queries_out: Option<PathBuf>,
    #[arg(long)]
    qrels_out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    /// Corpus in JSONL or CISI format
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Optional `<unit_id> <v1> ... <v_dim>` file overriding unit vectors
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[command(flatten)]
    knobs: Knobs,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    text: String,
    #[arg(long)]
    query_id: Option<u64>,
    /// Emit JSON (the default output is a short human summary)
    #[arg(long)]
    json: bool,
    /// Generator parameters; adds the predicted answer distribution
    #[arg(long)]
    params: Option<PathBuf>,
    #[command(flatten)]
    knobs: Knobs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Corpus the index was built from, to check the manifest
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    knobs: Knobs,
}

#[derive(Args)]
struct SweepArgs {
    /// First (or only) corpus
    #[arg(long)]
    corpus: PathBuf,
    /// Second corpus; enables the mix-ratio axis
    #[arg(long)]
    corpus_b: Option<PathBuf>,
    #[arg(long, default_value = "a")]
    tag_a: String,
    #[arg(long, default_value = "b")]
    tag_b: String,
    /// Documents per mixed corpus
    #[arg(long)]
    mix_size: Option<usize>,
    #[arg(long, required = true, num_args = 1..)]
    queries: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    qrels: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    depths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1.0,1.2,2.0")]
    temperatures: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    mix_ratios: Vec<f64>,
    /// QA set (`{"id", "text", "gold"}` lines) for the qa_accuracy column
    #[arg(long)]
    qa: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    knobs: Knobs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, requires = "qa")]
    corpus: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    qa: Option<PathBuf>,
    /// Generate a toy keyword set with this many classes instead
    #[arg(long, conflicts_with = "corpus")]
    toy_classes: Option<usize>,
    #[arg(long, default_value_t = 40)]
    toy_examples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    knobs: Knobs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Embedding dimension of the checked model
    #[arg(long, default_value_t = 8)]
    model_dim: usize,
    /// Check a single (lambda1, lambda2) pair instead of the {0, 0.1, 1}^2 grid
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    var_mode: Option<String>,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError {
            code: 2,
            msg: msg.into(),
        }
    }

    fn runtime(msg: impl Into<String>) -> Self {
        CliError {
            code: 1,
            msg: msg.into(),
        }
    }

    fn at(path: &Path) -> impl FnOnce(Error) -> CliError + '_ {
        move |e| {
            let code = if e.is_usage() { 2 } else { 1 };
            CliError {
                code,
                msg: format!("{}: {e}", path.display()),
            }
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: if e.is_usage() { 2 } else { 1 },
            msg: e.to_string(),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    corpus::read_text_lossy(path).map_err(CliError::at(path))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn load_corpus(path: &Path) -> Result<Corpus, CliError> {
    let docs = corpus::parse_documents_auto(&read(path)?).map_err(CliError::at(path))?;
    Corpus::new(docs).map_err(CliError::at(path))
}

fn load_queries(path: &Path) -> Result<Vec<Query>, CliError> {
    corpus::parse_queries_auto(&read(path)?).map_err(CliError::at(path))
}

fn load_qrels(path: &Path) -> Result<QrelSet, CliError> {
    corpus::parse_qrels_auto(&read(path)?).map_err(CliError::at(path))
}

fn load_index(path: &Path) -> Result<MemoryHierarchy, CliError> {
    MemoryHierarchy::load(path).map_err(CliError::at(path))
}

#[derive(serde::Deserialize)]
struct QaRecord {
    id: u64,
    text: String,
    gold: usize,
}

fn load_qa(path: &Path) -> Result<Vec<QAExample>, CliError> {
    let text = read(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let r: QaRecord = serde_json::from_str(l).map_err(|e| {
                CliError::usage(format!(
                    "{}: parse error at line {}: {e}",
                    path.display(),
                    i + 1
                ))
            })?;
            Ok(QAExample {
                query: Query::new(r.id, r.text),
                gold: r.gold,
            })
        })
        .collect()
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes")
}

fn timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("{secs}")
}

fn cmd_ingest(a: IngestArgs) -> Result<(), CliError> {
    let docs = match (&a.cisi_docs, &a.jsonl) {
        (Some(p), _) => corpus::parse_cisi_documents(&read(p)?).map_err(CliError::at(p))?,
        (None, Some(p)) => corpus::parse_documents_jsonl(&read(p)?).map_err(CliError::at(p))?,
        (None, None) => return Err(CliError::usage("one of --cisi-docs or --jsonl is required")),
    };
    let empty = docs.iter().filter(|d| d.body.trim().is_empty()).count();
    if empty > 0 {
        log::warn!("{empty} documents have an empty body and will not be indexed");
    }
    write(&a.out, &corpus::write_documents_jsonl(&docs))?;
    println!("{} documents", docs.len());
    if let Some(p) = &a.cisi_queries {
        let qs = corpus::parse_cisi_queries(&read(p)?).map_err(CliError::at(p))?;
        if let Some(out) = &a.queries_out {
            write(out, &corpus::write_queries_jsonl(&qs))?;
        }
        println!("{} queries", qs.len());
    }
    if let Some(p) = &a.cisi_qrels {
        let qrels = corpus::parse_cisi_qrels(&read(p)?).map_err(CliError::at(p))?;
        let corpus = Corpus::new(docs).map_err(CliError::from)?;
        let missing = qrels.missing_documents(&corpus);
        if !missing.is_empty() {
            log::warn!(
                "{} judgments reference documents absent from the corpus",
                missing.len()
            );
        }
        if let Some(out) = &a.qrels_out {
            write(out, &corpus::write_qrels_jsonl(&qrels))?;
        }
        println!("{} judged queries", qrels.len());
    }
    Ok(())
}

fn cmd_build(a: BuildArgs) -> Result<(), CliError> {
    let cfg = a.knobs.resolve()?;
    let corpus = load_corpus(&a.corpus)?;
    let external = match &a.vectors {
        Some(p) => Some(load_external_vectors(p).map_err(CliError::at(p))?),
        None => None,
    };
    let hier = MemoryHierarchy::build_with(
        &corpus,
        &cfg.embedder(),
        &Default::default(),
        cfg.depth,
        external.as_ref(),
    )?;
    hier.save(&a.out)?;
    println!("{}", to_json(hier.manifest()));
    Ok(())
}

#[derive(Serialize)]
struct PathOut {
    layer: usize,
    unit_id: String,
    doc_id: u64,
    sim: f64,
    path_confidence: f64,
}

#[derive(Serialize)]
struct GateOut {
    tau_path: f64,
    kept_paths: usize,
    dropped_paths: usize,
    gate_bypassed: bool,
    routing_entropy: f64,
}

#[derive(Serialize)]
struct GenerationOut {
    distribution: Vec<f64>,
    argmax: usize,
    entropy: f64,
    variance: f64,
}

#[derive(Serialize)]
struct QueryOut {
    query_id: Option<u64>,
    weights: Vec<f64>,
    paths: Vec<PathOut>,
    context_norm: f64,
    gate: GateOut,
    generation: Option<GenerationOut>,
}

fn cmd_query(a: QueryArgs) -> Result<(), CliError> {
    let cfg = a.knobs.resolve()?;
    let hier = load_index(&a.index)?;
    let router = cfg.router();
    let encodings = hier.encode_query(&a.text);
    let ctx = route(&hier, &encodings, &router)?;
    let gate = filter_paths(&hier, &ctx, cfg.tau_path, &router)?;
    let out_ctx = &gate.context;
    let generation = match &a.params {
        Some(p) => {
            let params = GeneratorParams::load(p).map_err(CliError::at(p))?;
            let x = features(&encodings, out_ctx);
            let dist = predict_features(&params, &x)?;
            let variance = match cfg.var_mode {
                VarMode::Intra => intra_variance(&dist),
                VarMode::Ensemble => {
                    let seed = mgrag::hashing::mix_seeds(cfg.seed, a.query_id.unwrap_or(0));
                    let samples = (0..cfg.ensemble_k as u64)
                        .map(|k| {
                            let mut c = out_ctx.clone();
                            c.c = perturb(&out_ctx.c, cfg.noise_sigma, seed, k);
                            predict_features(&params, &features(&encodings, &c))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    ensemble_variance(&samples)?
                }
            };
            Some(GenerationOut {
                argmax: dist.argmax(),
                entropy: entropy(&dist),
                variance,
                distribution: dist.as_slice().to_vec(),
            })
        }
        None => None,
    };
    let out = QueryOut {
        query_id: a.query_id,
        weights: out_ctx.weights.as_slice().to_vec(),
        paths: out_ctx
            .paths
            .iter()
            .map(|p| PathOut {
                layer: p.layer,
                unit_id: p.unit_id.to_string(),
                doc_id: p.doc_id,
                sim: p.sim,
                path_confidence: p.path_confidence,
            })
            .collect(),
        context_norm: out_ctx.c.norm(),
        gate: GateOut {
            tau_path: cfg.tau_path,
            kept_paths: gate.kept,
            dropped_paths: gate.dropped,
            gate_bypassed: gate.bypassed,
            routing_entropy: ctx.weights.entropy(),
        },
        generation,
    };
    if a.json {
        println!("{}", to_json(&out));
    } else {
        println!("weights: {:?}", out.weights);
        let ranking =
            mgrag::eval::aggregate_ranking(a.query_id.unwrap_or(0), out_ctx, cfg.aggregation);
        for (d, s) in ranking.docs.iter().zip(&ranking.scores).take(cfg.metric_k) {
            println!("doc {d}\t{s:.6}");
        }
        if gate.bypassed {
            println!("gate bypassed");
        }
    }
    Ok(())
}

fn eval_report(a: &EvalArgs, cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let hier = load_index(&a.index)?;
    if let Some(p) = &a.corpus {
        hier.check_corpus(&load_corpus(p)?);
    }
    let queries = load_queries(&a.queries)?;
    let qrels = load_qrels(&a.qrels)?;
    Ok(evaluate(&hier, &queries, &qrels, &cfg.eval())?)
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let cfg = a.knobs.resolve()?;
    let mut report = eval_report(&a, &cfg)?;
    report.timestamp = Some(timestamp());
    let json = report.to_json();
    if let Some(out) = &a.out {
        write(out, &json)?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), CliError> {
    let cfg = a.knobs.resolve()?;
    let corpus_a = load_corpus(&a.corpus)?;
    let sources = match &a.corpus_b {
        Some(pb) => {
            let corpus_b = load_corpus(pb)?;
            let size = a.mix_size.unwrap_or(corpus_a.len().min(corpus_b.len()));
            Sources::Mixed {
                a: (corpus_a, a.tag_a.clone()),
                b: (corpus_b, a.tag_b.clone()),
                size,
                seed: cfg.seed,
            }
        }
        None => Sources::Single(corpus_a),
    };
    let mut queries = Vec::new();
    for p in &a.queries {
        queries.extend(load_queries(p)?);
    }
    let mut qrels = QrelSet::new();
    for p in &a.qrels {
        qrels.extend(&load_qrels(p)?);
    }
    let qa = match &a.qa {
        Some(p) => {
            let examples = load_qa(p)?;
            let classes = examples.iter().map(|e| e.gold + 1).max().unwrap_or(1);
            let (train, test): (Vec<_>, Vec<_>) = examples
                .into_iter()
                .enumerate()
                .partition(|(i, _)| i % 2 == 0);
            Some(QaSetup {
                classes,
                train: train.into_iter().map(|(_, e)| e).collect(),
                test: test.into_iter().map(|(_, e)| e).collect(),
                train_config: cfg.train(),
            })
        }
        None => None,
    };
    let grid = SweepGrid {
        depths: a.depths.clone(),
        temperatures: a.temperatures.clone(),
        mix_ratios: a.mix_ratios.clone(),
    };
    let inputs = SweepInputs {
        sources,
        queries,
        qrels,
        qa,
    };
    let result = sweep(
        &grid,
        &inputs,
        &SweepConfig {
            embedder: cfg.embedder(),
            eval: cfg.eval(),
            base_seed: cfg.seed,
        },
    )?;
    let failed = result.cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} sweep cells failed; see the error field in the JSON output");
    }
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
        write(&dir.join("sweep.csv"), &result.to_csv())?;
        write(&dir.join("sweep.json"), &result.to_json())?;
        for m in [
            "recall_at_k",
            "ndcg_at_k",
            "map",
            "qa_accuracy",
            "routing_entropy",
        ] {
            write(&dir.join(format!("matrix_{m}.csv")), &result.matrix_csv(m)?)?;
        }
    }
    print!("{}", result.to_csv());
    Ok(())
}

#[derive(Serialize)]
struct TrainOut {
    classes: usize,
    examples: usize,
    diverged_at: Option<usize>,
    final_stats: mgrag::generator::EpochStats,
    history: Vec<mgrag::generator::EpochStats>,
}

fn cmd_train_gen(a: TrainArgs) -> Result<(), CliError> {
    let cfg = a.knobs.resolve()?;
    let (corpus, examples) = match (&a.corpus, &a.qa, a.toy_classes) {
        (Some(c), Some(q), _) => (load_corpus(c)?, load_qa(q)?),
        (None, None, Some(v)) => {
            if v == 0 {
                return Err(CliError::usage("--toy-classes must be positive"));
            }
            let toy = synth::toy_qa(v, a.toy_examples, 3, cfg.seed);
            (toy.corpus, toy.examples)
        }
        _ => return Err(CliError::usage("give --corpus with --qa, or --toy-classes")),
    };
    let classes = examples.iter().map(|e| e.gold + 1).max().unwrap_or(1);
    let hier = MemoryHierarchy::build(&corpus, &cfg.embedder(), cfg.depth)?;
    let outcome = train(
        GeneratorParams::zeros(classes, cfg.dim),
        &examples,
        &hier,
        &cfg.train(),
    )?;
    if let Some(out) = &a.out {
        outcome.params.save(out)?;
    }
    println!(
        "{}",
        to_json(&TrainOut {
            classes,
            examples: examples.len(),
            diverged_at: outcome.diverged_at,
            final_stats: outcome.final_stats.clone(),
            history: outcome.history.clone(),
        })
    );
    if outcome.diverged_at.is_some() {
        return Err(CliError::runtime("training diverged"));
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let seed = a.seed.unwrap_or(0);
    let mut cfg = RunConfig {
        dim: a.model_dim,
        seed,
        noise_sigma: 0.1,
        ensemble_k: 4,
        ..RunConfig::default()
    };
    if let Some(m) = &a.var_mode {
        cfg.set("var_mode", m)?;
    }
    cfg.validate()?;
    let toy = synth::toy_qa(a.classes, 2 * a.classes, 2, seed);
    let hier = MemoryHierarchy::build(&toy.corpus, &cfg.embedder(), cfg.depth)?;
    let params = GeneratorParams::random(a.classes, a.model_dim, 0.5, seed);
    let grid = [0.0, 0.1, 1.0];
    let pairs: Vec<(f64, f64)> = match (a.lambda1, a.lambda2) {
        (None, None) => grid
            .iter()
            .flat_map(|&l1| grid.iter().map(move |&l2| (l1, l2)))
            .collect(),
        (l1, l2) => vec![(l1.unwrap_or(0.0), l2.unwrap_or(0.0))],
    };
    let mut worst = 0.0f64;
    for (l1, l2) in pairs {
        cfg.lambda1 = l1;
        cfg.lambda2 = l2;
        let tc = cfg.train();
        tc.validate()?;
        let batch = prepare_all(&toy.examples, &hier, &tc)?;
        let rep = gradient_check(&params, &batch, &tc.gate, GRADCHECK_STEP)?;
        eprintln!(
            "lambda1={l1} lambda2={l2} max_rel_err={:.3e} over {} params",
            rep.max_rel_err, rep.params_checked
        );
        worst = worst.max(rep.max_rel_err);
    }
    if worst < GRADCHECK_TOL {
        println!("PASS max_rel_err={worst:.3e} < 1e-4");
        Ok(())
    } else {
        println!("FAIL max_rel_err={worst:.3e} >= 1e-4");
        Err(CliError::runtime("gradient check failed"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Build(a) => cmd_build(a),
        Command::Query(a) => cmd_query(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::TrainGen(a) => cmd_train_gen(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
