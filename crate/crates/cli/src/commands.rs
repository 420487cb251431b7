use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use srvf_core::collection::collect;
use srvf_core::domain::{load_documents, load_samples, save_documents, save_samples, Document, RationaleStore};
use srvf_core::eval::bench::write_json;
use srvf_core::eval::synthetic::{document_corpus, sentence_corpus};
use srvf_core::eval::{
    build_selector, error_matrix, f1_counts, join_predictions, load_predictions, run_benchmark, sample_kshot_document,
    sample_kshot_sentence, save_predictions, Confusion, F1Counts, Method, MethodStatus, PredictionRecord, Runner,
};
use srvf_core::feedback::{predict_document, AnchorIndex, Fallback, InitStrategy};
use srvf_core::llm::CallLog;
use srvf_core::supervisor::{load_model, save_model, train};
use tracing::{info, warn};

use crate::config::Config;

fn in_pool<T: Send>(cfg: &Config, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_inflight)
        .build()
        .context("starting worker pool")?;
    Ok(pool.install(f))
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Labeled training samples (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Rationale store to write (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Single-demonstration inferences per sample when provoking biased rationales.
    #[arg(long)]
    pub di_attempts: Option<usize>,
    /// Extra label-guided attempts before a sample is rejected.
    #[arg(long)]
    pub lgi_retries: Option<usize>,
    /// Abort when more than this fraction of samples has no unbiased rationale.
    #[arg(long)]
    pub max_reject_fraction: Option<f64>,
}

impl CollectArgs {
    pub fn apply(&self, cfg: &mut Config) {
        let c = &mut cfg.bench.collect;
        if let Some(v) = self.di_attempts {
            c.di_attempts = v;
        }
        if let Some(v) = self.lgi_retries {
            c.lgi_retries = v;
        }
        if let Some(v) = self.max_reject_fraction {
            c.max_reject_fraction = v;
        }
    }

    pub fn run(&self, cfg: &Config) -> Result<()> {
        let labels = cfg.label_set()?;
        let samples = load_samples(&self.data, &labels)?;
        let backend = cfg.backend(&labels, &samples)?;
        let log = CallLog::new();
        let (store, report) = in_pool(cfg, || {
            collect(&samples, backend.as_ref(), &log, &labels, &cfg.bench.collect_config())
        })??;
        store.save(&self.out)?;
        info!(
            accepted = report.accepted,
            rejected = report.rejected.len(),
            failed = report.failed.len(),
            biased = report.biased,
            llm_calls = log.calls().len(),
            out = %self.out.display(),
            "rationales written"
        );
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Rationale store (JSONL).
    #[arg(long)]
    pub rationales: PathBuf,
    /// Samples the rationales refer to (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Temperature of the contrastive loss.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Texts per mini-batch.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Embedding width.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Hash buckets for n-gram and word features.
    #[arg(long)]
    pub feature_space: Option<usize>,
}

impl TrainArgs {
    pub fn apply(&self, cfg: &mut Config) {
        let t = &mut cfg.bench.supervisor;
        if let Some(v) = self.tau {
            t.tau = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch {
            t.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.learning_rate = v;
        }
        if let Some(v) = self.dim {
            t.encoder.dim = v;
        }
        if let Some(v) = self.feature_space {
            t.encoder.feature_space = v;
        }
    }

    pub fn run(&self, cfg: &Config) -> Result<()> {
        let labels = cfg.label_set()?;
        let samples = load_samples(&self.data, &labels)?;
        let store = RationaleStore::load(&self.rationales, &samples, &labels)?;
        let (model, report) = train(&store, &cfg.bench.train_config())?;
        for class in &report.empty_classes {
            warn!(?class, "no pairs of this class");
        }
        save_model(&model, &self.out)?;
        info!(
            final_loss = report.epoch_losses.last().copied().unwrap_or(f64::NAN),
            out = %self.out.display(),
            "checkpoint written"
        );
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Test samples (JSONL), or documents with `--doc-level`.
    #[arg(long)]
    pub test: PathBuf,
    /// Supervisor checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Rationale store produced by `collect`.
    #[arg(long)]
    pub store: PathBuf,
    /// Samples the store refers to.
    #[arg(long)]
    pub data: PathBuf,
    /// Predictions to write (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// icl, srvf or self_consistency.
    #[arg(long, default_value = "srvf")]
    pub method: Method,
    /// Correction rounds after the first generation.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Biased anchors retrieved per correction round.
    #[arg(long)]
    pub k: Option<usize>,
    /// Feedback demonstrations shown per correction round.
    #[arg(long)]
    pub feedback_demos: Option<usize>,
    /// `last` or `min-pb`.
    #[arg(long, value_parser = parse_fallback)]
    pub fallback: Option<Fallback>,
    /// random, simcse-like or file.
    #[arg(long)]
    pub init_demos: Option<InitStrategy>,
    /// Initial demonstrations per prompt.
    #[arg(long)]
    pub demo_count: Option<usize>,
    /// JSON array of sample ids, for `--init-demos file`.
    #[arg(long)]
    pub demo_file: Option<PathBuf>,
    /// Votes for the self-consistency baseline.
    #[arg(long)]
    pub self_consistency_n: Option<usize>,
    /// Extract triplets from documents instead of classifying sentences.
    #[arg(long)]
    pub doc_level: bool,
    /// Labeled documents used as demonstrations with `--doc-level`.
    #[arg(long, requires = "doc_level")]
    pub demo_docs: Option<PathBuf>,
}

fn parse_fallback(s: &str) -> Result<Fallback, String> {
    match s {
        "last" | "last_prediction" => Ok(Fallback::LastPrediction),
        "min-pb" | "min_pb_prediction" => Ok(Fallback::MinPbPrediction),
        other => Err(format!("unknown fallback {other:?}")),
    }
}

impl RunArgs {
    pub fn apply(&self, cfg: &mut Config) {
        let b = &mut cfg.bench;
        if let Some(v) = self.max_iters {
            b.loop_config.max_iters = v;
        }
        if let Some(v) = self.k {
            b.loop_config.k = v;
        }
        if let Some(v) = self.feedback_demos {
            b.loop_config.feedback_demo_count = v;
        }
        if let Some(v) = self.fallback {
            b.loop_config.fallback = v;
        }
        if let Some(v) = self.init_demos {
            b.init_demos = v;
        }
        if let Some(v) = self.demo_count {
            b.demo_count = v;
        }
        if let Some(v) = &self.demo_file {
            b.demo_file = Some(v.clone());
        }
        if let Some(v) = self.self_consistency_n {
            b.self_consistency_n = v;
        }
    }

    pub fn run(&self, cfg: &Config) -> Result<()> {
        cfg.bench.validate()?;
        let labels = cfg.label_set()?;
        let samples = load_samples(&self.data, &labels)?;
        let store = RationaleStore::load(&self.store, &samples, &labels)?;
        let model = load_model(&self.model)?;
        let index = AnchorIndex::build(&model, &store, &labels)?;
        if self.doc_level {
            return self.run_documents(cfg, &labels, &model, &index);
        }
        let test = load_samples(&self.test, &labels)?;
        let backend = cfg.backend(&labels, &test)?;
        let selector = build_selector(
            cfg.bench.init_demos,
            &store,
            cfg.bench.demo_count,
            cfg.bench.seed,
            cfg.bench.demo_file.as_deref(),
        )?;
        let runner = Runner {
            backend: backend.as_ref(),
            labels: &labels,
            selector: selector.as_ref(),
            supervisor: Some((&model, &index)),
            loop_config: &cfg.bench.loop_config,
            self_consistency_n: cfg.bench.self_consistency_n,
            seed: cfg.bench.seed,
        };
        let log = CallLog::new();
        let preds = in_pool(cfg, || runner.run(self.method, &test, &log))??;
        let records: Vec<PredictionRecord> = test
            .iter()
            .zip(&preds)
            .map(|(s, p)| PredictionRecord::new(s, p))
            .collect();
        save_predictions(&self.out, &records)?;
        info!(
            method = %self.method,
            samples = records.len(),
            llm_calls = log.calls().len(),
            out = %self.out.display(),
            "predictions written"
        );
        Ok(())
    }

    fn run_documents(
        &self,
        cfg: &Config,
        labels: &srvf_core::domain::LabelSet,
        model: &srvf_core::supervisor::SupervisorModel,
        index: &AnchorIndex,
    ) -> Result<()> {
        let docs = load_documents(&self.test, labels)?;
        let demos: Vec<Document> = match &self.demo_docs {
            Some(p) => load_documents(p, labels)?,
            None => Vec::new(),
        };
        let backend = match &cfg.bench.backend {
            srvf_core::eval::BackendConfig::Mock { bias } => {
                let mock = srvf_core::llm::MockBackend::new(bias.clone(), labels.clone())?.with_documents(&docs);
                Box::new(mock) as Box<dyn srvf_core::llm::LlmBackend>
            }
            _ => cfg.backend(labels, [])?,
        };
        let log = CallLog::new();
        let out: Vec<Document> = in_pool(cfg, || {
            docs.par_iter()
                .map(|d| {
                    let p = predict_document(
                        d,
                        backend.as_ref(),
                        &log,
                        labels,
                        model,
                        index,
                        &demos,
                        &cfg.bench.loop_config,
                        cfg.bench.seed,
                    );
                    Document {
                        triplets: p.triplets,
                        ..d.clone()
                    }
                })
                .collect()
        })?;
        save_documents(&self.out, &out)?;
        info!(documents = out.len(), llm_calls = log.calls().len(), out = %self.out.display(), "triplets written");
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions (JSONL with `id` and `label`).
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold samples (JSONL).
    #[arg(long)]
    pub gold: PathBuf,
    /// Negative labels, comma separated; the label set's negatives when absent.
    #[arg(long, value_delimiter = ',')]
    pub negatives: Vec<String>,
    /// Where to write the scores (JSON); standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Where to write the error matrix (CSV).
    #[arg(long)]
    pub error_matrix: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Scores {
    micro_f1: f64,
    counts: F1Counts,
    evaluated: usize,
    missing: Vec<String>,
    worst_confusions: Vec<Confusion>,
}

impl EvalArgs {
    pub fn run(&self, cfg: &Config) -> Result<()> {
        let labels = cfg.label_set()?;
        let gold = load_samples(&self.gold, &labels)?;
        let preds = load_predictions(&self.pred)?;
        let negatives: std::collections::HashSet<&str> = if self.negatives.is_empty() {
            labels.negatives().map(|l| l.name()).collect()
        } else {
            for n in &self.negatives {
                if labels.get(n).is_none() {
                    bail!("negative label {n:?} is not in the label set");
                }
            }
            self.negatives.iter().map(String::as_str).collect()
        };
        let (pairs, missing) = join_predictions(&gold, &preds);
        if !missing.is_empty() {
            warn!(missing = missing.len(), "gold samples without a prediction are skipped");
        }
        let counts = f1_counts(pairs.iter().copied(), &negatives);
        let matrix = error_matrix(pairs.iter().copied(), &labels);
        let scores = Scores {
            micro_f1: counts.f1(),
            counts,
            evaluated: pairs.len(),
            missing: missing.iter().map(|s| s.to_string()).collect(),
            worst_confusions: matrix.worst(10),
        };
        if let Some(p) = &self.error_matrix {
            std::fs::write(p, matrix.to_csv()).with_context(|| format!("writing {}", p.display()))?;
        }
        match &self.out {
            Some(p) => write_json(p, &scores)?,
            None => print_stdout(&serde_json::to_string_pretty(&scores)?)?,
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Samples (JSONL), or documents with `--doc-level`.
    #[arg(long)]
    pub data: PathBuf,
    /// Instances per label (sentences) or target triplets per relation (documents).
    #[arg(long)]
    pub k: usize,
    /// Sampled instances to write (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Sample documents with the greedy triplet-count rule.
    #[arg(long)]
    pub doc_level: bool,
}

impl SampleArgs {
    pub fn run(&self, cfg: &Config) -> Result<()> {
        let labels = cfg.label_set()?;
        let seed = cfg.bench.seed;
        if self.doc_level {
            let docs = load_documents(&self.data, &labels)?;
            let s = sample_kshot_document(&docs, &labels, self.k, seed);
            save_documents(&self.out, &s.docs)?;
            info!(docs = s.docs.len(), q = s.q, exhausted = s.exhausted, out = %self.out.display(), "documents sampled");
        } else {
            let data = load_samples(&self.data, &labels)?;
            let s = sample_kshot_sentence(&data, &labels, self.k, seed);
            save_samples(&self.out, &s.samples)?;
            info!(
                samples = s.samples.len(),
                shortfalls = s.shortfalls.len(),
                out = %self.out.display(),
                "samples drawn"
            );
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Output directory; overrides `out_dir` in the configuration.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Methods to compare, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<Method>,
}

impl BenchArgs {
    pub fn apply(&self, cfg: &mut Config) {
        if let Some(v) = &self.out_dir {
            cfg.bench.out_dir = Some(v.clone());
        }
        if !self.methods.is_empty() {
            cfg.bench.methods = self.methods.clone();
        }
    }

    pub fn run(&self, cfg: &Config) -> Result<()> {
        let Some(out_dir) = &cfg.bench.out_dir else {
            bail!("no output directory: pass --out-dir or set out_dir in the configuration");
        };
        let run = in_pool(cfg, || run_benchmark(&cfg.bench))??;
        run.write(out_dir)?;
        for m in &run.report.methods {
            match m.status {
                MethodStatus::Ok => {
                    info!(method = %m.method, micro_f1 = m.micro_f1, llm_calls = m.llm_calls, "method scored")
                }
                MethodStatus::Failed => warn!(method = %m.method, error = m.error.as_deref(), "method failed"),
            }
        }
        info!(out = %out_dir.display(), "benchmark written");
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for train.jsonl, test.jsonl and docs.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub train_per_label: usize,
    #[arg(long, default_value_t = 50)]
    pub test_per_label: usize,
    /// Documents to generate.
    #[arg(long, default_value_t = 200)]
    pub docs: usize,
}

impl SynthArgs {
    pub fn run(&self, cfg: &Config) -> Result<()> {
        let dir = &self.out_dir;
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let corpus = sentence_corpus(self.train_per_label, self.test_per_label, cfg.bench.seed);
        save_samples(&dir.join("train.jsonl"), &corpus.train)?;
        save_samples(&dir.join("test.jsonl"), &corpus.test)?;
        save_documents(&dir.join("docs.jsonl"), &document_corpus(self.docs, cfg.bench.seed))?;
        info!(out = %dir.display(), train = corpus.train.len(), test = corpus.test.len(), "synthetic corpus written");
        Ok(())
    }
}

/// Writes `text` and a newline to stdout. A closed pipe is not an error.
pub fn print_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Fails when an output path would overwrite one of the inputs.
pub fn check_outputs(inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    for o in outputs {
        let o_abs = std::path::absolute(o).unwrap_or_else(|_| o.to_path_buf());
        for i in inputs {
            let i_abs = std::path::absolute(i).unwrap_or_else(|_| i.to_path_buf());
            if i_abs == o_abs {
                bail!("output {} would overwrite an input", o.display());
            }
        }
    }
    Ok(())
}
