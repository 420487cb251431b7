//! Collect, train, then compare prediction methods on one test set.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::efficiency::{efficiency_report, EfficiencyReport};
use super::metrics::{error_matrix, f1_counts, Confusion, ErrorMatrix, F1Counts};
use super::records::{save_predictions, PredictionRecord};
use super::synthetic::default_bias;
use super::EvalError;
use crate::collection::{collect, CollectConfig, CollectReport};
use crate::domain::{load_samples, Demonstration, LabelSet, LabeledSample, Prediction, RationaleStore};
use crate::feedback::{
    predict_icl, predict_with_feedback, self_consistency, AnchorIndex, DemoSelector, FixedSelector, InitStrategy,
    LoopConfig, RandomSelector, SimilaritySelector,
};
use crate::hashing::derive_seed;
use crate::llm::{BiasModel, CallLog, HttpBackend, HttpConfig, LlmBackend, MockBackend, Phase, PromptSpec};
use crate::supervisor::{build_pairs, separation, train, PairClass, RationaleEncoder, SupervisorModel, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Icl,
    Srvf,
    SelfConsistency,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Icl => "icl",
            Method::Srvf => "srvf",
            Method::SelfConsistency => "self_consistency",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "icl" => Ok(Method::Icl),
            "srvf" => Ok(Method::Srvf),
            "self_consistency" | "self-consistency" | "sc" => Ok(Method::SelfConsistency),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Deterministic mock; needs the gold labels of every instance it sees.
    Mock {
        #[serde(default = "default_bias")]
        bias: BiasModel,
    },
    /// OpenAI-compatible endpoint; the key is read from `SRVF_API_KEY`.
    Http(HttpConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Mock { bias: default_bias() }
    }
}

impl BackendConfig {
    pub fn build<'a>(
        &self,
        labels: &LabelSet,
        known: impl IntoIterator<Item = &'a LabeledSample>,
    ) -> Result<Box<dyn LlmBackend>, EvalError> {
        Ok(match self {
            BackendConfig::Mock { bias } => {
                Box::new(MockBackend::new(bias.clone(), labels.clone())?.with_samples(known))
            }
            BackendConfig::Http(cfg) => Box::new(HttpBackend::from_env(cfg.clone())?),
        })
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Icl, Method::Srvf, Method::SelfConsistency]
}

/// Benchmark settings. Relative paths are resolved by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Label set file; the SemEval labels when absent.
    pub labels: Option<PathBuf>,
    pub train: PathBuf,
    pub test: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub methods: Vec<Method>,
    /// Master seed; collection, training and demonstration seeds derive from
    /// it, so the seeds inside `collect` and `supervisor` are ignored.
    pub seed: u64,
    pub collect: CollectConfig,
    pub supervisor: TrainConfig,
    #[serde(rename = "loop")]
    pub loop_config: LoopConfig,
    pub init_demos: InitStrategy,
    pub demo_count: usize,
    /// JSON array of training sample ids, used with the `file` strategy.
    pub demo_file: Option<PathBuf>,
    pub self_consistency_n: usize,
    pub backend: BackendConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            labels: None,
            train: PathBuf::from("train.jsonl"),
            test: PathBuf::from("test.jsonl"),
            out_dir: None,
            methods: default_methods(),
            seed: 0,
            collect: CollectConfig::default(),
            supervisor: TrainConfig::default(),
            loop_config: LoopConfig::default(),
            init_demos: InitStrategy::Random,
            demo_count: 10,
            demo_file: None,
            self_consistency_n: 5,
            backend: BackendConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.methods.is_empty() {
            return Err(EvalError::InvalidConfig("no methods configured".into()));
        }
        if self.demo_count == 0 {
            return Err(EvalError::InvalidConfig("demo_count must be at least 1".into()));
        }
        if self.self_consistency_n == 0 {
            return Err(EvalError::InvalidConfig("self_consistency_n must be at least 1".into()));
        }
        if self.init_demos == InitStrategy::File && self.demo_file.is_none() {
            return Err(EvalError::InvalidConfig("the file strategy needs demo_file".into()));
        }
        self.loop_config.validate()?;
        self.supervisor.validate()?;
        Ok(())
    }

    /// Collection settings with the seed derived from the master seed.
    pub fn collect_config(&self) -> CollectConfig {
        CollectConfig {
            seed: derive_seed(self.seed, &["collect"]),
            ..self.collect.clone()
        }
    }

    /// Supervisor settings with the seed derived from the master seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, &["train"]),
            ..self.supervisor.clone()
        }
    }

    /// Loads the label set and both splits.
    pub fn load_data(&self) -> Result<(LabelSet, Vec<LabeledSample>, Vec<LabeledSample>), EvalError> {
        let labels = match &self.labels {
            Some(p) => LabelSet::load(p)?,
            None => LabelSet::semeval(),
        };
        let train = load_samples(&self.train, &labels)?;
        let test = load_samples(&self.test, &labels)?;
        Ok((labels, train, test))
    }
}

/// Reads a JSON array of sample ids and returns their demonstrations.
pub fn load_demo_file(path: &Path, store: &RationaleStore) -> Result<Vec<Demonstration>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ids: Vec<String> = serde_json::from_str(&text).map_err(|e| EvalError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    ids.iter()
        .map(|id| {
            store
                .demonstration_for(id)
                .ok_or_else(|| EvalError::InvalidConfig(format!("demonstration {id:?} has no unbiased rationale")))
        })
        .collect()
}

/// Initial demonstration selector over the store's unbiased demonstrations.
pub fn build_selector(
    strategy: InitStrategy,
    store: &RationaleStore,
    count: usize,
    seed: u64,
    demo_file: Option<&Path>,
) -> Result<Box<dyn DemoSelector>, EvalError> {
    let pool = store.demonstrations();
    Ok(match strategy {
        InitStrategy::Random => Box::new(RandomSelector::new(pool, count, derive_seed(seed, &["demos"]))),
        InitStrategy::Similar => Box::new(SimilaritySelector::new(pool, count)),
        InitStrategy::File => {
            let path =
                demo_file.ok_or_else(|| EvalError::InvalidConfig("the file strategy needs a demo file".into()))?;
            Box::new(FixedSelector::new(load_demo_file(path, store)?))
        }
    })
}

/// Everything needed to predict test samples with any method.
pub struct Runner<'a> {
    pub backend: &'a dyn LlmBackend,
    pub labels: &'a LabelSet,
    pub selector: &'a dyn DemoSelector,
    /// Required by [`Method::Srvf`].
    pub supervisor: Option<(&'a dyn RationaleEncoder, &'a AnchorIndex)>,
    pub loop_config: &'a LoopConfig,
    pub self_consistency_n: usize,
    pub seed: u64,
}

impl Runner<'_> {
    pub fn predict(&self, method: Method, sample: &LabeledSample, log: &CallLog) -> Result<Prediction, EvalError> {
        let demos = self.selector.select(sample);
        Ok(match method {
            Method::Icl => predict_icl(sample, self.backend, log, self.labels, &demos, self.seed),
            Method::Srvf => {
                let (encoder, index) = self
                    .supervisor
                    .ok_or_else(|| EvalError::InvalidConfig("srvf needs a trained supervisor".into()))?;
                predict_with_feedback(
                    sample,
                    self.backend,
                    log,
                    self.labels,
                    encoder,
                    index,
                    &demos,
                    self.loop_config,
                    self.seed,
                )
            }
            Method::SelfConsistency => {
                let spec = PromptSpec::standard(&demos, sample, self.labels);
                let (label, calls) = self_consistency(self.backend, log, &spec, self.self_consistency_n, self.seed);
                Prediction {
                    rationale_text: String::new(),
                    label,
                    raw_response: String::new(),
                    iterations_used: 0,
                    llm_calls: calls,
                    p_b_trace: Vec::new(),
                }
            }
        })
    }

    /// Predicts every sample in parallel; output order follows `test`.
    pub fn run(&self, method: Method, test: &[LabeledSample], log: &CallLog) -> Result<Vec<Prediction>, EvalError> {
        test.par_iter().map(|s| self.predict(method, s, log)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorSummary {
    pub final_loss: f64,
    pub separation: f64,
    pub pair_counts: BTreeMap<PairClass, usize>,
    pub empty_classes: Vec<PairClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub status: MethodStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub micro_f1: Option<f64>,
    pub counts: Option<F1Counts>,
    pub llm_calls: usize,
    pub corrected_fraction: f64,
    pub worst_confusions: Vec<Confusion>,
}

impl MethodReport {
    fn failed(method: Method, error: String) -> Self {
        Self {
            method,
            status: MethodStatus::Failed,
            error: Some(error),
            micro_f1: None,
            counts: None,
            llm_calls: 0,
            corrected_fraction: 0.0,
            worst_confusions: Vec::new(),
        }
    }
}

/// Deterministic part of a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub collection: CollectReport,
    pub supervisor: Option<SupervisorSummary>,
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Wall-clock figures, kept apart from the report because they vary between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub methods: BTreeMap<Method, EfficiencyReport>,
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: EvalReport,
    pub predictions: BTreeMap<Method, Vec<PredictionRecord>>,
    pub matrices: BTreeMap<Method, ErrorMatrix>,
    pub timing: Timing,
}

impl BenchRun {
    /// Writes `report.json`, `timing.json`, and per method
    /// `preds_<method>.jsonl` and `error_matrix_<method>.csv`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_json(&dir.join("report.json"), &self.report)?;
        write_json(&dir.join("timing.json"), &self.timing)?;
        for (method, records) in &self.predictions {
            save_predictions(&dir.join(format!("preds_{method}.jsonl")), records)?;
        }
        for (method, m) in &self.matrices {
            let path = dir.join(format!("error_matrix_{method}.csv"));
            std::fs::write(&path, m.to_csv()).map_err(|source| EvalError::Io { path, source })?;
        }
        Ok(())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads the configured data and runs [`run_benchmark_on`].
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchRun, EvalError> {
    config.validate()?;
    let (labels, train, test) = config.load_data()?;
    let backend = config.backend.build(&labels, train.iter().chain(&test))?;
    run_benchmark_on(config, &labels, &train, &test, backend.as_ref())
}

/// Collects rationales on `train`, trains the supervisor when SRVF is
/// requested, and runs each configured method over `test`. A method that
/// fails is reported as failed while the others proceed.
pub fn run_benchmark_on(
    config: &BenchConfig,
    labels: &LabelSet,
    train_set: &[LabeledSample],
    test: &[LabeledSample],
    backend: &dyn LlmBackend,
) -> Result<BenchRun, EvalError> {
    config.validate()?;
    let started = Instant::now();
    let pipeline_log = CallLog::new();
    let (store, collection) = collect(train_set, backend, &pipeline_log, labels, &config.collect_config())?;

    let mut supervisor = None;
    let mut trained: Result<(SupervisorModel, AnchorIndex), String> = Err("supervisor not requested".into());
    if config.methods.contains(&Method::Srvf) {
        let train_started = Instant::now();
        let train_config = config.train_config();
        trained = train(&store, &train_config)
            .and_then(|(model, report)| {
                let sep = separation(&model, &build_pairs(&store, &train_config.sampler))?;
                let index = AnchorIndex::build(&model, &store, labels)?;
                supervisor = Some(SupervisorSummary {
                    final_loss: report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                    separation: sep,
                    pair_counts: report.pair_counts,
                    empty_classes: report.empty_classes,
                });
                Ok((model, index))
            })
            .map_err(|e| e.to_string());
        pipeline_log.record_span(Phase::PreInference, train_started.elapsed());
        if let Err(e) = &trained {
            warn!(error = %e, "supervisor training failed");
        }
    }
    let pre_inference = efficiency_report(&pipeline_log).pre_inference_seconds;

    let selector = build_selector(
        config.init_demos,
        &store,
        config.demo_count,
        config.seed,
        config.demo_file.as_deref(),
    )?;
    let mut runner = Runner {
        backend,
        labels,
        selector: selector.as_ref(),
        supervisor: None,
        loop_config: &config.loop_config,
        self_consistency_n: config.self_consistency_n,
        seed: config.seed,
    };
    if let Ok((model, index)) = &trained {
        runner.supervisor = Some((model as &dyn RationaleEncoder, index));
    }
    let negatives = labels.negatives().map(|l| l.name()).collect();

    let mut methods = Vec::new();
    let mut predictions = BTreeMap::new();
    let mut matrices = BTreeMap::new();
    let mut timings = BTreeMap::new();
    for &method in &config.methods {
        if method == Method::Srvf {
            if let Err(e) = &trained {
                methods.push(MethodReport::failed(method, e.clone()));
                continue;
            }
        }
        let log = CallLog::new();
        let preds = match runner.run(method, test, &log) {
            Ok(p) => p,
            Err(e) => {
                warn!(%method, error = %e, "method failed");
                methods.push(MethodReport::failed(method, e.to_string()));
                continue;
            }
        };
        let pairs: Vec<(&str, &str)> = test
            .iter()
            .zip(&preds)
            .map(|(s, p)| (s.gold.name(), p.label.name()))
            .collect();
        let counts = f1_counts(pairs.iter().copied(), &negatives);
        let matrix = error_matrix(pairs.iter().copied(), labels);
        let mut efficiency = efficiency_report(&log);
        if method == Method::Srvf {
            efficiency.pre_inference_seconds = pre_inference;
        }
        info!(%method, micro_f1 = counts.f1(), calls = efficiency.llm_calls, "method finished");
        methods.push(MethodReport {
            method,
            status: MethodStatus::Ok,
            error: None,
            micro_f1: Some(counts.f1()),
            counts: Some(counts),
            llm_calls: preds.iter().map(|p| p.llm_calls).sum(),
            corrected_fraction: efficiency.corrected_fraction,
            worst_confusions: matrix.worst(10),
        });
        predictions.insert(
            method,
            test.iter()
                .zip(&preds)
                .map(|(s, p)| PredictionRecord::new(s, p))
                .collect(),
        );
        matrices.insert(method, matrix);
        timings.insert(method, efficiency);
    }

    Ok(BenchRun {
        report: EvalReport {
            seed: config.seed,
            train_samples: train_set.len(),
            test_samples: test.len(),
            collection,
            supervisor,
            methods,
        },
        predictions,
        matrices,
        timing: Timing {
            total_seconds: started.elapsed().as_secs_f64(),
            methods: timings,
        },
    })
}
