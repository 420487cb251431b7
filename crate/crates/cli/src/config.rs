//! Configuration shared by all subcommands: built-in defaults, overlaid by an
//! optional JSON file, overlaid by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use srvf_core::domain::LabelSet;
use srvf_core::eval::{BackendConfig, BenchConfig};
use srvf_core::llm::{HttpConfig, LlmBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    #[serde(flatten)]
    pub bench: BenchConfig,
    /// Worker threads, and concurrent requests for the HTTP backend.
    pub max_inflight: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bench: BenchConfig::default(),
            max_inflight: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LlmKind {
    Mock,
    Http,
}

/// Flags accepted by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    /// Master seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Label set file (JSON with `labels` and `negatives`); SemEval when absent.
    #[arg(long, global = true)]
    pub labels: Option<PathBuf>,
    /// Backend: the deterministic mock or an OpenAI-compatible endpoint (key in SRVF_API_KEY).
    #[arg(long, global = true, value_enum)]
    pub llm: Option<LlmKind>,
    /// Base URL of the chat-completions endpoint.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Model name sent to the endpoint.
    #[arg(long, global = true)]
    pub llm_model: Option<String>,
    /// Sampling temperature sent to the endpoint.
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Worker threads and concurrent requests.
    #[arg(long, global = true)]
    pub max_inflight: Option<usize>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    /// Reads `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Config = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let b = &mut cfg.bench;
        resolve(base, &mut b.train);
        resolve(base, &mut b.test);
        for p in [&mut b.labels, &mut b.demo_file, &mut b.out_dir].into_iter().flatten() {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn resolve(common: &CommonArgs) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(common)?;
        Ok(cfg)
    }

    fn apply(&mut self, f: &CommonArgs) -> Result<()> {
        let b = &mut self.bench;
        if let Some(v) = f.seed {
            b.seed = v;
        }
        if let Some(v) = &f.labels {
            b.labels = Some(v.clone());
        }
        match f.llm {
            Some(LlmKind::Mock) if !matches!(b.backend, BackendConfig::Mock { .. }) => {
                b.backend = BackendConfig::default();
            }
            Some(LlmKind::Http) if !matches!(b.backend, BackendConfig::Http(_)) => {
                b.backend = BackendConfig::Http(HttpConfig::default());
            }
            _ => {}
        }
        if let Some(v) = f.max_inflight {
            if v == 0 {
                bail!("--max-inflight must be at least 1");
            }
            self.max_inflight = v;
        }
        let http_flags = f.endpoint.is_some() || f.llm_model.is_some() || f.temperature.is_some();
        match &mut b.backend {
            BackendConfig::Http(h) => {
                if let Some(v) = &f.endpoint {
                    h.base_url = v.clone();
                }
                if let Some(v) = &f.llm_model {
                    h.model = v.clone();
                }
                if let Some(v) = f.temperature {
                    h.temperature = v;
                }
                h.max_inflight = self.max_inflight;
            }
            BackendConfig::Mock { .. } if http_flags => {
                bail!("--endpoint, --llm-model and --temperature need the http backend");
            }
            BackendConfig::Mock { .. } => {}
        }
        Ok(())
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        Ok(match &self.bench.labels {
            Some(p) => LabelSet::load(p)?,
            None => LabelSet::semeval(),
        })
    }

    pub fn backend<'a>(
        &self,
        labels: &LabelSet,
        known: impl IntoIterator<Item = &'a srvf_core::domain::LabeledSample>,
    ) -> Result<Box<dyn LlmBackend>> {
        Ok(self.bench.backend.build(labels, known)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"seed": 4, "demo_count": 3, "train": "t.jsonl", "loop": {"max_iters": 2}}"#,
        )
        .unwrap();
        let common = CommonArgs {
            config: Some(path),
            seed: Some(9),
            ..CommonArgs::default()
        };
        let cfg = Config::resolve(&common).unwrap();
        assert_eq!(cfg.bench.seed, 9);
        assert_eq!(cfg.bench.demo_count, 3);
        assert_eq!(cfg.bench.loop_config.max_iters, 2);
        assert_eq!(cfg.bench.loop_config.k, 5);
        assert_eq!(cfg.bench.train, dir.path().join("t.jsonl"));
        assert_eq!(cfg.max_inflight, 8);
    }

    #[test]
    fn http_flags_need_http_backend() {
        let common = CommonArgs {
            endpoint: Some("http://x".into()),
            ..CommonArgs::default()
        };
        assert!(Config::resolve(&common).is_err());
        let common = CommonArgs {
            llm: Some(LlmKind::Http),
            endpoint: Some("http://x".into()),
            max_inflight: Some(3),
            ..CommonArgs::default()
        };
        let cfg = Config::resolve(&common).unwrap();
        let BackendConfig::Http(h) = cfg.bench.backend else {
            panic!("not http")
        };
        assert_eq!(h.base_url, "http://x");
        assert_eq!(h.max_inflight, 3);
    }
}
