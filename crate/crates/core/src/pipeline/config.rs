use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchmark::Split;
use crate::error::{Error, Result};
use crate::providers::ProviderConfig;
use crate::sparse::Bm25Params;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: PathBuf,
    pub corpus: CorpusSpec,
    pub retrievers: Vec<NamedRetriever>,
    #[serde(default)]
    pub diversity: DiversitySpec,
    #[serde(default)]
    pub judge: JudgeSpec,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Restrict evaluation to one split; all questions when absent.
    #[serde(default)]
    pub split: Option<Split>,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub max_workers: usize,
    /// Depth for union upper bound and rank-to-cover analyses.
    #[serde(default = "default_analysis_depth")]
    pub analysis_depth: usize,
}

fn default_ks() -> Vec<usize> {
    vec![1, 5, 10]
}
fn default_workers() -> usize {
    4
}
fn default_analysis_depth() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    /// One corpus JSONL shared by every question.
    #[serde(default)]
    pub shared: Option<PathBuf>,
    /// Page dump root laid out as `{question_id}/{rank}.html|.txt`.
    #[serde(default)]
    pub per_question_root: Option<PathBuf>,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    crate::corpus::DEFAULT_WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRetriever {
    pub name: String,
    #[serde(flatten)]
    pub spec: RetrieverSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetrieverSpec {
    Bm25 {
        #[serde(default = "default_k1")]
        k1: f64,
        #[serde(default = "default_b")]
        b: f64,
    },
    Dense {
        provider: EmbedderSpec,
        #[serde(default = "default_batch")]
        batch_size: usize,
    },
    /// Ranked lists produced elsewhere (JSONL of ranked lists).
    Precomputed { path: PathBuf },
}

fn default_k1() -> f64 {
    Bm25Params::default().k1
}
fn default_b() -> f64 {
    Bm25Params::default().b
}
fn default_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    Hash {
        dim: usize,
    },
    Http {
        #[serde(flatten)]
        config: ProviderConfig,
        #[serde(default)]
        dim: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChatSpec {
    Http {
        #[serde(flatten)]
        config: ProviderConfig,
    },
    /// Offline digest → reply table (see `providers::FixtureChat`).
    Fixture { path: PathBuf, model: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Fixed(f64),
    Auto(AutoLambda),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoLambda {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DiversitySpec {
    #[default]
    None,
    Mmr {
        lambda: LambdaSpec,
        #[serde(default = "default_pool")]
        pool: usize,
        sim2: EmbedderSpec,
    },
    Expansion {
        chat: ChatSpec,
        #[serde(default)]
        concat_question: bool,
    },
}

fn default_pool() -> usize {
    crate::mmr::DEFAULT_POOL
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JudgeSpec {
    #[default]
    Rule,
    Random {
        rate: f64,
    },
    Llm {
        chat: ChatSpec,
        #[serde(default)]
        shots: u8,
    },
}

impl RunConfig {
    /// Reads `.toml` or `.json` by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?,
        };
        if let Some(base) = path.parent() {
            cfg.resolve_relative_to(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes relative paths relative to the config file's directory.
    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.benchmark);
        fix(&mut self.output_dir);
        if let Some(p) = &mut self.corpus.shared {
            fix(p);
        }
        if let Some(p) = &mut self.corpus.per_question_root {
            fix(p);
        }
        for r in &mut self.retrievers {
            if let RetrieverSpec::Precomputed { path } = &mut r.spec {
                fix(path);
            }
        }
        let fix_chat = |c: &mut ChatSpec| {
            if let ChatSpec::Fixture { path, .. } = c {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        if let DiversitySpec::Expansion { chat, .. } = &mut self.diversity {
            fix_chat(chat);
        }
        if let JudgeSpec::Llm { chat, .. } = &mut self.judge {
            fix_chat(chat);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be non-empty and all >= 1".into()));
        }
        if self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("ks must be strictly ascending".into()));
        }
        if self.retrievers.is_empty() {
            return Err(Error::Config("at least one retriever is required".into()));
        }
        let mut names = std::collections::HashSet::new();
        for r in &self.retrievers {
            if !names.insert(r.name.as_str()) {
                return Err(Error::Config(format!("duplicate retriever name {}", r.name)));
            }
            if r.name.is_empty() || r.name.contains(['/', '\\', ',']) {
                return Err(Error::Config(format!("retriever name {:?} is not usable", r.name)));
            }
        }
        match (&self.corpus.shared, &self.corpus.per_question_root) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::Config("set exactly one of corpus.shared / corpus.per_question_root".into())),
        }
        if self.corpus.window == 0 {
            return Err(Error::Config("corpus.window must be >= 1".into()));
        }
        if let DiversitySpec::Mmr { lambda, pool, .. } = &self.diversity {
            if let LambdaSpec::Fixed(l) = lambda {
                if !(0.0..=1.0).contains(l) {
                    return Err(Error::Config(format!("lambda {l} outside [0, 1]")));
                }
            }
            if *pool < self.max_k() {
                return Err(Error::Config("mmr pool smaller than largest k".into()));
            }
        }
        if let JudgeSpec::Random { rate } = self.judge {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("random judge rate {rate} outside [0, 1]")));
            }
        }
        if let JudgeSpec::Llm { shots, .. } = self.judge {
            if shots > 1 {
                return Err(Error::Config("judge shots must be 0 or 1".into()));
            }
        }
        if self.max_workers == 0 {
            return Err(Error::Config("max_workers must be >= 1".into()));
        }
        Ok(())
    }

    pub fn max_k(&self) -> usize {
        self.ks.last().copied().unwrap_or(1)
    }

    /// Every input file the run reads, for pre-flight checks.
    pub fn input_paths(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = vec![&self.benchmark];
        out.extend(self.corpus.shared.as_deref());
        out.extend(self.corpus.per_question_root.as_deref());
        for r in &self.retrievers {
            if let RetrieverSpec::Precomputed { path } = &r.spec {
                out.push(path);
            }
        }
        if let DiversitySpec::Expansion { chat: ChatSpec::Fixture { path, .. }, .. } = &self.diversity {
            out.push(path);
        }
        if let JudgeSpec::Llm { chat: ChatSpec::Fixture { path, .. }, .. } = &self.judge {
            out.push(path);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOML: &str = r#"
benchmark = "b.jsonl"
output_dir = "out"
ks = [1, 5, 10]
seed = 3

[corpus]
shared = "c.jsonl"

[[retrievers]]
name = "bm25"
kind = "bm25"

[[retrievers]]
name = "hash"
kind = "dense"
provider = { kind = "hash", dim = 64 }

[diversity]
mode = "mmr"
lambda = "auto"
sim2 = { kind = "hash", dim = 64 }

[judge]
kind = "llm"
shots = 1
chat = { kind = "http", base_url = "http://localhost:9", model_name = "m" }
"#;

    #[test]
    fn parses_toml() {
        let cfg: RunConfig = toml::from_str(TOML).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.retrievers.len(), 2);
        assert_eq!(cfg.retrievers[0].spec, RetrieverSpec::Bm25 { k1: 0.9, b: 0.4 });
        assert!(matches!(cfg.diversity, DiversitySpec::Mmr { lambda: LambdaSpec::Auto(_), pool: 100, .. }));
        assert!(matches!(cfg.judge, JudgeSpec::Llm { shots: 1, .. }));
    }

    #[test]
    fn rejects_unsorted_ks() {
        let mut cfg: RunConfig = toml::from_str(TOML).unwrap();
        cfg.ks = vec![5, 1];
        assert!(cfg.validate().is_err());
        cfg.ks = vec![0, 1];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn resolves_relative_paths() {
        let mut cfg: RunConfig = toml::from_str(TOML).unwrap();
        cfg.resolve_relative_to(Path::new("/base"));
        assert_eq!(cfg.benchmark, Path::new("/base/b.jsonl"));
        assert_eq!(cfg.corpus.shared.as_deref(), Some(Path::new("/base/c.jsonl")));
    }
}
