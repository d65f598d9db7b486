//! Run configuration: a TOML document plus command-line overrides, with
//! credentials taken from the environment.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use convqa_core::convergence::CandidatePrompts;
use convqa_core::metrics::AggregationUnit;
use convqa_core::qa::{ChatParams, FewShotExemplar, DEFAULT_SHOT_COUNT};
use convqa_core::subsets::{Method, Ordering, DEFAULT_GROUP_SIZE, DEFAULT_SIZES};

use crate::gateway::{HttpProvider, Provider, ScriptedProvider};
use crate::testworld::{load_world, WorldProvider};

/// Environment variable carrying the bearer credential for HTTP providers.
pub const API_KEY_VAR: &str = "LLM_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config `{path}`: {reason}")]
    Parse { path: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// OpenAI-compatible HTTP endpoint; needs `base_url`, `model`, and the
    /// `LLM_API_KEY` environment variable.
    Openai,
    /// Deterministic provider backed by a test-world file (`world`).
    World,
    /// Seeded hash embeddings only (`dim`, `seed`); no chat.
    Hash,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Report column tag; defaults to `model`.
    #[serde(default)]
    pub tag: Option<String>,
    /// Path to `world.json` when `kind = "world"`.
    #[serde(default)]
    pub world: Option<PathBuf>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub seed: Option<i64>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
}

impl ProviderConfig {
    pub fn world_default(world: PathBuf) -> ProviderConfig {
        ProviderConfig {
            kind: ProviderKind::World,
            base_url: None,
            model: Some("world".into()),
            tag: None,
            world: Some(world),
            dim: None,
            seed: Some(0),
            temperature: None,
            max_tokens: None,
        }
    }

    pub fn model_tag(&self) -> String {
        self.tag
            .clone()
            .or_else(|| self.model.clone())
            .unwrap_or_else(|| "model".into())
    }

    pub fn chat_params(&self, default_max_tokens: u32) -> ChatParams {
        ChatParams {
            model: self.model.clone().unwrap_or_default(),
            temperature: self.temperature.unwrap_or(0.0),
            max_tokens: self.max_tokens.unwrap_or(default_max_tokens),
            seed: Some(self.seed.unwrap_or(0)),
        }
    }

    fn validate(&self, role: &str, api_key: Option<&str>) -> Result<(), ConfigError> {
        match self.kind {
            ProviderKind::Openai => {
                if self.base_url.as_deref().unwrap_or("").is_empty() {
                    return Err(ConfigError::Invalid(format!(
                        "{role}: `base_url` is required for kind = \"openai\""
                    )));
                }
                if self.model.as_deref().unwrap_or("").is_empty() {
                    return Err(ConfigError::Invalid(format!(
                        "{role}: `model` is required for kind = \"openai\""
                    )));
                }
                if api_key.map(str::is_empty).unwrap_or(true) {
                    return Err(ConfigError::Invalid(format!(
                        "{role}: kind = \"openai\" requires the {API_KEY_VAR} environment variable"
                    )));
                }
            }
            ProviderKind::World => {
                let Some(world) = &self.world else {
                    return Err(ConfigError::Invalid(format!(
                        "{role}: `world` path is required for kind = \"world\""
                    )));
                };
                if !world.is_file() {
                    return Err(ConfigError::Invalid(format!(
                        "{role}: world file `{}` not found",
                        world.display()
                    )));
                }
            }
            ProviderKind::Hash => {
                if self.dim.unwrap_or(48) == 0 {
                    return Err(ConfigError::Invalid(format!("{role}: `dim` must be >= 1")));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self, api_key: Option<&str>) -> Result<Arc<dyn Provider>, ConfigError> {
        match self.kind {
            ProviderKind::Openai => Ok(Arc::new(HttpProvider::new(
                self.base_url.as_deref().unwrap_or(""),
                api_key.unwrap_or(""),
            ))),
            ProviderKind::World => {
                let path = self.world.as_ref().expect("validated");
                let world = load_world(path)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(Arc::new(WorldProvider::new(world)))
            }
            ProviderKind::Hash => {
                let dim = self.dim.unwrap_or(48);
                let seed = self.seed.unwrap_or(0) as u64;
                Ok(Arc::new(
                    ScriptedProvider::new(&format!("hash-embed-{dim}-{seed}"))
                        .with_hash_embeddings(dim, seed),
                ))
            }
        }
    }

    /// Tag used for the similarity ledger / embedding cache identity.
    pub fn embedding_model(&self) -> String {
        match self.kind {
            ProviderKind::Hash => format!(
                "hash-{}-{}",
                self.dim.unwrap_or(48),
                self.seed.unwrap_or(0)
            ),
            _ => self.model.clone().unwrap_or_else(|| "embedding".into()),
        }
    }
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from(".convqa-cache")
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_concurrency() -> usize {
    4
}

fn default_group_size() -> usize {
    DEFAULT_GROUP_SIZE
}

fn default_sizes() -> Vec<usize> {
    DEFAULT_SIZES.to_vec()
}

fn default_methods() -> Vec<Method> {
    vec![Method::Convergence, Method::CosineSimilarity]
}

fn default_orderings() -> Vec<Ordering> {
    vec![Ordering::Canonical]
}

fn default_shot_count() -> usize {
    DEFAULT_SHOT_COUNT
}

fn default_aggregation() -> AggregationUnit {
    AggregationUnit::PerPassage
}

fn default_true() -> bool {
    true
}

fn default_scoring_max_tokens() -> u32 {
    512
}

fn default_answer_max_tokens() -> u32 {
    64
}

/// The full run configuration. Every field has a default except the
/// dataset and the providers, which the config file (or flags) must name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_sizes")]
    pub subset_sizes: Vec<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_orderings")]
    pub orderings: Vec<Ordering>,
    /// Optional seeded subsample of questions (applied after filtering).
    #[serde(default)]
    pub sample: Option<usize>,
    #[serde(default = "default_aggregation")]
    pub aggregation: AggregationUnit,
    #[serde(default)]
    pub shots_file: Option<PathBuf>,
    #[serde(default = "default_shot_count")]
    pub shot_count: usize,
    #[serde(default = "default_true")]
    pub resume: bool,
    #[serde(default = "default_scoring_max_tokens")]
    pub scoring_max_tokens: u32,
    #[serde(default = "default_answer_max_tokens")]
    pub answer_max_tokens: u32,
    #[serde(default)]
    pub prompts: Option<CandidatePrompts>,
    pub scorer: ProviderConfig,
    pub embedding: ProviderConfig,
    pub answer: Vec<ProviderConfig>,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn prompts(&self) -> CandidatePrompts {
        self.prompts.clone().unwrap_or_default()
    }

    /// Load the configured shots (or the built-in defaults), truncated to
    /// `shot_count`.
    pub fn shots(&self) -> Result<Vec<FewShotExemplar>, ConfigError> {
        let mut shots = match &self.shots_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?
            }
            None => convqa_core::qa::default_shots(),
        };
        if self.shot_count > shots.len() {
            return Err(ConfigError::Invalid(format!(
                "shot_count {} exceeds available shots {}",
                self.shot_count,
                shots.len()
            )));
        }
        shots.truncate(self.shot_count);
        convqa_core::qa::validate_shots(&shots)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(shots)
    }

    /// Check everything checkable before any work starts. `api_key` is the
    /// value of [`API_KEY_VAR`], passed in for testability.
    pub fn validate(&self, api_key: Option<&str>) -> Result<(), ConfigError> {
        if !self.dataset.is_file() {
            return Err(ConfigError::Invalid(format!(
                "dataset `{}` not found",
                self.dataset.display()
            )));
        }
        if self.concurrency < 1 {
            return Err(ConfigError::Invalid("concurrency must be >= 1".into()));
        }
        if self.group_size < 1 {
            return Err(ConfigError::Invalid("group_size must be >= 1".into()));
        }
        if self.subset_sizes.is_empty() || self.subset_sizes.contains(&0) {
            return Err(ConfigError::Invalid(
                "subset_sizes must be non-empty positive integers".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(ConfigError::Invalid("methods must be non-empty".into()));
        }
        if self.orderings.is_empty() {
            return Err(ConfigError::Invalid("orderings must be non-empty".into()));
        }
        if self.answer.is_empty() {
            return Err(ConfigError::Invalid(
                "at least one [[answer]] provider is required".into(),
            ));
        }
        self.prompts()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.shots()?;
        self.scorer.validate("scorer", api_key)?;
        self.embedding.validate("embedding", api_key)?;
        for (i, answer) in self.answer.iter().enumerate() {
            answer.validate(&format!("answer[{i}]"), api_key)?;
        }
        Ok(())
    }

    pub fn api_key_from_env() -> Option<String> {
        std::env::var(API_KEY_VAR).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn world_fixture(dir: &Path) -> (PathBuf, PathBuf) {
        let (world, corpus) = crate::testworld::generate_world(1, 4, 3);
        let world_path = dir.join("world.json");
        let dataset = dir.join("corpus.jsonl");
        crate::testworld::save_world(&world, &world_path).unwrap();
        crate::corpus::save_corpus(&corpus, &dataset).unwrap();
        (world_path, dataset)
    }

    fn config_text(dataset: &Path, world: &Path) -> String {
        format!(
            r#"
dataset = "{}"
concurrency = 2

[scorer]
kind = "world"
model = "world-judge"
world = "{}"

[embedding]
kind = "hash"
dim = 32
seed = 5

[[answer]]
kind = "world"
model = "world-answerer"
tag = "rule-based"
world = "{}"
"#,
            dataset.display(),
            world.display(),
            world.display()
        )
    }

    #[test]
    fn parses_and_validates_world_config() {
        let dir = tempfile::tempdir().unwrap();
        let (world, dataset) = world_fixture(dir.path());
        let path = dir.path().join("run.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(config_text(&dataset, &world).as_bytes()).unwrap();
        let config = RunConfig::load(&path).unwrap();
        config.validate(None).unwrap();
        assert_eq!(config.group_size, 10);
        assert_eq!(config.subset_sizes, vec![3, 4, 5]);
        assert_eq!(config.answer[0].model_tag(), "rule-based");
        assert_eq!(config.embedding.embedding_model(), "hash-32-5");
        assert_eq!(config.shots().unwrap().len(), 5);
    }

    #[test]
    fn openai_kind_requires_api_key() {
        let dir = tempfile::tempdir().unwrap();
        let (world, dataset) = world_fixture(dir.path());
        let path = dir.path().join("run.toml");
        std::fs::write(&path, config_text(&dataset, &world)).unwrap();
        let mut config = RunConfig::load(&path).unwrap();
        config.scorer = ProviderConfig {
            kind: ProviderKind::Openai,
            base_url: Some("http://localhost:9".into()),
            model: Some("m".into()),
            tag: None,
            world: None,
            dim: None,
            seed: None,
            temperature: None,
            max_tokens: None,
        };
        let err = config.validate(None).unwrap_err();
        assert!(err.to_string().contains(API_KEY_VAR), "{err}");
        config.validate(Some("key-123")).unwrap();
    }

    #[test]
    fn missing_paths_are_rejected_up_front() {
        let dir = tempfile::tempdir().unwrap();
        let (world, dataset) = world_fixture(dir.path());
        let path = dir.path().join("run.toml");
        std::fs::write(&path, config_text(&dataset, &world)).unwrap();
        let mut config = RunConfig::load(&path).unwrap();
        config.dataset = dir.path().join("nope.jsonl");
        assert!(config.validate(None).is_err());
    }

    #[test]
    fn unknown_keys_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (world, dataset) = world_fixture(dir.path());
        let text = format!("mystery_knob = 3\n{}", config_text(&dataset, &world));
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(ConfigError::Parse { .. })
        ));
    }
}
