use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::compose::{Compositor, StubCompositor};
use super::image::{ImageGenerator, StubImageGenerator};
use super::{Backends, CasInspirer, Inspirer, LlmInspirer, RandomInspirer};
use crate::bridge::{BridgeClient, BridgeEmbedder, BridgeScorer};
use crate::embed::{Embedder, HashEmbedder};
use crate::prompts::InspirationMode;
use crate::sampler::{CasConfig, DEFAULT_LLM_RETRIES};
use crate::scorer::{CooccurrenceModel, SequenceScorer};
use crate::vocab::Vocabulary;
use crate::{Error, Result};

pub const DEFAULT_PATIENCE: u32 = 5;

/// Environment variable overriding `backends.bridge_url`.
pub const BRIDGE_URL_ENV: &str = "CAS_BRIDGE_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Cas,
    Random,
    Llm,
    LlmFree,
    /// Concepts are chosen interactively through the service.
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub llm_retries: usize,
    /// `cas.seed` is ignored by the agent: each generation derives its own seed
    /// from the run seed.
    pub cas: CasConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Cas,
            llm_retries: DEFAULT_LLM_RETRIES,
            cas: CasConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Stub,
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub bridge_url: Option<String>,
    pub timeout_secs: u64,
    pub compositor: BackendKind,
    pub image: BackendKind,
    /// `stub` is the deterministic hashed-feature embedder.
    pub embedder: BackendKind,
    /// `stub` is the in-process co-occurrence model loaded from `data`.
    pub scorer: BackendKind,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            bridge_url: None,
            timeout_secs: 30,
            compositor: BackendKind::Stub,
            image: BackendKind::Stub,
            embedder: BackendKind::Stub,
            scorer: BackendKind::Stub,
        }
    }
}

/// Data files; relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub vocabulary: Option<PathBuf>,
    pub coherence_model: Option<PathBuf>,
    pub context_model: Option<PathBuf>,
}

/// Agent run configuration, stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed_concepts: Vec<String>,
    pub generations: u32,
    #[serde(default = "default_patience")]
    pub patience: u32,
    #[serde(default)]
    pub preserve_original: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub backends: BackendConfig,
    #[serde(default)]
    pub data: DataConfig,
}

fn default_patience() -> u32 {
    DEFAULT_PATIENCE
}

impl RunConfig {
    pub fn new<S: AsRef<str>>(seed_concepts: &[S], generations: u32) -> Self {
        Self {
            seed_concepts: seed_concepts.iter().map(|s| s.as_ref().to_owned()).collect(),
            generations,
            patience: DEFAULT_PATIENCE,
            preserve_original: false,
            seed: 0,
            sampler: SamplerConfig::default(),
            backends: BackendConfig::default(),
            data: DataConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.generations == 0 {
            return Err(Error::Config("generations must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.seed_concepts.is_empty() {
            return Err(Error::Config("at least one seed concept is required".into()));
        }
        self.sampler.cas.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid run config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize run config: {e}")))
    }

    /// Load a config file and make its data paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config = Self::from_toml(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.data.resolve_against(base);
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Bridge URL from the environment, falling back to the config.
    pub fn bridge_url(&self) -> Option<String> {
        std::env::var(BRIDGE_URL_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .or_else(|| self.backends.bridge_url.clone())
    }
}

impl DataConfig {
    pub fn resolve_against(&mut self, base: &Path) {
        for p in [&mut self.vocabulary, &mut self.coherence_model, &mut self.context_model]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Models loaded for a run: vocabulary plus the two CAS scorers when configured.
#[derive(Clone)]
pub struct Models {
    pub vocabulary: Arc<Vocabulary>,
    pub coherence: Option<Arc<dyn SequenceScorer>>,
    pub context: Option<Arc<dyn SequenceScorer>>,
}

/// Coherence and context model names sent to a bridge scorer.
pub const BRIDGE_COHERENCE_MODEL: &str = "coherence";
pub const BRIDGE_CONTEXT_MODEL: &str = "context";

fn bridge_client(config: &RunConfig) -> Result<BridgeClient> {
    let url = config.bridge_url().ok_or_else(|| {
        Error::Config(format!(
            "a bridge backend is configured but no bridge_url (or {BRIDGE_URL_ENV}) is set"
        ))
    })?;
    Ok(BridgeClient::new(url, Duration::from_secs(config.backends.timeout_secs)))
}

/// Load the vocabulary and scorers named by the config.
pub fn load_models(config: &RunConfig) -> Result<Option<Models>> {
    let Some(vocab_path) = &config.data.vocabulary else {
        return Ok(None);
    };
    let vocabulary = Arc::new(Vocabulary::load(vocab_path)?);
    let (coherence, context): (Option<Arc<dyn SequenceScorer>>, Option<Arc<dyn SequenceScorer>>) =
        match config.backends.scorer {
            BackendKind::Bridge => {
                let client = bridge_client(config)?;
                (
                    Some(Arc::new(BridgeScorer::connect(
                        client.clone(),
                        Some(BRIDGE_COHERENCE_MODEL.into()),
                        vocabulary.clone(),
                    )?)),
                    Some(Arc::new(BridgeScorer::connect(
                        client,
                        Some(BRIDGE_CONTEXT_MODEL.into()),
                        vocabulary.clone(),
                    )?)),
                )
            }
            BackendKind::Stub => {
                let load = |p: &Option<PathBuf>| -> Result<Option<Arc<dyn SequenceScorer>>> {
                    match p {
                        Some(p) => Ok(Some(Arc::new(CooccurrenceModel::load(p, &vocabulary)?))),
                        None => Ok(None),
                    }
                };
                (load(&config.data.coherence_model)?, load(&config.data.context_model)?)
            }
        };
    Ok(Some(Models {
        vocabulary,
        coherence,
        context,
    }))
}

/// Build the inspiration backend for the configured sampler. `None` for human mode.
pub fn build_inspirer(config: &RunConfig, models: Option<&Models>) -> Result<Option<Box<dyn Inspirer>>> {
    let need_vocab = || {
        models.ok_or_else(|| {
            Error::Config(format!(
                "sampler {:?} needs data.vocabulary",
                config.sampler.kind
            ))
        })
    };
    Ok(match config.sampler.kind {
        SamplerKind::Human => None,
        SamplerKind::Random => Some(Box::new(RandomInspirer::new(need_vocab()?.vocabulary.clone()))),
        SamplerKind::Cas => {
            let m = need_vocab()?;
            let (Some(coherence), Some(context)) = (&m.coherence, &m.context) else {
                return Err(Error::Config(
                    "the CAS sampler needs a coherence and a context model".into(),
                ));
            };
            Some(Box::new(CasInspirer::new(
                m.vocabulary.clone(),
                coherence.clone(),
                context.clone(),
                config.sampler.cas,
            )))
        }
        SamplerKind::Llm | SamplerKind::LlmFree => {
            let mode = if config.sampler.kind == SamplerKind::Llm {
                InspirationMode::Constrained
            } else {
                InspirationMode::Free
            };
            Some(Box::new(LlmInspirer::new(
                Arc::new(bridge_client(config)?),
                need_vocab()?.vocabulary.clone(),
                mode,
                config.sampler.llm_retries,
            )))
        }
    })
}

/// Build every backend named by the config. Bridge backends are contacted here, so
/// handshake mismatches surface before the first generation.
pub fn build_backends(config: &RunConfig, models: Option<&Models>) -> Result<Backends> {
    config.validate()?;
    let compositor: Box<dyn Compositor> = match config.backends.compositor {
        BackendKind::Stub => Box::new(StubCompositor),
        BackendKind::Bridge => Box::new(bridge_client(config)?),
    };
    let image: Box<dyn ImageGenerator> = match config.backends.image {
        BackendKind::Stub => Box::new(StubImageGenerator::new(config.seed)),
        BackendKind::Bridge => Box::new(bridge_client(config)?),
    };
    let embedder: Arc<dyn Embedder> = match config.backends.embedder {
        BackendKind::Stub => Arc::new(HashEmbedder::default()),
        BackendKind::Bridge => Arc::new(BridgeEmbedder::connect(bridge_client(config)?)?),
    };
    Ok(Backends {
        inspirer: build_inspirer(config, models)?,
        compositor,
        image,
        text_embedder: embedder.clone(),
        image_embedder: embedder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_with_defaults() {
        let config = RunConfig::from_toml(
            r#"
seed_concepts = ["woman", "ukiyo_e"]
generations = 10

[sampler]
kind = "random"

[sampler.cas]
beta = 0.5
"#,
        )
        .unwrap();
        assert_eq!(config.patience, 5);
        assert_eq!(config.sampler.kind, SamplerKind::Random);
        assert_eq!(config.sampler.cas.beta, 0.5);
        assert_eq!(config.sampler.cas.n, 256);
        let back = RunConfig::from_toml(&config.to_toml().unwrap()).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(RunConfig::from_toml("seed_concepts = [\"a\"]\ngenerations = 0").is_err());
        assert!(RunConfig::from_toml("seed_concepts = [\"a\"]\ngenerations = 1\npatience = 0").is_err());
        assert!(RunConfig::from_toml("seed_concepts = [\"a\"]\ngenerations = 1\nbogus = 1").is_err());
    }

    #[test]
    fn relative_data_paths_resolve() {
        let mut d = DataConfig {
            vocabulary: Some("v.txt".into()),
            coherence_model: Some("/abs/c.json".into()),
            context_model: None,
        };
        d.resolve_against(Path::new("/runs/x"));
        assert_eq!(d.vocabulary.unwrap(), Path::new("/runs/x/v.txt"));
        assert_eq!(d.coherence_model.unwrap(), Path::new("/abs/c.json"));
    }
}
