use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use cas_core::agent::{
    adoption_rate, build_backends, load_models, Agent, GenerationRecord, Inspiration, Models, RunConfig,
    RunDir,
};
use cas_core::bridge::BridgeClient;
use cas_core::prompts::NoveltyTrend;
use cas_core::sampler::{human_suggestion_bundle, InspirationProposal, LlmSuggestionSource, Provenance};
use cas_core::vocab::ConceptId;
use cas_core::Error;

use crate::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Autonomous,
    Human,
}

/// A human's decision for the next generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendingChoice {
    Concept(InspirationProposal),
    Skip,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    session_id: String,
    mode: SessionMode,
    pending: Option<PendingChoice>,
}

/// Body of `POST /sessions`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub config: RunConfig,
    pub mode: SessionMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

/// Body of `POST /sessions/{id}/choice`: exactly one of the fields.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Choice {
    #[serde(default)]
    pub concept: Option<String>,
    /// Index into the current suggestions.
    #[serde(default)]
    pub suggestion: Option<usize>,
    #[serde(default)]
    pub skip: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChoiceAck {
    pub accepted: Option<String>,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolView {
    pub active: Vec<String>,
    pub original: Vec<String>,
    pub expired: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adoption {
    /// Generations that added a concept.
    pub total: usize,
    pub human: usize,
    pub cas: usize,
    pub llm: usize,
    /// Share of added concepts taken from CAS suggestions.
    pub cas_rate: Option<f64>,
}

/// Body of `GET /sessions/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub mode: SessionMode,
    pub generation: u32,
    pub generations: u32,
    pub finished: bool,
    pub pool: PoolView,
    pub history: Vec<GenerationRecord>,
    pub suggestions: Vec<InspirationProposal>,
    pub suggestion_errors: Vec<String>,
    pub pending: Option<PendingChoice>,
    pub novelty_trend: Option<NoveltyTrend>,
    pub adoption: Adoption,
}

pub(crate) struct SessionInner {
    agent: Agent,
    models: Option<Models>,
    suggestions: Vec<InspirationProposal>,
    suggestion_errors: Vec<String>,
    pending: Option<PendingChoice>,
}

pub struct Session {
    id: String,
    mode: SessionMode,
    dir: PathBuf,
    inner: Arc<Mutex<SessionInner>>,
}

fn new_session_id() -> String {
    let mut bytes = [0u8; 16];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> cas_core::Result<()> {
    let tmp = dir.join("manifest.json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(manifest)?)?;
    fs::rename(&tmp, dir.join("manifest.json"))?;
    Ok(())
}

impl SessionInner {
    fn refresh_suggestions(&mut self, mode: SessionMode) {
        self.suggestions.clear();
        self.suggestion_errors.clear();
        if mode != SessionMode::Human || self.agent.is_finished() {
            return;
        }
        let Some(models) = &self.models else {
            self.suggestion_errors.push("no vocabulary configured; suggestions unavailable".into());
            return;
        };
        let (Some(coherence), Some(context)) = (&models.coherence, &models.context) else {
            self.suggestion_errors.push("no CAS models configured; suggestions unavailable".into());
            return;
        };
        let vocab = &models.vocabulary;
        let pool = self.agent.pool();
        let ids = |labels: &mut dyn Iterator<Item = &String>| -> Vec<ConceptId> {
            labels.filter_map(|l| vocab.id(l)).collect()
        };
        let config = self.agent.config();
        let seeds = match config.sampler.cas.conditioning {
            cas_core::sampler::Conditioning::Seed => ids(&mut pool.original().iter()),
            cas_core::sampler::Conditioning::Pool => ids(&mut pool.active().iter()),
        };
        let active: HashSet<ConceptId> = ids(&mut pool.active().iter()).into_iter().collect();
        let expired: HashSet<ConceptId> = ids(&mut pool.expired().iter()).into_iter().collect();
        let cfg = cas_core::sampler::CasConfig {
            seed: self.agent.generation_seed(self.agent.next_generation()),
            ..config.sampler.cas
        };
        let client = config
            .bridge_url()
            .map(|url| BridgeClient::new(url, Duration::from_secs(config.backends.timeout_secs)));
        let state = self.agent.inspiration_state();
        let llm = client.as_ref().map(|c| LlmSuggestionSource {
            client: c,
            state: &state,
            retries: config.sampler.llm_retries,
        });
        let (mut proposals, errors) = human_suggestion_bundle(
            &seeds,
            &active,
            &expired,
            &cfg,
            coherence.as_ref(),
            context.as_ref(),
            vocab,
            llm,
        );
        for p in &mut proposals {
            p.candidate_trace = None;
        }
        self.suggestions = proposals;
        self.suggestion_errors = errors.iter().map(|e| e.to_string()).collect();
    }

    fn state(&self, id: &str, mode: SessionMode) -> SessionState {
        let records = self.agent.records();
        let pool = self.agent.pool();
        let provenances: Vec<Provenance> = records.iter().filter_map(|r| r.provenance).collect();
        let count = |p: Provenance| provenances.iter().filter(|&&x| x == p).count();
        let combined: Vec<f64> = records.iter().filter_map(|r| r.novelty_combined).collect();
        SessionState {
            session_id: id.to_owned(),
            mode,
            generation: records.len() as u32,
            generations: self.agent.config().generations,
            finished: self.agent.is_finished(),
            pool: PoolView {
                active: pool.active().iter().cloned().collect(),
                original: pool.original().iter().cloned().collect(),
                expired: pool.expired().iter().cloned().collect(),
            },
            history: records.to_vec(),
            suggestions: self.suggestions.clone(),
            suggestion_errors: self.suggestion_errors.clone(),
            pending: self.pending.clone(),
            novelty_trend: NoveltyTrend::from_history(&combined),
            adoption: Adoption {
                total: provenances.len(),
                human: count(Provenance::Human),
                cas: count(Provenance::Cas),
                llm: count(Provenance::Llm) + count(Provenance::LlmFree),
                cas_rate: adoption_rate(records, Provenance::Cas),
            },
        }
    }
}

impl Session {
    fn manifest(&self, pending: Option<PendingChoice>) -> Manifest {
        Manifest {
            session_id: self.id.clone(),
            mode: self.mode,
            pending,
        }
    }

    pub async fn state(&self) -> SessionState {
        self.inner.lock().await.state(&self.id, self.mode)
    }

    fn guard(&self) -> Result<tokio::sync::OwnedMutexGuard<SessionInner>, ApiError> {
        self.inner
            .clone()
            .try_lock_owned()
            .map_err(|_| ApiError::conflict("another request is modifying this session"))
    }

    pub async fn submit_choice(&self, choice: Choice) -> Result<ChoiceAck, ApiError> {
        let mut inner = self.guard()?;
        if self.mode != SessionMode::Human {
            return Err(ApiError::invalid("choices are only accepted in human sessions"));
        }
        if inner.agent.is_finished() {
            return Err(ApiError::invalid("the session has finished"));
        }
        let given = [choice.concept.is_some(), choice.suggestion.is_some(), choice.skip];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(ApiError::invalid("give exactly one of concept, suggestion or skip"));
        }
        let pending = if choice.skip {
            PendingChoice::Skip
        } else if let Some(i) = choice.suggestion {
            let p = inner
                .suggestions
                .get(i)
                .cloned()
                .ok_or_else(|| ApiError::invalid(format!("no suggestion {i}")))?;
            inner.agent.check_choice(&p.concept)?;
            PendingChoice::Concept(p)
        } else {
            let raw = choice.concept.unwrap_or_default();
            let label = inner.agent.check_choice(&raw)?;
            let concept_id = match &inner.models {
                Some(m) => Some(m.vocabulary.id(&label).ok_or_else(|| {
                    ApiError::invalid(format!("{label:?} is not in the vocabulary"))
                })?),
                None => None,
            };
            PendingChoice::Concept(InspirationProposal {
                concept: label,
                concept_id,
                provenance: Provenance::Human,
                candidate_trace: None,
            })
        };
        write_manifest(&self.dir, &self.manifest(Some(pending.clone())))?;
        inner.pending = Some(pending.clone());
        Ok(match pending {
            PendingChoice::Skip => ChoiceAck {
                accepted: None,
                provenance: None,
            },
            PendingChoice::Concept(p) => ChoiceAck {
                accepted: Some(p.concept),
                provenance: Some(p.provenance),
            },
        })
    }

    pub async fn step(self: Arc<Self>) -> Result<GenerationRecord, ApiError> {
        let mut inner = self.guard()?;
        let inspiration = match (self.mode, inner.pending.clone()) {
            (SessionMode::Autonomous, _) => Inspiration::Backend,
            (SessionMode::Human, Some(PendingChoice::Concept(p))) => Inspiration::Provided(p),
            (SessionMode::Human, Some(PendingChoice::Skip)) => Inspiration::Skip,
            (SessionMode::Human, None) => {
                return Err(ApiError::invalid("submit a choice or skip before stepping"))
            }
        };
        let session = self.clone();
        tokio::task::spawn_blocking(move || {
            let record = inner.agent.step(inspiration)?;
            inner.pending = None;
            write_manifest(&session.dir, &session.manifest(None))?;
            inner.refresh_suggestions(session.mode);
            Ok::<_, ApiError>(record)
        })
        .await
        .map_err(|e| ApiError::from(Error::Bridge(format!("step worker failed: {e}"))))?
    }
}

/// All sessions, persisted under `<data_dir>/sessions/<id>`.
pub struct SessionStore {
    root: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

fn open_agent(config: &RunConfig, dir: &Path, resume: bool) -> cas_core::Result<(Agent, Option<Models>)> {
    let models = load_models(config)?;
    let backends = build_backends(config, models.as_ref())?;
    let run_dir = RunDir::new(dir);
    let agent = if resume {
        Agent::resume(run_dir, backends)?
    } else {
        Agent::create(config.clone(), backends, run_dir)?
    };
    Ok((agent, models))
}

impl SessionStore {
    /// Open the store, reloading every persisted session.
    pub fn open(data_dir: &Path) -> cas_core::Result<Self> {
        let root = data_dir.join("sessions");
        fs::create_dir_all(&root)?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(&root)? {
            let dir = entry?.path();
            let manifest_path = dir.join("manifest.json");
            if !manifest_path.exists() {
                continue;
            }
            let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
            let config = RunConfig::from_toml(&fs::read_to_string(RunDir::new(&dir).config())?)?;
            let (agent, models) = open_agent(&config, &dir, true)?;
            let mut inner = SessionInner {
                agent,
                models,
                suggestions: Vec::new(),
                suggestion_errors: Vec::new(),
                pending: manifest.pending,
            };
            inner.refresh_suggestions(manifest.mode);
            sessions.insert(
                manifest.session_id.clone(),
                Arc::new(Session {
                    id: manifest.session_id,
                    mode: manifest.mode,
                    dir,
                    inner: Arc::new(Mutex::new(inner)),
                }),
            );
        }
        Ok(Self {
            root,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Create a session. Blocking: loads models and may contact bridges.
    pub fn create(&self, request: CreateSession) -> Result<Created, ApiError> {
        request.config.validate()?;
        let id = new_session_id();
        let dir = self.root.join(&id);
        fs::create_dir_all(&dir).map_err(Error::from)?;
        let opened = open_agent(&request.config, &dir, false);
        let (agent, models) = match opened {
            Ok(v) => v,
            Err(e) => {
                let _ = fs::remove_dir_all(&dir);
                return Err(e.into());
            }
        };
        let session = Session {
            id: id.clone(),
            mode: request.mode,
            dir,
            inner: Arc::new(Mutex::new(SessionInner {
                agent,
                models,
                suggestions: Vec::new(),
                suggestion_errors: Vec::new(),
                pending: None,
            })),
        };
        write_manifest(&session.dir, &session.manifest(None))?;
        session
            .inner
            .try_lock()
            .expect("fresh session is unlocked")
            .refresh_suggestions(session.mode);
        self.sessions
            .write()
            .expect("session map lock")
            .insert(id.clone(), Arc::new(session));
        Ok(Created { session_id: id })
    }
}
