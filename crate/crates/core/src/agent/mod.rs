//! The open-ended generation loop: inspiration, composition, image generation,
//! novelty scoring and pool filtering.

mod compose;
mod config;
mod image;
mod novelty;
mod pool;
mod runlog;

use std::collections::HashSet;
use std::fs;
use std::sync::Arc;

pub use compose::{compose_prompt, validate_composition, Compositor, StubCompositor};
pub use config::{
    build_backends, build_inspirer, load_models, BackendConfig, BackendKind, DataConfig, Models,
    RunConfig, SamplerConfig, SamplerKind, BRIDGE_COHERENCE_MODEL, BRIDGE_CONTEXT_MODEL,
    BRIDGE_URL_ENV, DEFAULT_PATIENCE,
};
pub use image::{ImageGenerator, ImageStore, StubImageGenerator};
pub use novelty::{compute_novelty, Novelty, NoveltyHistory};
pub use pool::ConceptPool;
pub use runlog::{read_run_log, replay_novelty, GenerationRecord, RunDir, RunLogWriter};

use crate::embed::{CachedEmbedder, Embedder, EmbeddingCache, EmbeddingKind, EmbeddingVector};
use crate::prompts::{
    CompositionState, InspirationMode, InspirationState, NoveltyTrend, Performance,
    PreviousGeneration,
};
use crate::sampler::{
    cas_sample, llm_sample, random_sample, CasConfig, Conditioning, InspirationClient,
    InspirationProposal,
};
use crate::scorer::SequenceScorer;
use crate::util::derive_seed;
use crate::vocab::{normalize_token, ConceptId, Vocabulary};
use crate::{Error, Result};

/// What an inspiration backend sees each generation.
pub struct InspirationInput<'a> {
    pub generation: u32,
    pub pool: &'a ConceptPool,
    pub state: &'a InspirationState,
    pub seed: u64,
}

/// Source of one new concept per generation.
pub trait Inspirer: Send + Sync {
    fn propose(&self, input: &InspirationInput<'_>) -> Result<InspirationProposal>;
}

/// Vocabulary ids of the labels that are in the vocabulary.
fn known_ids<'a>(vocabulary: &Vocabulary, labels: impl IntoIterator<Item = &'a String>) -> Vec<ConceptId> {
    labels.into_iter().filter_map(|l| vocabulary.id(l)).collect()
}

pub struct CasInspirer {
    vocabulary: Arc<Vocabulary>,
    coherence: Arc<dyn SequenceScorer>,
    context: Arc<dyn SequenceScorer>,
    config: CasConfig,
}

impl CasInspirer {
    pub fn new(
        vocabulary: Arc<Vocabulary>,
        coherence: Arc<dyn SequenceScorer>,
        context: Arc<dyn SequenceScorer>,
        config: CasConfig,
    ) -> Self {
        Self {
            vocabulary,
            coherence,
            context,
            config,
        }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn coherence(&self) -> &dyn SequenceScorer {
        self.coherence.as_ref()
    }

    pub fn context(&self) -> &dyn SequenceScorer {
        self.context.as_ref()
    }

    pub fn config(&self) -> &CasConfig {
        &self.config
    }

    /// Conditioning ids for the pool under the configured mode.
    pub fn conditioning(&self, pool: &ConceptPool) -> Vec<ConceptId> {
        match self.config.conditioning {
            Conditioning::Seed => known_ids(&self.vocabulary, pool.original()),
            Conditioning::Pool => known_ids(&self.vocabulary, pool.active()),
        }
    }
}

impl Inspirer for CasInspirer {
    fn propose(&self, input: &InspirationInput<'_>) -> Result<InspirationProposal> {
        let conditioning = self.conditioning(input.pool);
        let active: HashSet<ConceptId> = known_ids(&self.vocabulary, input.pool.active()).into_iter().collect();
        let expired: HashSet<ConceptId> = known_ids(&self.vocabulary, input.pool.expired()).into_iter().collect();
        let cfg = CasConfig {
            seed: input.seed,
            ..self.config
        };
        cas_sample(
            &conditioning,
            self.coherence.as_ref(),
            self.context.as_ref(),
            &cfg,
            &active,
            &expired,
            &self.vocabulary,
        )
    }
}

pub struct RandomInspirer {
    vocabulary: Arc<Vocabulary>,
}

impl RandomInspirer {
    pub fn new(vocabulary: Arc<Vocabulary>) -> Self {
        Self { vocabulary }
    }
}

impl Inspirer for RandomInspirer {
    fn propose(&self, input: &InspirationInput<'_>) -> Result<InspirationProposal> {
        let active = known_ids(&self.vocabulary, input.pool.active()).into_iter().collect();
        let expired = known_ids(&self.vocabulary, input.pool.expired()).into_iter().collect();
        random_sample(&self.vocabulary, &active, &expired, input.seed)
    }
}

pub struct LlmInspirer {
    client: Arc<dyn InspirationClient>,
    vocabulary: Arc<Vocabulary>,
    mode: InspirationMode,
    retries: usize,
}

impl LlmInspirer {
    pub fn new(
        client: Arc<dyn InspirationClient>,
        vocabulary: Arc<Vocabulary>,
        mode: InspirationMode,
        retries: usize,
    ) -> Self {
        Self {
            client,
            vocabulary,
            mode,
            retries,
        }
    }
}

impl Inspirer for LlmInspirer {
    fn propose(&self, input: &InspirationInput<'_>) -> Result<InspirationProposal> {
        llm_sample(input.state, self.mode, self.client.as_ref(), &self.vocabulary, self.retries)
    }
}

/// Pluggable backends for one run.
pub struct Backends {
    /// `None` when concepts are supplied by the caller (human sessions).
    pub inspirer: Option<Box<dyn Inspirer>>,
    pub compositor: Box<dyn Compositor>,
    pub image: Box<dyn ImageGenerator>,
    pub text_embedder: Arc<dyn Embedder>,
    pub image_embedder: Arc<dyn Embedder>,
}

impl Backends {
    /// Fully offline backends around an optional inspirer.
    pub fn stub(inspirer: Option<Box<dyn Inspirer>>, seed: u64) -> Self {
        let embedder: Arc<dyn Embedder> = Arc::new(crate::embed::HashEmbedder::default());
        Self {
            inspirer,
            compositor: Box::new(StubCompositor),
            image: Box::new(StubImageGenerator::new(seed)),
            text_embedder: embedder.clone(),
            image_embedder: embedder,
        }
    }

    fn cache_identity(&self) -> String {
        format!(
            "text={};image={}",
            self.text_embedder.identity(),
            self.image_embedder.identity()
        )
    }
}

/// Where this generation's new concept comes from.
#[derive(Debug, Clone)]
pub enum Inspiration {
    /// Ask the configured inspirer.
    Backend,
    /// Use a concept chosen by the caller.
    Provided(InspirationProposal),
    /// Add nothing this generation.
    Skip,
}

struct Persistence {
    dir: RunDir,
    writer: RunLogWriter,
    images: ImageStore,
}

/// A stepwise agent run.
pub struct Agent {
    config: RunConfig,
    backends: Backends,
    pool: ConceptPool,
    history: NoveltyHistory,
    records: Vec<GenerationRecord>,
    cache: EmbeddingCache,
    persistence: Option<Persistence>,
}

impl Agent {
    /// An in-memory run.
    pub fn new(config: RunConfig, backends: Backends) -> Result<Self> {
        config.validate()?;
        let pool = ConceptPool::new(&config.seed_concepts, config.preserve_original)?;
        let cache = EmbeddingCache::new(backends.cache_identity());
        Ok(Self {
            config,
            backends,
            pool,
            history: NoveltyHistory::default(),
            records: Vec::new(),
            cache,
            persistence: None,
        })
    }

    /// Start a persisted run in `dir`, which must not already hold a run log.
    pub fn create(config: RunConfig, backends: Backends, dir: RunDir) -> Result<Self> {
        fs::create_dir_all(dir.root())?;
        if dir.log().exists() {
            return Err(Error::Config(format!(
                "{} already holds a run; resume it instead",
                dir.root().display()
            )));
        }
        let mut agent = Self::new(config, backends)?;
        agent.config.save(&dir.config())?;
        agent.cache.save(&dir.embeddings())?;
        agent.persistence = Some(Persistence {
            writer: RunLogWriter::open(&dir.log())?,
            images: ImageStore::new(dir.images())?,
            dir,
        });
        Ok(agent)
    }

    /// Reopen a persisted run, rebuilding pool and history from its log.
    pub fn resume(dir: RunDir, backends: Backends) -> Result<Self> {
        let config = RunConfig::from_toml(&fs::read_to_string(dir.config())?)?;
        let records = read_run_log(&dir.log())?;
        truncate_partial_tail(&dir)?;
        let cache = EmbeddingCache::load(&dir.embeddings(), &backends.cache_identity())?;
        let mut agent = Self::new(config, backends)?;
        agent.cache = cache;
        for record in &records {
            agent.replay_record(record)?;
        }
        agent.records = records;
        agent.persistence = Some(Persistence {
            writer: RunLogWriter::open(&dir.log())?,
            images: ImageStore::new(dir.images())?,
            dir,
        });
        Ok(agent)
    }

    fn replay_record(&mut self, record: &GenerationRecord) -> Result<()> {
        for c in &record.new_concepts {
            self.pool.add(c)?;
        }
        if record.is_failed() {
            return Ok(());
        }
        let logged = record
            .novelty()
            .ok_or_else(|| Error::Data(format!("generation {} lacks novelty", record.generation)))?;
        let text = self.cached(EmbeddingKind::Text, &record.prompt)?;
        let image_ref = record.image_ref.as_deref().unwrap_or_default();
        let image = self
            .cache
            .get(&format!("image:{image_ref}"))
            .ok_or_else(|| Error::Data(format!("image embedding {image_ref} missing from cache")))?;
        let novelty = compute_novelty(&text, &image, &self.history)?;
        if novelty != logged {
            return Err(Error::Data(format!(
                "generation {}: replayed novelty {novelty:?} differs from log {logged:?}",
                record.generation
            )));
        }
        self.history.push(text, image);
        let removed = self
            .pool
            .filter(&record.concepts_used, novelty.combined, self.config.patience);
        if removed != record.removed_concepts {
            return Err(Error::Data(format!(
                "generation {}: replayed pool filtering removed {removed:?}, log says {:?}",
                record.generation, record.removed_concepts
            )));
        }
        Ok(())
    }

    fn cached(&self, kind: EmbeddingKind, text: &str) -> Result<EmbeddingVector> {
        let key = crate::embed::content_key(kind, text.as_bytes());
        self.cache
            .get(&key)
            .ok_or_else(|| Error::Data(format!("embedding {key} missing from cache")))
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn pool(&self) -> &ConceptPool {
        &self.pool
    }

    pub fn records(&self) -> &[GenerationRecord] {
        &self.records
    }

    pub fn embedding_cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn run_dir(&self) -> Option<&RunDir> {
        self.persistence.as_ref().map(|p| &p.dir)
    }

    pub fn is_finished(&self) -> bool {
        self.records.len() >= self.config.generations as usize
    }

    /// Number of the next generation (the first is 1).
    pub fn next_generation(&self) -> u32 {
        self.records.len() as u32 + 1
    }

    /// Root seed for the stochastic parts of generation `t`.
    pub fn generation_seed(&self, generation: u32) -> u64 {
        derive_seed(self.config.seed, generation as u64)
    }

    fn successful(&self) -> impl DoubleEndedIterator<Item = &GenerationRecord> {
        self.records.iter().filter(|r| !r.is_failed())
    }

    /// Inspiration input for the next generation.
    pub fn inspiration_state(&self) -> InspirationState {
        let last = self.successful().next_back();
        let combined: Vec<f64> = self.successful().filter_map(|r| r.novelty_combined).collect();
        InspirationState {
            generation: self.next_generation(),
            concept_pool: self.pool.active().iter().cloned().collect(),
            original_concepts: self.pool.original().iter().cloned().collect(),
            expired_concepts: self.pool.expired().iter().cloned().collect(),
            last_artwork: last.map(|r| r.prompt.clone()),
            last_concepts_used: last.map(|r| r.concepts_used.clone()).unwrap_or_default(),
            performance: last
                .and_then(|r| r.novelty())
                .map(|n| Performance::from_novelty(n.text, n.image, n.combined)),
            novelty_trend: NoveltyTrend::from_history(&combined),
        }
    }

    fn composition_state(&self, generation: u32, newly_added: Vec<String>) -> CompositionState {
        let previous = self.successful().next_back().and_then(|r| {
            r.novelty().map(|n| PreviousGeneration {
                concepts_used: r.concepts_used.clone(),
                performance: Performance::from_novelty(n.text, n.image, n.combined),
            })
        });
        CompositionState {
            generation,
            concept_pool: self.pool.active().iter().cloned().collect(),
            original_concepts: self.pool.original().iter().cloned().collect(),
            expired_concepts: self.pool.expired().iter().cloned().collect(),
            newly_added,
            previous,
            preserve_original: self.pool.preserve_original(),
        }
    }

    /// Check that a caller-supplied concept may join the pool.
    pub fn check_choice(&self, concept: &str) -> Result<String> {
        let label = normalize_token(concept);
        if label.is_empty() {
            return Err(Error::Argument("concept is empty".into()));
        }
        if self.pool.is_active(&label) {
            return Err(Error::Argument(format!("{label:?} is already in the pool")));
        }
        if self.pool.is_expired(&label) {
            return Err(Error::Argument(format!("{label:?} has expired")));
        }
        Ok(label)
    }

    /// Run one generation and persist it.
    ///
    /// Backend failures produce a failed record; only invalid caller input and
    /// persistence failures return an error.
    pub fn step(&mut self, inspiration: Inspiration) -> Result<GenerationRecord> {
        if self.is_finished() {
            return Err(Error::Argument(format!(
                "run already has {} generations",
                self.config.generations
            )));
        }
        let generation = self.next_generation();
        let pool_before: Vec<String> = self.pool.active().iter().cloned().collect();
        let proposal = match inspiration {
            Inspiration::Provided(p) => {
                let label = self.check_choice(&p.concept)?;
                Some(InspirationProposal { concept: label, ..p })
            }
            Inspiration::Skip => None,
            Inspiration::Backend => match &self.backends.inspirer {
                None => {
                    return Err(Error::Argument(
                        "no inspiration backend; provide a concept or skip".into(),
                    ))
                }
                Some(inspirer) => {
                    let state = self.inspiration_state();
                    let input = InspirationInput {
                        generation,
                        pool: &self.pool,
                        state: &state,
                        seed: self.generation_seed(generation),
                    };
                    match inspirer.propose(&input) {
                        Ok(p) if self.pool.is_eligible(&p.concept) => Some(p),
                        Ok(p) => {
                            log::warn!("generation {generation}: ineligible proposal {:?} ignored", p.concept);
                            None
                        }
                        Err(e) => {
                            log::warn!("generation {generation}: inspiration failed: {e}");
                            None
                        }
                    }
                }
            },
        };
        let mut record = GenerationRecord {
            generation,
            pool_before,
            new_concepts: Vec::new(),
            concepts_used: Vec::new(),
            prompt: String::new(),
            name: String::new(),
            thought: String::new(),
            image_ref: None,
            novelty_text: None,
            novelty_image: None,
            novelty_combined: None,
            removed_concepts: Vec::new(),
            provenance: None,
            error: None,
        };
        if let Some(p) = proposal {
            self.pool.add(&p.concept)?;
            record.new_concepts.push(p.concept);
            record.provenance = Some(p.provenance);
        }
        if let Err(e) = self.produce(&mut record) {
            record.error = Some(e.to_string());
        }
        if let Some(persist) = &mut self.persistence {
            persist.writer.append(&record)?;
        }
        self.records.push(record.clone());
        Ok(record)
    }

    /// Composition, image, novelty and filtering for a record whose inspiration is done.
    fn produce(&mut self, record: &mut GenerationRecord) -> Result<()> {
        let state = self.composition_state(record.generation, record.new_concepts.clone());
        let composed = compose_prompt(self.backends.compositor.as_ref(), &state)?;
        record.concepts_used = composed.concepts_used;
        record.prompt = composed.prompt;
        record.name = composed.name;
        record.thought = composed.thought;

        let bytes = self.backends.image.generate(&record.prompt)?;
        if bytes.is_empty() {
            return Err(Error::Bridge("image backend returned no bytes".into()));
        }
        let image_ref = match &self.persistence {
            Some(p) => p.images.put(&bytes)?,
            None => crate::util::sha256_hex(&bytes),
        };
        record.image_ref = Some(image_ref);

        let (_, text) = CachedEmbedder::new(self.backends.text_embedder.as_ref(), &self.cache).text(&record.prompt)?;
        let (_, image) = CachedEmbedder::new(self.backends.image_embedder.as_ref(), &self.cache).image(&bytes)?;
        let novelty = compute_novelty(&text, &image, &self.history)?;
        if let Some(p) = &self.persistence {
            self.cache.save(&p.dir.embeddings())?;
        }
        self.history.push(text, image);
        record.novelty_text = Some(novelty.text);
        record.novelty_image = Some(novelty.image);
        record.novelty_combined = Some(novelty.combined);
        record.removed_concepts =
            self.pool
                .filter(&record.concepts_used, novelty.combined, self.config.patience);
        Ok(())
    }

    /// Step with the configured inspirer until the run is finished.
    pub fn run(&mut self) -> Result<&[GenerationRecord]> {
        while !self.is_finished() {
            self.step(Inspiration::Backend)?;
        }
        Ok(&self.records)
    }
}

/// Drop an interrupted final line so further appends start on a fresh line.
fn truncate_partial_tail(dir: &RunDir) -> Result<()> {
    let bytes = fs::read(dir.log())?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        let file = fs::OpenOptions::new().write(true).open(dir.log())?;
        file.set_len(keep as u64)?;
        file.sync_all()?;
    }
    Ok(())
}

/// Run a config to completion with the given backends, persisting to `dir` when set.
pub fn run(config: RunConfig, backends: Backends, dir: Option<RunDir>) -> Result<Vec<GenerationRecord>> {
    let mut agent = match dir {
        Some(dir) => Agent::create(config, backends, dir)?,
        None => Agent::new(config, backends)?,
    };
    agent.run()?;
    Ok(agent.records)
}

/// Fraction of generations whose new concept came from `provenance`, over
/// generations that added a concept.
pub fn adoption_rate(records: &[GenerationRecord], provenance: crate::sampler::Provenance) -> Option<f64> {
    let with_new: Vec<_> = records.iter().filter_map(|r| r.provenance).collect();
    if with_new.is_empty() {
        return None;
    }
    Some(with_new.iter().filter(|&&p| p == provenance).count() as f64 / with_new.len() as f64)
}
