//! In-process bridge adapter serving the `/v1/*` protocol from reference backends.
//!
//! Used by tests and offline demos; real adapters implement the same endpoints.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};

use cas_core::agent::{Compositor, ImageGenerator, StubCompositor, StubImageGenerator};
use cas_core::bridge::{
    encode_image, decode_image, ComposeRequest, ComposeResponse, EmbedRequest, EmbedResponse, Handshake,
    ImageRequest, ImageResponse, InspireRequest, InspireResponse, SampleRequest, SampleResponse,
    ScoreRequest, ScoreResponse, PROTOCOL_VERSION,
};
use cas_core::embed::{Embedder, EmbeddingKind, HashEmbedder};
use cas_core::prompts::InspirationMode;
use cas_core::scorer::{SamplingParams, SequenceScorer};
use cas_core::vocab::{normalize_token, Vocabulary};
use cas_core::Error;

use crate::ApiError;

/// Reference backends behind the bridge protocol.
#[derive(Clone)]
pub struct StubAdapter {
    vocabulary: Option<Arc<Vocabulary>>,
    scorers: BTreeMap<String, Arc<dyn SequenceScorer>>,
    default_model: Option<String>,
    embedder: Arc<dyn Embedder>,
    image: Arc<dyn ImageGenerator>,
}

impl std::fmt::Debug for StubAdapter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StubAdapter")
            .field("models", &self.scorers.keys().collect::<Vec<_>>())
            .field("embedder", &self.embedder.identity())
            .finish()
    }
}

impl Default for StubAdapter {
    fn default() -> Self {
        Self {
            vocabulary: None,
            scorers: BTreeMap::new(),
            default_model: None,
            embedder: Arc::new(HashEmbedder::default()),
            image: Arc::new(StubImageGenerator::new(0)),
        }
    }
}

impl StubAdapter {
    /// Adapter without scorers: embeddings, composition, inspiration and images only.
    pub fn new() -> Self {
        Self::default()
    }

    /// Serve `scorer` under `name`. The first scorer added becomes the default model.
    pub fn with_scorer(mut self, name: &str, vocabulary: Arc<Vocabulary>, scorer: Arc<dyn SequenceScorer>) -> Self {
        assert_eq!(
            scorer.vocabulary_hash(),
            vocabulary.hash(),
            "scorer and vocabulary disagree"
        );
        if let Some(v) = &self.vocabulary {
            assert_eq!(v.hash(), vocabulary.hash(), "all scorers must share a vocabulary");
        }
        self.vocabulary = Some(vocabulary);
        self.default_model.get_or_insert_with(|| name.to_owned());
        self.scorers.insert(name.to_owned(), scorer);
        self
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = embedder;
        self
    }

    fn scorer(&self, model: Option<&str>) -> Result<(&Vocabulary, &dyn SequenceScorer), ApiError> {
        let vocabulary = self
            .vocabulary
            .as_deref()
            .ok_or_else(|| ApiError::not_found("this adapter serves no scorer"))?;
        let name = model.or(self.default_model.as_deref()).unwrap_or_default();
        let scorer = self
            .scorers
            .get(name)
            .ok_or_else(|| ApiError::not_found(format!("unknown model {name:?}")))?;
        Ok((vocabulary, scorer.as_ref()))
    }

    pub fn handshake(&self) -> Handshake {
        Handshake {
            protocol_version: PROTOCOL_VERSION.into(),
            text_dimension: Some(self.embedder.dimension(EmbeddingKind::Text)),
            image_dimension: Some(self.embedder.dimension(EmbeddingKind::Image)),
            vocabulary_hash: self.vocabulary.as_ref().map(|v| v.hash()),
        }
    }

    pub fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, ApiError> {
        let (vocabulary, scorer) = self.scorer(req.model.as_deref())?;
        let sequences = req
            .sequences
            .iter()
            .map(|s| vocabulary.resolve(s))
            .collect::<cas_core::Result<Vec<_>>>()?;
        Ok(ScoreResponse {
            nll: scorer.nll_batch(&sequences)?,
        })
    }

    pub fn sample(&self, req: &SampleRequest) -> Result<SampleResponse, ApiError> {
        let (vocabulary, scorer) = self.scorer(req.model.as_deref())?;
        let context = vocabulary.resolve(&req.context)?;
        let sequences = scorer.sample_continuations(
            &context,
            &SamplingParams {
                count: req.n,
                temperature: req.temperature,
                max_length: req.max_length,
                seed: req.seed,
            },
        )?;
        Ok(SampleResponse {
            sequences: sequences.iter().map(|s| vocabulary.labels_of(s)).collect(),
        })
    }

    pub fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, ApiError> {
        let vectors = req
            .items
            .iter()
            .map(|item| {
                let v = match req.kind {
                    EmbeddingKind::Text => self.embedder.embed_text(item)?,
                    EmbeddingKind::Image => self.embedder.embed_image(&decode_image(item)?)?,
                };
                Ok(v.values().to_vec())
            })
            .collect::<cas_core::Result<Vec<_>>>()?;
        Ok(EmbedResponse {
            vectors,
            dimension: self.embedder.dimension(req.kind),
        })
    }

    pub fn compose(&self, req: &ComposeRequest) -> Result<ComposeResponse, ApiError> {
        Ok(StubCompositor.compose(req)?)
    }

    /// Suggest up to three eligible concepts, rotating through the candidates by
    /// generation. Free mode without a vocabulary invents labels.
    pub fn inspire(&self, req: &InspireRequest) -> Result<InspireResponse, ApiError> {
        let taken = |l: &str| {
            req.state.concept_pool.iter().any(|c| c == l)
                || req.state.expired_concepts.iter().any(|c| c == l)
                || req.rejected.iter().any(|c| normalize_token(c) == l)
        };
        let suggestions: Vec<String> = match (&self.vocabulary, req.mode) {
            (Some(v), _) => {
                let eligible: Vec<&String> = v.labels().iter().filter(|l| !taken(l)).collect();
                if eligible.is_empty() {
                    Vec::new()
                } else {
                    let start = req.state.generation as usize % eligible.len();
                    (0..eligible.len().min(3))
                        .map(|k| eligible[(start + k) % eligible.len()].clone())
                        .collect()
                }
            }
            (None, InspirationMode::Free) => (0..3)
                .map(|k| format!("idea_{}_{k}", req.state.generation))
                .filter(|l| !taken(l))
                .collect(),
            (None, InspirationMode::Constrained) => {
                return Err(ApiError::not_found("constrained inspiration needs a vocabulary"))
            }
        };
        Ok(InspireResponse {
            analysis: format!("Pool of {} concepts.", req.state.concept_pool.len()),
            reasoning: "Deterministic rotation over eligible concepts.".into(),
            suggested_concepts: suggestions,
        })
    }

    pub fn image(&self, req: &ImageRequest) -> Result<ImageResponse, ApiError> {
        Ok(ImageResponse {
            image_b64: encode_image(&self.image.generate(&req.prompt)?),
        })
    }
}

type Shared = State<Arc<StubAdapter>>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<Json<T>, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::from(Error::Bridge(format!("worker failed: {e}"))))?
        .map(Json)
}

/// Router serving the bridge endpoints under `/v1`.
pub fn adapter_router(adapter: StubAdapter) -> Router {
    Router::new()
        .route("/v1/handshake", get(|State(a): Shared| async move { Json(a.handshake()) }))
        .route(
            "/v1/score",
            post(|State(a): Shared, Json(req): Json<ScoreRequest>| blocking(move || a.score(&req))),
        )
        .route(
            "/v1/sample",
            post(|State(a): Shared, Json(req): Json<SampleRequest>| blocking(move || a.sample(&req))),
        )
        .route(
            "/v1/embed",
            post(|State(a): Shared, Json(req): Json<EmbedRequest>| blocking(move || a.embed(&req))),
        )
        .route(
            "/v1/compose",
            post(|State(a): Shared, Json(req): Json<ComposeRequest>| blocking(move || a.compose(&req))),
        )
        .route(
            "/v1/inspire",
            post(|State(a): Shared, Json(req): Json<InspireRequest>| blocking(move || a.inspire(&req))),
        )
        .route(
            "/v1/image",
            post(|State(a): Shared, Json(req): Json<ImageRequest>| blocking(move || a.image(&req))),
        )
        .with_state(Arc::new(adapter))
}
