//! Client side of the bridge protocol used to attach external models.
//!
//! Endpoints (all JSON bodies):
//!
//! | method | path            | request                                   | response                                   |
//! |--------|-----------------|-------------------------------------------|--------------------------------------------|
//! | GET    | `/v1/handshake` |                                           | [`Handshake`]                              |
//! | POST   | `/v1/score`     | `{"sequences": [[label,..],..]}`          | `{"nll": [..]}`                            |
//! | POST   | `/v1/sample`    | `{"context","n","temperature","max_length","seed"}` | `{"sequences": [..]}`            |
//! | POST   | `/v1/embed`     | `{"kind": "text"\|"image", "items": [..]}` | `{"vectors": [[..],..], "dimension": d}`   |
//! | POST   | `/v1/compose`   | compositor state + rendered prompts       | `{"thought","name","concepts_used","prompt"}` |
//! | POST   | `/v1/inspire`   | inspiration state + rendered prompts      | `{"analysis","reasoning","suggested_concepts"}` |
//! | POST   | `/v1/image`     | `{"prompt": ".."}`                        | `{"image_b64": ".."}`                      |
//!
//! Score and sample requests may carry an optional `"model"` field naming which
//! scorer an adapter should use (`coherence` or `context`). Image items in embed
//! requests are base64 encoded.

use std::sync::Arc;
use std::time::Duration;

use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agent::{Compositor, ImageGenerator};
use crate::embed::{Embedder, EmbeddingKind, EmbeddingSource, EmbeddingVector};
use crate::prompts::{CompositionState, InspirationMode, InspirationState};
use crate::sampler::InspirationClient;
use crate::scorer::{SamplingParams, SequenceScorer};
use crate::vocab::{ConceptId, Vocabulary};
use crate::{Error, Result};

pub const PROTOCOL_VERSION: &str = "1";

pub mod wire {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct Handshake {
        pub protocol_version: String,
        /// Text embedding dimension, when the adapter serves embeddings.
        #[serde(default)]
        pub text_dimension: Option<usize>,
        #[serde(default)]
        pub image_dimension: Option<usize>,
        /// Vocabulary hash of the served scorers, when it serves scoring.
        #[serde(default)]
        pub vocabulary_hash: Option<String>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ScoreRequest {
        pub sequences: Vec<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub model: Option<String>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ScoreResponse {
        pub nll: Vec<f64>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct SampleRequest {
        pub context: Vec<String>,
        pub n: usize,
        pub temperature: f64,
        pub max_length: usize,
        pub seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub model: Option<String>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct SampleResponse {
        pub sequences: Vec<Vec<String>>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct EmbedRequest {
        pub kind: EmbeddingKind,
        pub items: Vec<String>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct EmbedResponse {
        pub vectors: Vec<Vec<f64>>,
        pub dimension: usize,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ComposeRequest {
        #[serde(flatten)]
        pub state: CompositionState,
        pub system_prompt: String,
        pub user_prompt: String,
        /// Set on the repair round-trip: why the previous response was rejected.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub repair_feedback: Option<String>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ComposeResponse {
        pub thought: String,
        pub name: String,
        pub concepts_used: Vec<String>,
        pub prompt: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct InspireRequest {
        #[serde(flatten)]
        pub state: InspirationState,
        pub mode: InspirationMode,
        pub system_prompt: String,
        pub user_prompt: String,
        /// Suggestions rejected on earlier attempts of this request.
        #[serde(default)]
        pub rejected: Vec<String>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct InspireResponse {
        pub analysis: String,
        pub reasoning: String,
        pub suggested_concepts: Vec<String>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ImageRequest {
        pub prompt: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ImageResponse {
        pub image_b64: String,
    }
}

pub use wire::*;

pub fn encode_image(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_image(text: &str) -> Result<Vec<u8>> {
    base64::engine::general_purpose::STANDARD
        .decode(text)
        .map_err(|e| Error::Bridge(format!("invalid base64 image: {e}")))
}

/// Blocking HTTP client for one bridge adapter.
#[derive(Clone)]
pub struct BridgeClient {
    base_url: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("base_url", &self.base_url)
            .finish()
    }
}

impl BridgeClient {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            agent: ureq::Agent::new_with_config(config),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// One attempt plus one retry on transport errors. HTTP error statuses and schema
    /// violations are not retried.
    fn call<T: DeserializeOwned>(
        &self,
        path: &str,
        send: impl Fn(&ureq::Agent, &str) -> std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T> {
        let url = format!("{}{path}", self.base_url);
        let mut last = None;
        for _ in 0..2 {
            match send(&self.agent, &url) {
                Ok(mut resp) => {
                    return resp.body_mut().read_json::<T>().map_err(|e| {
                        Error::Bridge(format!("{path}: response violates schema: {e}"))
                    })
                }
                Err(ureq::Error::StatusCode(code)) => {
                    return Err(Error::Bridge(format!("{path}: HTTP status {code}")))
                }
                Err(e) => last = Some(e),
            }
        }
        Err(Error::Bridge(format!(
            "{path}: {}",
            last.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        self.call(path, |agent, url| agent.post(url).send_json(body))
    }

    pub fn handshake(&self) -> Result<Handshake> {
        let hs: Handshake = self.call("/v1/handshake", |agent, url| agent.get(url).call())?;
        if hs.protocol_version != PROTOCOL_VERSION {
            return Err(Error::Bridge(format!(
                "adapter speaks protocol {}, engine expects {PROTOCOL_VERSION}",
                hs.protocol_version
            )));
        }
        Ok(hs)
    }
}

/// A [`SequenceScorer`] served by a bridge adapter.
///
/// Next-concept distributions are recovered from sequence scores:
/// P(c | ctx) = exp(NLL(ctx) − NLL(ctx ++ [c])).
pub struct BridgeScorer {
    client: BridgeClient,
    model: Option<String>,
    vocabulary: Arc<Vocabulary>,
    vocabulary_hash: String,
}

impl BridgeScorer {
    /// Connect and verify the adapter serves a scorer over the same vocabulary.
    pub fn connect(
        client: BridgeClient,
        model: Option<String>,
        vocabulary: Arc<Vocabulary>,
    ) -> Result<Self> {
        let hs = client.handshake()?;
        let expected = vocabulary.hash();
        match hs.vocabulary_hash {
            Some(h) if h == expected => {}
            Some(h) => {
                return Err(Error::Bridge(format!(
                    "adapter vocabulary hash {h} does not match engine vocabulary {expected}"
                )))
            }
            None => return Err(Error::Bridge("adapter does not serve a scorer".into())),
        }
        Ok(Self {
            client,
            model,
            vocabulary,
            vocabulary_hash: expected,
        })
    }

    fn labels(&self, ids: &[ConceptId]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.vocabulary
                    .label(id)
                    .map(str::to_owned)
                    .ok_or_else(|| Error::Data(format!("concept id {id} outside the vocabulary")))
            })
            .collect()
    }

    fn score(&self, sequences: Vec<Vec<String>>) -> Result<Vec<f64>> {
        let expected = sequences.len();
        let resp: ScoreResponse = self.client.post(
            "/v1/score",
            &ScoreRequest {
                sequences,
                model: self.model.clone(),
            },
        )?;
        if resp.nll.len() != expected {
            return Err(Error::Bridge(format!(
                "/v1/score returned {} values for {expected} sequences",
                resp.nll.len()
            )));
        }
        Ok(resp.nll)
    }
}

impl SequenceScorer for BridgeScorer {
    fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    fn vocabulary_hash(&self) -> &str {
        &self.vocabulary_hash
    }

    fn next_distribution(&self, context: &[ConceptId]) -> Result<Vec<f64>> {
        let ctx = self.labels(context)?;
        let mut batch: Vec<Vec<String>> = self
            .vocabulary
            .labels()
            .iter()
            .map(|l| {
                let mut s = ctx.clone();
                s.push(l.clone());
                s
            })
            .collect();
        if !ctx.is_empty() {
            batch.push(ctx);
        }
        let mut nll = self.score(batch)?;
        let base = if context.is_empty() { 0.0 } else { nll.pop().unwrap_or(0.0) };
        let mut dist: Vec<f64> = nll.into_iter().map(|x| (base - x).exp()).collect();
        let total: f64 = dist.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Bridge("adapter returned a degenerate distribution".into()));
        }
        for p in &mut dist {
            *p /= total;
        }
        Ok(dist)
    }

    fn nll(&self, sequence: &[ConceptId]) -> Result<f64> {
        if sequence.is_empty() {
            return Err(Error::Argument("cannot score an empty sequence".into()));
        }
        Ok(self.score(vec![self.labels(sequence)?])?[0])
    }

    fn nll_batch(&self, sequences: &[Vec<ConceptId>]) -> Result<Vec<f64>> {
        let batch = sequences
            .iter()
            .map(|s| self.labels(s))
            .collect::<Result<Vec<_>>>()?;
        self.score(batch)
    }

    fn sample_continuations(
        &self,
        context: &[ConceptId],
        params: &SamplingParams,
    ) -> Result<Vec<Vec<ConceptId>>> {
        let resp: SampleResponse = self.client.post(
            "/v1/sample",
            &SampleRequest {
                context: self.labels(context)?,
                n: params.count,
                temperature: params.temperature,
                max_length: params.max_length,
                seed: params.seed,
                model: self.model.clone(),
            },
        )?;
        resp.sequences
            .iter()
            .map(|s| {
                self.vocabulary
                    .resolve(s)
                    .map_err(|e| Error::Bridge(format!("/v1/sample: {e}")))
            })
            .collect()
    }
}

/// Embeddings from a bridge adapter; dimensions are fixed at handshake.
pub struct BridgeEmbedder {
    client: BridgeClient,
    text_dimension: usize,
    image_dimension: usize,
}

impl BridgeEmbedder {
    pub fn connect(client: BridgeClient) -> Result<Self> {
        let hs = client.handshake()?;
        match (hs.text_dimension, hs.image_dimension) {
            (Some(text_dimension), Some(image_dimension)) => Ok(Self {
                client,
                text_dimension,
                image_dimension,
            }),
            _ => Err(Error::Bridge("adapter does not serve embeddings".into())),
        }
    }

    fn embed(&self, kind: EmbeddingKind, item: String) -> Result<EmbeddingVector> {
        let expected = self.dimension(kind);
        let resp: EmbedResponse = self.client.post(
            "/v1/embed",
            &EmbedRequest {
                kind,
                items: vec![item],
            },
        )?;
        if resp.dimension != expected {
            return Err(Error::Embedding(format!(
                "adapter returned dimension {}, handshake declared {expected}",
                resp.dimension
            )));
        }
        let vector = resp
            .vectors
            .into_iter()
            .next()
            .ok_or_else(|| Error::Bridge("/v1/embed returned no vectors".into()))?;
        if vector.len() != expected {
            return Err(Error::Embedding(format!(
                "vector has dimension {}, expected {expected}",
                vector.len()
            )));
        }
        EmbeddingVector::new(vector, kind, EmbeddingSource::Bridge)
    }
}

impl Embedder for BridgeEmbedder {
    fn identity(&self) -> String {
        format!(
            "bridge:{}/text={}/image={}",
            self.client.base_url(),
            self.text_dimension,
            self.image_dimension
        )
    }

    fn dimension(&self, kind: EmbeddingKind) -> usize {
        match kind {
            EmbeddingKind::Text => self.text_dimension,
            EmbeddingKind::Image => self.image_dimension,
        }
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::Embedding("cannot embed empty text".into()));
        }
        self.embed(EmbeddingKind::Text, text.to_owned())
    }

    fn embed_image(&self, bytes: &[u8]) -> Result<EmbeddingVector> {
        if bytes.is_empty() {
            return Err(Error::Embedding("cannot embed empty image".into()));
        }
        self.embed(EmbeddingKind::Image, encode_image(bytes))
    }
}

impl Compositor for BridgeClient {
    fn compose(&self, request: &ComposeRequest) -> Result<ComposeResponse> {
        self.post("/v1/compose", request)
    }
}

impl InspirationClient for BridgeClient {
    fn inspire(&self, request: &InspireRequest) -> Result<InspireResponse> {
        self.post("/v1/inspire", request)
    }
}

impl ImageGenerator for BridgeClient {
    fn generate(&self, prompt: &str) -> Result<Vec<u8>> {
        let resp: ImageResponse = self.post(
            "/v1/image",
            &ImageRequest {
                prompt: prompt.to_owned(),
            },
        )?;
        decode_image(&resp.image_b64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_request_flattens_state() {
        let req = ComposeRequest {
            state: CompositionState {
                generation: 2,
                concept_pool: vec!["moon".into()],
                original_concepts: vec!["moon".into()],
                expired_concepts: vec![],
                newly_added: vec![],
                previous: None,
                preserve_original: false,
            },
            system_prompt: "s".into(),
            user_prompt: "u".into(),
            repair_feedback: None,
        };
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v["generation"], 2);
        assert_eq!(v["concept_pool"][0], "moon");
        assert!(v.get("repair_feedback").is_none());
        let back: ComposeRequest = serde_json::from_value(v).unwrap();
        assert_eq!(back, req);
    }

    #[test]
    fn inspire_response_keys() {
        let r: InspireResponse = serde_json::from_str(
            r#"{"analysis":"a","reasoning":"r","suggested_concepts":["capsule"]}"#,
        )
        .unwrap();
        assert_eq!(r.suggested_concepts, ["capsule"]);
        assert!(serde_json::from_str::<InspireResponse>(r#"{"analysis":"a"}"#).is_err());
    }

    #[test]
    fn unreachable_adapter_is_bridge_error() {
        let client = BridgeClient::new("http://127.0.0.1:9", Duration::from_millis(300));
        assert!(matches!(client.handshake(), Err(Error::Bridge(_))));
    }

    #[test]
    fn image_base64_round_trip() {
        let bytes = vec![0u8, 1, 2, 250, 255];
        assert_eq!(decode_image(&encode_image(&bytes)).unwrap(), bytes);
        assert!(decode_image("***").is_err());
    }
}
