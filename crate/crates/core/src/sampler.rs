//! Inspiration strategies: the cultural alien sampler (CAS) and its baselines.
//!
//! CAS samples `N` continuations of the seed concepts from the coherence model,
//! ranks every candidate under both scorers (rank 1 = lowest NLL) and scores it as
//!
//! ```text
//! S(s) = (1 − β)·(N − R_coherence(s)) − β·(N − R_context(s))
//! ```
//!
//! so high β favours sequences that are coherent yet unlikely under the cultural
//! context model. The first eligible new concept of the best candidate is proposed.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bridge::{InspireRequest, InspireResponse};
use crate::datasets::ConceptSequence;
use crate::prompts::{inspiration_system_prompt, inspiration_user_prompt, InspirationMode, InspirationState};
use crate::scorer::{SamplingParams, SequenceScorer};
use crate::util::rng;
use crate::vocab::{normalize_token, ConceptId, Vocabulary};
use crate::{Error, Result};

pub const DEFAULT_CANDIDATES: usize = 256;
pub const DEFAULT_BETA: f64 = 0.85;
pub const DEFAULT_TEMPERATURE: f64 = 2.5;
pub const DEFAULT_MAX_LENGTH: usize = 10;
pub const DEFAULT_LLM_RETRIES: usize = 3;

/// Where a proposed concept came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Cas,
    Random,
    Llm,
    LlmFree,
    Human,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Cas => "cas",
            Provenance::Random => "random",
            Provenance::Llm => "llm",
            Provenance::LlmFree => "llm_free",
            Provenance::Human => "human",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cas" => Ok(Provenance::Cas),
            "random" => Ok(Provenance::Random),
            "llm" => Ok(Provenance::Llm),
            "llm_free" => Ok(Provenance::LlmFree),
            "human" => Ok(Provenance::Human),
            other => Err(Error::Data(format!("unknown provenance {other:?}"))),
        }
    }
}

/// What CAS conditions its candidate sequences on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// The original seed concepts, every generation.
    #[default]
    Seed,
    /// The current active pool.
    Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CasConfig {
    /// Number of sampled candidates.
    pub n: usize,
    pub beta: f64,
    pub temperature: f64,
    pub max_length: usize,
    pub seed: u64,
    pub conditioning: Conditioning,
}

impl Default for CasConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_CANDIDATES,
            beta: DEFAULT_BETA,
            temperature: DEFAULT_TEMPERATURE,
            max_length: DEFAULT_MAX_LENGTH,
            seed: 0,
            conditioning: Conditioning::Seed,
        }
    }
}

impl CasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("CAS candidate count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must be in [0, 1], got {}", self.beta)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.max_length == 0 {
            return Err(Error::Config("max_length must be at least 1".into()));
        }
        Ok(())
    }
}

/// One CAS candidate with its scores under both models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub sequence: ConceptSequence,
    pub nll_coherence: f64,
    pub nll_context: f64,
    pub rank_coherence: usize,
    pub rank_context: usize,
    pub score: f64,
}

/// A concept proposed for the pool.
///
/// `concept_id` is `None` only for free-mode LLM suggestions outside the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspirationProposal {
    pub concept: String,
    pub concept_id: Option<ConceptId>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_trace: Option<Vec<RankedCandidate>>,
}

/// Ranks (1 = lowest NLL) for candidates with precomputed NLLs. Ties are broken by
/// the lexicographic order of the token ids, then by position.
pub fn ranks_from_nll(sequences: &[Vec<ConceptId>], nlls: &[f64]) -> Vec<usize> {
    assert_eq!(sequences.len(), nlls.len(), "one NLL per candidate");
    let mut order: Vec<usize> = (0..nlls.len()).collect();
    order.sort_by(|&a, &b| {
        nlls[a]
            .total_cmp(&nlls[b])
            .then_with(|| sequences[a].cmp(&sequences[b]))
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0; nlls.len()];
    for (position, &idx) in order.iter().enumerate() {
        ranks[idx] = position + 1;
    }
    ranks
}

/// Score every candidate with `model` and return its rank.
pub fn rank_by_nll<S: SequenceScorer + ?Sized>(
    candidates: &[ConceptSequence],
    model: &S,
) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::Argument("no candidates to rank".into()));
    }
    let seqs: Vec<Vec<ConceptId>> = candidates.iter().map(|c| c.tokens.clone()).collect();
    let nlls = model.nll_batch(&seqs)?;
    Ok(ranks_from_nll(&seqs, &nlls))
}

/// `(1 − β)(N − R_coherence) − β(N − R_context)`.
pub fn cas_score(rank_coherence: usize, rank_context: usize, n: usize, beta: f64) -> Result<f64> {
    for (name, r) in [("coherence", rank_coherence), ("context", rank_context)] {
        if r < 1 || r > n {
            return Err(Error::Argument(format!(
                "{name} rank {r} outside 1..={n}"
            )));
        }
    }
    Ok((1.0 - beta) * (n - rank_coherence) as f64 - beta * (n - rank_context) as f64)
}

/// Build the candidate table for precomputed NLLs, sorted best first
/// (descending score, then lexicographic tokens, then sample order).
pub fn rank_candidates(
    sequences: Vec<Vec<ConceptId>>,
    nll_coherence: &[f64],
    nll_context: &[f64],
    beta: f64,
) -> Result<Vec<RankedCandidate>> {
    let n = sequences.len();
    if n == 0 {
        return Err(Error::Argument("no candidates to rank".into()));
    }
    let r_coh = ranks_from_nll(&sequences, nll_coherence);
    let r_ctx = ranks_from_nll(&sequences, nll_context);
    let mut table = Vec::with_capacity(n);
    for (i, tokens) in sequences.into_iter().enumerate() {
        table.push((
            i,
            RankedCandidate {
                score: cas_score(r_coh[i], r_ctx[i], n, beta)?,
                sequence: ConceptSequence::generated(tokens),
                nll_coherence: nll_coherence[i],
                nll_context: nll_context[i],
                rank_coherence: r_coh[i],
                rank_context: r_ctx[i],
            },
        ));
    }
    table.sort_by(|(ia, a), (ib, b)| compare_candidates(a, *ia, b, *ib));
    Ok(table.into_iter().map(|(_, c)| c).collect())
}

fn compare_candidates(a: &RankedCandidate, ia: usize, b: &RankedCandidate, ib: usize) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.sequence.tokens.cmp(&b.sequence.tokens))
        .then(ia.cmp(&ib))
}

/// First concept after the `prefix_len` conditioning tokens of the best-ranked
/// candidate that passes `eligible`, falling through to later candidates.
pub fn select_concept(
    ranked: &[RankedCandidate],
    prefix_len: usize,
    eligible: impl Fn(ConceptId) -> bool,
) -> Option<ConceptId> {
    ranked.iter().find_map(|cand| {
        cand.sequence
            .tokens
            .iter()
            .skip(prefix_len)
            .copied()
            .find(|&c| eligible(c))
    })
}

/// Sample, rank and score CAS candidates for `conditioning` (no selection).
pub fn cas_candidates<C, X>(
    conditioning: &[ConceptId],
    coherence: &C,
    context: &X,
    cfg: &CasConfig,
) -> Result<Vec<RankedCandidate>>
where
    C: SequenceScorer + ?Sized,
    X: SequenceScorer + ?Sized,
{
    cfg.validate()?;
    if conditioning.is_empty() {
        return Err(Error::Argument("CAS needs at least one seed concept".into()));
    }
    if coherence.vocabulary_hash() != context.vocabulary_hash() {
        return Err(Error::Config(
            "coherence and context models use different vocabularies".into(),
        ));
    }
    let sequences = coherence.sample_continuations(
        conditioning,
        &SamplingParams {
            count: cfg.n,
            temperature: cfg.temperature,
            max_length: cfg.max_length,
            seed: cfg.seed,
        },
    )?;
    let nll_coh = coherence.nll_batch(&sequences)?;
    let nll_ctx = context.nll_batch(&sequences)?;
    rank_candidates(sequences, &nll_coh, &nll_ctx, cfg.beta)
}

/// Propose one concept with the cultural alien sampler.
pub fn cas_sample<C, X>(
    seed_concepts: &[ConceptId],
    coherence: &C,
    context: &X,
    cfg: &CasConfig,
    pool: &HashSet<ConceptId>,
    expired: &HashSet<ConceptId>,
    vocabulary: &Vocabulary,
) -> Result<InspirationProposal>
where
    C: SequenceScorer + ?Sized,
    X: SequenceScorer + ?Sized,
{
    let ranked = cas_candidates(seed_concepts, coherence, context, cfg)?;
    let chosen = select_concept(&ranked, seed_concepts.len(), |c| {
        !pool.contains(&c) && !expired.contains(&c)
    })
    .ok_or_else(|| {
        Error::SamplerExhausted(format!(
            "none of {} candidates contains an eligible concept",
            ranked.len()
        ))
    })?;
    Ok(InspirationProposal {
        concept: vocabulary
            .label(chosen)
            .ok_or_else(|| Error::Data(format!("sampled concept {chosen} outside the vocabulary")))?
            .to_owned(),
        concept_id: Some(chosen),
        provenance: Provenance::Cas,
        candidate_trace: Some(ranked),
    })
}

/// Uniform draw over the vocabulary minus pool and expired concepts.
pub fn random_sample(
    vocabulary: &Vocabulary,
    pool: &HashSet<ConceptId>,
    expired: &HashSet<ConceptId>,
    seed: u64,
) -> Result<InspirationProposal> {
    let eligible: Vec<ConceptId> = vocabulary
        .ids()
        .filter(|c| !pool.contains(c) && !expired.contains(c))
        .collect();
    if eligible.is_empty() {
        return Err(Error::SamplerExhausted(
            "every vocabulary concept is pooled or expired".into(),
        ));
    }
    let chosen = eligible[rng(seed).gen_range(0..eligible.len())];
    Ok(InspirationProposal {
        concept: vocabulary.label(chosen).expect("id from vocabulary").to_owned(),
        concept_id: Some(chosen),
        provenance: Provenance::Random,
        candidate_trace: None,
    })
}

/// Transport for LLM inspiration requests.
pub trait InspirationClient: Send + Sync {
    fn inspire(&self, request: &InspireRequest) -> Result<InspireResponse>;
}

/// Ask the LLM backend for a concept.
///
/// Suggestions are normalized and checked in order; in constrained mode they must be
/// vocabulary concepts. Pooled and expired concepts are always rejected. When a
/// response has no acceptable suggestion the request is re-issued with the rejected
/// suggestions attached, up to `retries` more times.
pub fn llm_sample(
    state: &InspirationState,
    mode: InspirationMode,
    client: &dyn InspirationClient,
    vocabulary: &Vocabulary,
    retries: usize,
) -> Result<InspirationProposal> {
    let pooled: HashSet<String> = state
        .concept_pool
        .iter()
        .chain(&state.expired_concepts)
        .map(|c| normalize_token(c))
        .collect();
    let mut request = InspireRequest {
        state: state.clone(),
        mode,
        system_prompt: inspiration_system_prompt(mode, vocabulary.labels()),
        user_prompt: inspiration_user_prompt(state, mode),
        rejected: Vec::new(),
    };
    let mut last_problem = String::from("no attempt made");
    for _ in 0..=retries {
        let response = match client.inspire(&request) {
            Ok(r) => r,
            Err(e) => {
                last_problem = e.to_string();
                continue;
            }
        };
        if response.suggested_concepts.is_empty() {
            last_problem = "response had no suggested_concepts".into();
        }
        for raw in &response.suggested_concepts {
            let label = normalize_token(raw);
            let id = vocabulary.id(&label);
            let acceptable = !label.is_empty()
                && !pooled.contains(&label)
                && (mode == InspirationMode::Free || id.is_some());
            if acceptable {
                return Ok(InspirationProposal {
                    concept: label,
                    concept_id: id,
                    provenance: match mode {
                        InspirationMode::Constrained => Provenance::Llm,
                        InspirationMode::Free => Provenance::LlmFree,
                    },
                    candidate_trace: None,
                });
            }
            last_problem = format!("suggestion {raw:?} is not eligible");
            request.rejected.push(raw.clone());
        }
    }
    Err(Error::InspirationFailure(format!(
        "no eligible suggestion after {} attempts: {last_problem}",
        retries + 1
    )))
}

/// Inputs for the LLM half of a suggestion bundle.
pub struct LlmSuggestionSource<'a> {
    pub client: &'a dyn InspirationClient,
    pub state: &'a InspirationState,
    pub retries: usize,
}

/// Suggestions shown to a human curator: one CAS proposal and, when a bridge is
/// configured, one constrained-LLM proposal. Failed members are left out and their
/// errors returned alongside.
#[allow(clippy::too_many_arguments)]
pub fn human_suggestion_bundle<C, X>(
    seed_concepts: &[ConceptId],
    pool: &HashSet<ConceptId>,
    expired: &HashSet<ConceptId>,
    cfg: &CasConfig,
    coherence: &C,
    context: &X,
    vocabulary: &Vocabulary,
    llm: Option<LlmSuggestionSource<'_>>,
) -> (Vec<InspirationProposal>, Vec<Error>)
where
    C: SequenceScorer + ?Sized,
    X: SequenceScorer + ?Sized,
{
    let mut proposals = Vec::new();
    let mut errors = Vec::new();
    match cas_sample(seed_concepts, coherence, context, cfg, pool, expired, vocabulary) {
        Ok(p) => proposals.push(p),
        Err(e) => errors.push(e),
    }
    if let Some(src) = llm {
        match llm_sample(src.state, InspirationMode::Constrained, src.client, vocabulary, src.retries) {
            Ok(p) => proposals.push(p),
            Err(e) => errors.push(e),
        }
    }
    (proposals, errors)
}

/// Write a candidate trace as a tab-separated table.
pub fn write_trace<W: Write>(mut out: W, trace: &[RankedCandidate], vocabulary: &Vocabulary) -> Result<()> {
    writeln!(
        out,
        "sequence\tnll_coherence\tnll_context\trank_coherence\trank_context\tscore"
    )?;
    for c in trace {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            vocabulary.labels_of(&c.sequence.tokens).join(" "),
            c.nll_coherence,
            c.nll_context,
            c.rank_coherence,
            c.rank_context,
            c.score
        )?;
    }
    Ok(())
}
