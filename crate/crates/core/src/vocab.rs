//! Concept vocabulary construction and artwork tagging.
//!
//! A [`Vocabulary`] is a sorted list of unique concept labels; a concept's id is its
//! position in that list, so the same label set always yields the same ids.
//!
//! On disk a vocabulary is a newline-delimited label file (line number − 1 = id) and
//! artwork metadata is JSON Lines, one object per artwork:
//!
//! ```text
//! {"artwork_id":"a-001","artist_id":"hokusai","concepts":["ukiyo_e","wave","mountain"]}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::util::sha256_hex;
use crate::{Error, Result};

/// Index of a concept in its [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(pub u32);

impl ConceptId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A concept label paired with its id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Concept<'a> {
    pub id: ConceptId,
    pub label: &'a str,
}

/// Normalize a raw token: lowercase, whitespace runs become `_`, and anything that is
/// not alphanumeric or `_` is dropped.
pub fn normalize_token(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.trim().chars() {
        if ch.is_whitespace() || ch == '_' {
            pending_sep = !out.is_empty();
            continue;
        }
        if !ch.is_alphanumeric() {
            continue;
        }
        if pending_sep {
            out.push('_');
            pending_sep = false;
        }
        out.extend(ch.to_lowercase());
    }
    out
}

/// The allowed concept set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    labels: Vec<String>,
    index: HashMap<String, ConceptId>,
}

impl Vocabulary {
    /// Build a vocabulary from labels in any order. Labels are normalized and sorted;
    /// duplicates (after normalization) and empty labels are rejected.
    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut sorted: Vec<String> = Vec::new();
        for raw in labels {
            let label = normalize_token(raw.as_ref());
            if label.is_empty() {
                return Err(Error::Data(format!(
                    "label {:?} is empty after normalization",
                    raw.as_ref()
                )));
            }
            sorted.push(label);
        }
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Data(format!("duplicate concept label {:?}", w[0])));
        }
        if sorted.is_empty() {
            return Err(Error::Config("vocabulary must contain at least one concept".into()));
        }
        Ok(Self::from_sorted_unchecked(sorted))
    }

    fn from_sorted_unchecked(labels: Vec<String>) -> Self {
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), ConceptId(i as u32)))
            .collect();
        Self { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: ConceptId) -> Option<&str> {
        self.labels.get(id.index()).map(String::as_str)
    }

    /// Look up a label, normalizing it first.
    pub fn id(&self, label: &str) -> Option<ConceptId> {
        self.index
            .get(label)
            .or_else(|| self.index.get(&normalize_token(label)))
            .copied()
    }

    pub fn contains(&self, id: ConceptId) -> bool {
        id.index() < self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = Concept<'_>> {
        self.labels.iter().enumerate().map(|(i, l)| Concept {
            id: ConceptId(i as u32),
            label: l,
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = ConceptId> {
        (0..self.labels.len() as u32).map(ConceptId)
    }

    /// Resolve labels to ids, failing on the first unknown label.
    pub fn resolve<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<ConceptId>> {
        labels
            .iter()
            .map(|l| {
                self.id(l.as_ref())
                    .ok_or_else(|| Error::Data(format!("unknown concept {:?}", l.as_ref())))
            })
            .collect()
    }

    /// Labels for a list of ids. Panics on ids outside the vocabulary.
    pub fn labels_of(&self, ids: &[ConceptId]) -> Vec<String> {
        ids.iter().map(|&id| self.labels[id.index()].clone()).collect()
    }

    /// Canonical text serialization: one label per line, trailing newline.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for l in &self.labels {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    /// Parse the label-file format. Blank lines are ignored; labels must already be
    /// normalized and strictly sorted so that line order equals id order.
    pub fn from_text(text: &str) -> Result<Self> {
        let labels: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        if labels.is_empty() {
            return Err(Error::Config("vocabulary file has no labels".into()));
        }
        for (line, l) in labels.iter().enumerate() {
            if normalize_token(l) != *l {
                return Err(Error::Data(format!(
                    "vocabulary line {}: label {l:?} is not normalized",
                    line + 1
                )));
            }
        }
        if let Some(w) = labels.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "vocabulary labels must be unique and sorted ({:?} before {:?})",
                w[0], w[1]
            )));
        }
        Ok(Self::from_sorted_unchecked(labels))
    }

    /// SHA-256 of the canonical serialization; identifies the vocabulary in model files
    /// and bridge handshakes.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// A tokenized caption document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

/// Caption corpus used for vocabulary extraction.
#[derive(Debug, Clone, Default)]
pub struct CaptionCorpus {
    documents: Vec<Document>,
}

#[derive(Deserialize)]
struct CorpusLine {
    doc_id: String,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    text: Option<String>,
}

impl CaptionCorpus {
    /// Normalize every token; empty tokens are dropped. Documents left with no tokens
    /// and repeated doc ids are rejected.
    pub fn new<I, S>(documents: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<S>)>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let mut docs = Vec::new();
        for (doc_id, raw) in documents {
            if !seen.insert(doc_id.clone()) {
                return Err(Error::Data(format!("duplicate doc_id {doc_id:?}")));
            }
            let tokens: Vec<String> = raw
                .iter()
                .map(|t| normalize_token(t.as_ref()))
                .filter(|t| !t.is_empty())
                .collect();
            if tokens.is_empty() {
                return Err(Error::Data(format!(
                    "document {doc_id:?} has no tokens after normalization"
                )));
            }
            docs.push(Document { doc_id, tokens });
        }
        Ok(Self { documents: docs })
    }

    /// Load a JSON Lines corpus. Each line has a `doc_id` and either a `tokens` array
    /// (multi-word tokens allowed) or a `text` string split on whitespace.
    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut docs = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CorpusLine = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("corpus line {}: {e}", n + 1)))?;
            let tokens = match (parsed.tokens, parsed.text) {
                (Some(t), _) => t,
                (None, Some(text)) => text.split_whitespace().map(str::to_owned).collect(),
                (None, None) => {
                    return Err(Error::Data(format!(
                        "corpus line {}: needs `tokens` or `text`",
                        n + 1
                    )))
                }
            };
            docs.push((parsed.doc_id, tokens));
        }
        Self::new(docs)
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// How term frequency is measured inside one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermFrequency {
    /// count / document length
    #[default]
    Relative,
    /// raw count
    Raw,
}

/// How per-document tf·idf values are combined into one score per token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAggregation {
    #[default]
    Max,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TfIdfOptions {
    pub term_frequency: TermFrequency,
    pub aggregation: ScoreAggregation,
}

/// Corpus-level TF-IDF score of every token (IDF = ln(D / df)).
pub fn tfidf_scores(corpus: &CaptionCorpus, options: TfIdfOptions) -> BTreeMap<String, f64> {
    let n_docs = corpus.documents.len() as f64;
    let mut df: HashMap<&str, usize> = HashMap::new();
    let mut per_doc: Vec<(HashMap<&str, usize>, usize)> = Vec::new();
    for doc in &corpus.documents {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in &doc.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        for t in counts.keys() {
            *df.entry(t).or_default() += 1;
        }
        per_doc.push((counts, doc.tokens.len()));
    }

    let mut scores: BTreeMap<String, f64> = BTreeMap::new();
    for (counts, len) in &per_doc {
        for (&token, &count) in counts {
            let idf = (n_docs / df[token] as f64).ln();
            let tf = match options.term_frequency {
                TermFrequency::Relative => count as f64 / *len as f64,
                TermFrequency::Raw => count as f64,
            };
            let value = tf * idf;
            let slot = scores.entry(token.to_owned()).or_insert(match options.aggregation {
                ScoreAggregation::Max => f64::NEG_INFINITY,
                ScoreAggregation::Sum => 0.0,
            });
            match options.aggregation {
                ScoreAggregation::Max => *slot = slot.max(value),
                ScoreAggregation::Sum => *slot += value,
            }
        }
    }
    scores
}

/// Select the `top_k` tokens by TF-IDF (ties by label), then drop stoplist entries.
pub fn build_vocabulary(
    corpus: &CaptionCorpus,
    top_k: usize,
    stoplist: &HashSet<String>,
) -> Result<Vocabulary> {
    build_vocabulary_with(corpus, top_k, stoplist, TfIdfOptions::default())
}

pub fn build_vocabulary_with(
    corpus: &CaptionCorpus,
    top_k: usize,
    stoplist: &HashSet<String>,
    options: TfIdfOptions,
) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Config("caption corpus is empty".into()));
    }
    if top_k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    let mut ranked: Vec<(String, f64)> = tfidf_scores(corpus, options).into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let stop: HashSet<String> = stoplist.iter().map(|s| normalize_token(s)).collect();
    let survivors: Vec<String> = ranked
        .into_iter()
        .take(top_k)
        .map(|(label, _)| label)
        .filter(|label| !stop.contains(label))
        .collect();
    if survivors.is_empty() {
        return Err(Error::Config(
            "every selected token was removed by the stoplist".into(),
        ));
    }
    Vocabulary::from_labels(survivors)
}

/// Load a stoplist file: one token per line, `#` starts a comment.
pub fn load_stoplist(path: &Path) -> Result<HashSet<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(normalize_token)
        .collect())
}

fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// The `k` concepts most cosine-similar to an artwork embedding, ordered by
/// (similarity descending, id ascending).
pub fn assign_concepts(
    artwork_embedding: &[f64],
    vocabulary: &Vocabulary,
    concept_embeddings: &BTreeMap<ConceptId, Vec<f64>>,
    k: usize,
) -> Result<Vec<ConceptId>> {
    if k == 0 || k > vocabulary.len() {
        return Err(Error::Argument(format!(
            "k = {k} must be in 1..={}",
            vocabulary.len()
        )));
    }
    if concept_embeddings.len() < k {
        return Err(Error::Argument(format!(
            "only {} concept embeddings for k = {k}",
            concept_embeddings.len()
        )));
    }
    let dim = artwork_embedding.len();
    let mut scored = Vec::with_capacity(concept_embeddings.len());
    for (&id, vector) in concept_embeddings {
        if !vocabulary.contains(id) {
            return Err(Error::Data(format!("concept id {id} not in vocabulary")));
        }
        if vector.len() != dim {
            return Err(Error::Embedding(format!(
                "concept {id} has dimension {}, artwork has {dim}",
                vector.len()
            )));
        }
        scored.push((cosine_similarity(artwork_embedding, vector), id));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, id)| id).collect())
}

/// One tagged artwork.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtworkRecord {
    pub artwork_id: String,
    pub artist_id: String,
    pub concepts: BTreeSet<ConceptId>,
}

/// Per-artist concept vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtistRecord {
    pub artist_id: String,
    pub artwork_count: usize,
    pub vocabulary: BTreeSet<ConceptId>,
}

/// Group artworks by artist; one record per artist, sorted by artist id.
pub fn build_artist_records(artworks: &[ArtworkRecord]) -> Vec<ArtistRecord> {
    let mut grouped: BTreeMap<&str, ArtistRecord> = BTreeMap::new();
    for art in artworks {
        let entry = grouped
            .entry(art.artist_id.as_str())
            .or_insert_with(|| ArtistRecord {
                artist_id: art.artist_id.clone(),
                artwork_count: 0,
                vocabulary: BTreeSet::new(),
            });
        entry.artwork_count += 1;
        entry.vocabulary.extend(art.concepts.iter().copied());
    }
    grouped.into_values().collect()
}

#[derive(Serialize, Deserialize)]
struct ArtworkLine {
    artwork_id: String,
    artist_id: String,
    concepts: Vec<String>,
}

/// Parse artwork metadata (JSON Lines) against a vocabulary.
pub fn load_artworks(path: &Path, vocabulary: &Vocabulary) -> Result<Vec<ArtworkRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ArtworkLine = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("artwork line {}: {e}", n + 1)))?;
        let concepts: BTreeSet<ConceptId> = vocabulary
            .resolve(&parsed.concepts)
            .map_err(|e| Error::Data(format!("artwork {}: {e}", parsed.artwork_id)))?
            .into_iter()
            .collect();
        if concepts.is_empty() {
            return Err(Error::Data(format!(
                "artwork {} has no concepts",
                parsed.artwork_id
            )));
        }
        out.push(ArtworkRecord {
            artwork_id: parsed.artwork_id,
            artist_id: parsed.artist_id,
            concepts,
        });
    }
    Ok(out)
}

pub fn write_artworks<W: Write>(
    mut out: W,
    artworks: &[ArtworkRecord],
    vocabulary: &Vocabulary,
) -> Result<()> {
    for art in artworks {
        let ids: Vec<ConceptId> = art.concepts.iter().copied().collect();
        let line = ArtworkLine {
            artwork_id: art.artwork_id.clone(),
            artist_id: art.artist_id.clone(),
            concepts: vocabulary.labels_of(&ids),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// A precomputed artwork image embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtworkEmbedding {
    pub artwork_id: String,
    pub artist_id: String,
    pub embedding: Vec<f64>,
}

/// Read artwork embeddings from JSON Lines.
pub fn load_artwork_embeddings(path: &Path) -> Result<Vec<ArtworkEmbedding>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("artwork embedding line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

/// Read concept embeddings (`{"label", "embedding"}` lines); every label must be in
/// the vocabulary.
pub fn load_concept_embeddings(path: &Path, vocabulary: &Vocabulary) -> Result<BTreeMap<ConceptId, Vec<f64>>> {
    crate::embed::read_labeled_vectors(path)?
        .into_iter()
        .map(|(label, v)| {
            let id = vocabulary
                .id(&normalize_token(&label))
                .ok_or_else(|| Error::Data(format!("concept {label:?} not in vocabulary")))?;
            Ok((id, v))
        })
        .collect()
}

/// Embed every concept's display text (underscores as spaces) with `embedder`.
pub fn embed_concepts(
    vocabulary: &Vocabulary,
    embedder: &dyn crate::embed::Embedder,
) -> Result<BTreeMap<ConceptId, Vec<f64>>> {
    vocabulary
        .iter()
        .map(|c| {
            let v = embedder.embed_text(&crate::prompts::display_label(c.label))?;
            Ok((c.id, v.values().to_vec()))
        })
        .collect()
}

/// Tag each artwork with its `k` nearest concepts.
pub fn tag_artworks(
    artworks: &[ArtworkEmbedding],
    vocabulary: &Vocabulary,
    concept_embeddings: &BTreeMap<ConceptId, Vec<f64>>,
    k: usize,
) -> Result<Vec<ArtworkRecord>> {
    artworks
        .iter()
        .map(|a| {
            Ok(ArtworkRecord {
                artwork_id: a.artwork_id.clone(),
                artist_id: a.artist_id.clone(),
                concepts: assign_concepts(&a.embedding, vocabulary, concept_embeddings, k)?
                    .into_iter()
                    .collect(),
            })
        })
        .collect()
}
