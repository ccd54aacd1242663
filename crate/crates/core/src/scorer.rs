//! Autoregressive concept-sequence scoring.
//!
//! [`SequenceScorer`] is the contract shared by the coherence and context models:
//! a next-concept distribution given a prefix, from which sequence NLL (in nats) and
//! tempered sampling follow. [`CooccurrenceModel`] is the in-process reference
//! implementation; a bridge-backed scorer implements the same trait over HTTP.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::util::{derive_seed, rng};
use crate::vocab::{ConceptId, Vocabulary};
use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.8;

/// Parameters of one sampling call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub count: usize,
    pub temperature: f64,
    pub max_length: usize,
    pub seed: u64,
}

/// A model of P(c_i | c_0 .. c_{i-1}) over a fixed vocabulary.
pub trait SequenceScorer: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Hash of the vocabulary the model was built over.
    fn vocabulary_hash(&self) -> &str;

    /// Probability of every concept following `context`. Sums to one, all entries > 0.
    fn next_distribution(&self, context: &[ConceptId]) -> Result<Vec<f64>>;

    /// Negative log-likelihood of `sequence` in nats: Σ −ln P(c_i | prefix).
    fn nll(&self, sequence: &[ConceptId]) -> Result<f64> {
        if sequence.is_empty() {
            return Err(Error::Argument("cannot score an empty sequence".into()));
        }
        let mut total = 0.0;
        for i in 0..sequence.len() {
            let dist = self.next_distribution(&sequence[..i])?;
            let p = dist.get(sequence[i].index()).copied().ok_or_else(|| {
                Error::Data(format!("concept id {} outside the vocabulary", sequence[i]))
            })?;
            total -= p.ln();
        }
        Ok(total)
    }

    fn nll_batch(&self, sequences: &[Vec<ConceptId>]) -> Result<Vec<f64>> {
        sequences.par_iter().map(|s| self.nll(s)).collect()
    }

    /// Sample `params.count` continuations of `context`; see [`sample_locally`].
    fn sample_continuations(
        &self,
        context: &[ConceptId],
        params: &SamplingParams,
    ) -> Result<Vec<Vec<ConceptId>>> {
        sample_locally(self, context, params)
    }
}

impl<S: SequenceScorer + ?Sized> SequenceScorer for &S {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn vocabulary_hash(&self) -> &str {
        (**self).vocabulary_hash()
    }
    fn next_distribution(&self, context: &[ConceptId]) -> Result<Vec<f64>> {
        (**self).next_distribution(context)
    }
    fn nll(&self, sequence: &[ConceptId]) -> Result<f64> {
        (**self).nll(sequence)
    }
    fn nll_batch(&self, sequences: &[Vec<ConceptId>]) -> Result<Vec<f64>> {
        (**self).nll_batch(sequences)
    }
    fn sample_continuations(
        &self,
        context: &[ConceptId],
        params: &SamplingParams,
    ) -> Result<Vec<Vec<ConceptId>>> {
        (**self).sample_continuations(context, params)
    }
}

/// Apply temperature to a probability vector: p_i^(1/t), renormalized over the
/// entries where `allowed` is true. Returns `None` when nothing is allowed.
pub fn tempered(dist: &[f64], temperature: f64, allowed: impl Fn(usize) -> bool) -> Option<Vec<f64>> {
    let logits: Vec<Option<f64>> = dist
        .iter()
        .enumerate()
        .map(|(i, &p)| (allowed(i) && p > 0.0).then(|| p.ln() / temperature))
        .collect();
    let max = logits
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let weights: Vec<f64> = logits
        .iter()
        .map(|l| l.map_or(0.0, |l| (l - max).exp()))
        .collect();
    let total: f64 = weights.iter().sum();
    Some(weights.into_iter().map(|w| w / total).collect())
}

/// Reference sampling procedure shared by in-process and bridge-served scorers.
///
/// Sequence `i` draws from its own stream seeded with `derive_seed(seed, i)`, so the
/// result is independent of evaluation order. Each step samples from the tempered
/// next-concept distribution with concepts already in the prefix excluded; a
/// sequence stops early when every concept is excluded.
pub fn sample_locally<S: SequenceScorer + ?Sized>(
    model: &S,
    context: &[ConceptId],
    params: &SamplingParams,
) -> Result<Vec<Vec<ConceptId>>> {
    if !(params.temperature > 0.0) {
        return Err(Error::Argument(format!(
            "temperature must be positive, got {}",
            params.temperature
        )));
    }
    if context.len() >= params.max_length {
        return Err(Error::Argument(format!(
            "context length {} must be below max_length {}",
            context.len(),
            params.max_length
        )));
    }
    let n = model.vocab_size();
    if let Some(bad) = context.iter().find(|c| c.index() >= n) {
        return Err(Error::Data(format!("context concept {bad} outside the vocabulary")));
    }
    (0..params.count)
        .into_par_iter()
        .map(|i| {
            let mut stream = rng(derive_seed(params.seed, i as u64));
            let mut seq = context.to_vec();
            let mut present = vec![false; n];
            for c in context {
                present[c.index()] = true;
            }
            while seq.len() < params.max_length {
                let dist = model.next_distribution(&seq)?;
                let Some(probs) = tempered(&dist, params.temperature, |c| !present[c]) else {
                    break;
                };
                let u: f64 = stream.gen();
                let mut acc = 0.0;
                let mut pick = None;
                for (c, &p) in probs.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    pick = Some(c);
                    acc += p;
                    if u < acc {
                        break;
                    }
                }
                let c = pick.expect("tempered distribution has support");
                present[c] = true;
                seq.push(ConceptId(c as u32));
            }
            Ok(seq)
        })
        .collect()
}

/// Smoothed co-occurrence model.
///
/// ```text
/// P(c | ctx) ∝ λ · mean_{g ∈ ctx} (pair[g,c] + α) / (uni[g] + α·n)
///            + (1 − λ) · (uni[c] + α) / (total + α·n)
/// ```
///
/// With an empty context the distribution is the smoothed unigram.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceModel {
    n: usize,
    vocabulary_hash: String,
    unigram: Vec<u64>,
    /// Row-major n × n, symmetric, zero diagonal.
    pair: Vec<u32>,
    total: u64,
    alpha: f64,
    lambda: f64,
}

fn check_params(alpha: f64, lambda: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must be in [0, 1], got {lambda}")));
    }
    Ok(())
}

impl CooccurrenceModel {
    /// A model with all counts zero; its distribution is uniform.
    pub fn untrained(vocabulary: &Vocabulary, alpha: f64, lambda: f64) -> Result<Self> {
        check_params(alpha, lambda)?;
        let n = vocabulary.len();
        Ok(Self {
            n,
            vocabulary_hash: vocabulary.hash(),
            unigram: vec![0; n],
            pair: vec![0; n * n],
            total: 0,
            alpha,
            lambda,
        })
    }

    /// Tally unigram occurrences and per-sequence pair co-occurrence.
    pub fn train<'a, I>(vocabulary: &Vocabulary, sequences: I, alpha: f64, lambda: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [ConceptId]>,
    {
        let mut model = Self::untrained(vocabulary, alpha, lambda)?;
        let n = model.n;
        let mut seen = 0usize;
        let mut distinct: Vec<usize> = Vec::new();
        for seq in sequences {
            seen += 1;
            distinct.clear();
            for &c in seq {
                let c = c.index();
                if c >= n {
                    return Err(Error::Data(format!(
                        "token {c} outside the vocabulary of {n} concepts"
                    )));
                }
                model.unigram[c] += 1;
                model.total += 1;
                distinct.push(c);
            }
            distinct.sort_unstable();
            distinct.dedup();
            for (i, &a) in distinct.iter().enumerate() {
                for &b in &distinct[i + 1..] {
                    model.pair[a * n + b] += 1;
                    model.pair[b * n + a] += 1;
                }
            }
        }
        if seen == 0 {
            return Err(Error::Data("cannot train on an empty dataset".into()));
        }
        Ok(model)
    }

    pub fn unigram(&self, c: ConceptId) -> u64 {
        self.unigram[c.index()]
    }

    pub fn pair(&self, a: ConceptId, b: ConceptId) -> u32 {
        self.pair[a.index() * self.n + b.index()]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer(&mut out, &self.to_file())?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    /// Load a model file, rejecting one built over a different vocabulary.
    pub fn load(path: &Path, vocabulary: &Vocabulary) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(BufReader::new(fs::File::open(path)?))?;
        Self::from_file(file, vocabulary)
    }

    fn to_file(&self) -> ModelFile {
        let n = self.n;
        let mut pairs = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let count = self.pair[a * n + b];
                if count > 0 {
                    pairs.push((a as u32, b as u32, count));
                }
            }
        }
        ModelFile {
            format: MODEL_FORMAT.into(),
            vocabulary_hash: self.vocabulary_hash.clone(),
            n,
            alpha: self.alpha,
            lambda: self.lambda,
            unigram: self.unigram.clone(),
            pairs,
        }
    }

    fn from_file(file: ModelFile, vocabulary: &Vocabulary) -> Result<Self> {
        if file.format != MODEL_FORMAT {
            return Err(Error::Data(format!("unsupported model format {:?}", file.format)));
        }
        let expected = vocabulary.hash();
        if file.vocabulary_hash != expected {
            return Err(Error::Data(format!(
                "model vocabulary hash {} does not match {}",
                file.vocabulary_hash, expected
            )));
        }
        let n = file.n;
        if n != vocabulary.len() || file.unigram.len() != n {
            return Err(Error::Data("model dimensions do not match the vocabulary".into()));
        }
        let mut model = Self::untrained(vocabulary, file.alpha, file.lambda)?;
        model.unigram = file.unigram;
        model.total = model.unigram.iter().sum();
        for (a, b, count) in file.pairs {
            let (a, b) = (a as usize, b as usize);
            if a >= n || b >= n || a == b {
                return Err(Error::Data(format!("invalid pair entry ({a}, {b})")));
            }
            model.pair[a * n + b] = count;
            model.pair[b * n + a] = count;
        }
        Ok(model)
    }
}

const MODEL_FORMAT: &str = "cas-cooccurrence/1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    vocabulary_hash: String,
    n: usize,
    alpha: f64,
    lambda: f64,
    unigram: Vec<u64>,
    pairs: Vec<(u32, u32, u32)>,
}

impl SequenceScorer for CooccurrenceModel {
    fn vocab_size(&self) -> usize {
        self.n
    }

    fn vocabulary_hash(&self) -> &str {
        &self.vocabulary_hash
    }

    fn next_distribution(&self, context: &[ConceptId]) -> Result<Vec<f64>> {
        let n = self.n;
        let alpha_n = self.alpha * n as f64;
        for g in context {
            if g.index() >= n {
                return Err(Error::Data(format!("context concept {g} outside the vocabulary")));
            }
        }
        let uni_denom = self.total as f64 + alpha_n;
        let unigram = self.unigram.iter().map(|&u| (u as f64 + self.alpha) / uni_denom);
        if context.is_empty() {
            return Ok(unigram.collect());
        }
        let mut cond = vec![0.0; n];
        for g in context {
            let g = g.index();
            let denom = self.unigram[g] as f64 + alpha_n;
            let row = &self.pair[g * n..(g + 1) * n];
            for (slot, &count) in cond.iter_mut().zip(row) {
                *slot += (count as f64 + self.alpha) / denom;
            }
        }
        let k = context.len() as f64;
        let mut dist: Vec<f64> = cond
            .into_iter()
            .zip(unigram)
            .map(|(c, u)| self.lambda * (c / k) + (1.0 - self.lambda) * u)
            .collect();
        let total: f64 = dist.iter().sum();
        for p in &mut dist {
            *p /= total;
        }
        Ok(dist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_labels((0..n).map(|i| format!("c{i:03}"))).unwrap()
    }

    fn ids(v: &[u32]) -> Vec<ConceptId> {
        v.iter().map(|&c| ConceptId(c)).collect()
    }

    #[test]
    fn single_pair_counts() {
        let v = vocab(3);
        let seq = ids(&[0, 1]);
        let m = CooccurrenceModel::train(&v, [seq.as_slice()], 0.1, 0.8).unwrap();
        assert_eq!(m.pair(ConceptId(0), ConceptId(1)), 1);
        assert_eq!(m.pair(ConceptId(1), ConceptId(0)), 1);
        assert_eq!(m.unigram(ConceptId(0)), 1);
        assert_eq!(m.unigram(ConceptId(1)), 1);
        assert_eq!(m.unigram(ConceptId(2)), 0);
    }

    #[test]
    fn untrained_model_is_uniform() {
        let m = CooccurrenceModel::untrained(&vocab(4), 0.1, 0.8).unwrap();
        let d = m.next_distribution(&ids(&[2])).unwrap();
        assert!(d.iter().all(|p| (p - 0.25).abs() < 1e-15));
        let nll = m.nll(&ids(&[0, 3])).unwrap();
        assert!((nll - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!((nll - 2.7726).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_inputs() {
        let v = vocab(2);
        assert!(matches!(
            CooccurrenceModel::untrained(&v, 0.0, 0.5),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            CooccurrenceModel::untrained(&v, 0.1, 1.5),
            Err(Error::Config(_))
        ));
        let bad = ids(&[5]);
        assert!(matches!(
            CooccurrenceModel::train(&v, [bad.as_slice()], 0.1, 0.5),
            Err(Error::Data(_))
        ));
        let none: Vec<&[ConceptId]> = Vec::new();
        assert!(CooccurrenceModel::train(&v, none, 0.1, 0.5).is_err());
        let m = CooccurrenceModel::untrained(&v, 0.1, 0.5).unwrap();
        assert!(matches!(m.nll(&ids(&[7])), Err(Error::Data(_))));
        assert!(matches!(m.nll(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn sampling_argument_errors() {
        let m = CooccurrenceModel::untrained(&vocab(3), 0.1, 0.8).unwrap();
        let p = SamplingParams {
            count: 2,
            temperature: 1.0,
            max_length: 2,
            seed: 0,
        };
        assert!(matches!(
            m.sample_continuations(&ids(&[0, 1]), &p),
            Err(Error::Argument(_))
        ));
        let zero_t = SamplingParams { temperature: 0.0, ..p };
        assert!(matches!(
            m.sample_continuations(&ids(&[0]), &zero_t),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn sampling_truncates_when_vocabulary_exhausted() {
        let m = CooccurrenceModel::untrained(&vocab(3), 0.1, 0.8).unwrap();
        let p = SamplingParams {
            count: 5,
            temperature: 1.0,
            max_length: 10,
            seed: 4,
        };
        for s in m.sample_continuations(&ids(&[1]), &p).unwrap() {
            assert_eq!(s.len(), 3);
            let mut sorted = s.clone();
            sorted.sort();
            assert_eq!(sorted, ids(&[0, 1, 2]));
        }
    }

    #[test]
    fn model_file_round_trip_and_hash_check() {
        let v = vocab(4);
        let seqs = [ids(&[0, 1, 2]), ids(&[2, 3])];
        let m = CooccurrenceModel::train(&v, seqs.iter().map(Vec::as_slice), 0.2, 0.7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        assert_eq!(CooccurrenceModel::load(&path, &v).unwrap(), m);
        assert!(matches!(
            CooccurrenceModel::load(&path, &vocab(5)),
            Err(Error::Data(_))
        ));
    }
}
