//! Training sequences for the coherence and context scorers.
//!
//! The artwork dataset holds random orderings of each artwork's concept set; the
//! artist dataset holds fixed-length samples from each artist's vocabulary. Both are
//! produced by streaming iterators, so million-sequence datasets never need to be resident.
//!
//! Dataset file format: a `#` header line of `key=value` pairs followed by one
//! sequence per line as space-separated labels.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::util::{rng, Rng};
use crate::vocab::{ArtistRecord, ArtworkRecord, ConceptId, Vocabulary};
use crate::{Error, Result};

pub const DEFAULT_PERMUTATIONS_PER_ARTWORK: usize = 100;
pub const DEFAULT_SEQUENCES_PER_ARTWORK: usize = 100;
pub const DEFAULT_SEQUENCE_LENGTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Artwork,
    Artist,
    Generated,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Artwork => "artwork",
            Origin::Artist => "artist",
            Origin::Generated => "generated",
        })
    }
}

impl FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "artwork" => Ok(Origin::Artwork),
            "artist" => Ok(Origin::Artist),
            "generated" => Ok(Origin::Generated),
            other => Err(Error::Data(format!("unknown sequence origin {other:?}"))),
        }
    }
}

/// An ordered list of concepts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConceptSequence {
    pub tokens: Vec<ConceptId>,
    pub origin: Origin,
}

impl ConceptSequence {
    pub fn new(tokens: Vec<ConceptId>, origin: Origin) -> Self {
        Self { tokens, origin }
    }

    pub fn generated(tokens: Vec<ConceptId>) -> Self {
        Self::new(tokens, Origin::Generated)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A materialized dataset together with the seed that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceDataset {
    pub sequences: Vec<ConceptSequence>,
    pub seed: u64,
    /// `key=value` parameters recorded in the file header.
    pub params: Vec<(String, String)>,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn iter_tokens(&self) -> impl Iterator<Item = &[ConceptId]> {
        self.sequences.iter().map(|s| s.tokens.as_slice())
    }

    pub fn write<W: Write>(&self, out: W, vocabulary: &Vocabulary) -> Result<()> {
        write_dataset(out, self.seed, &self.params, self.sequences.iter().cloned(), vocabulary)
    }

    pub fn save(&self, path: &Path, vocabulary: &Vocabulary) -> Result<()> {
        self.write(BufWriter::new(fs::File::create(path)?), vocabulary)
    }

    /// Parse a dataset file; every label must belong to `vocabulary`.
    pub fn load(path: &Path, vocabulary: &Vocabulary) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("dataset file is empty".into()))??;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Data("dataset file is missing its header line".into()))?;
        let mut params = Vec::new();
        let mut seed = None;
        let mut origin = Origin::Generated;
        for pair in header.split_whitespace() {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("bad header field {pair:?}")))?;
            match k {
                "seed" => {
                    seed = Some(
                        v.parse()
                            .map_err(|_| Error::Data(format!("bad seed {v:?}")))?,
                    );
                    continue;
                }
                "origin" => origin = v.parse()?,
                _ => {}
            }
            params.push((k.to_owned(), v.to_owned()));
        }
        let seed = seed.ok_or_else(|| Error::Data("dataset header has no seed".into()))?;
        let mut sequences = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            let labels: Vec<&str> = line.split_whitespace().collect();
            if labels.is_empty() {
                continue;
            }
            let tokens = vocabulary
                .resolve(&labels)
                .map_err(|e| Error::Data(format!("dataset line {}: {e}", n + 2)))?;
            sequences.push(ConceptSequence::new(tokens, origin));
        }
        Ok(Self {
            sequences,
            seed,
            params,
        })
    }
}

/// Stream a dataset to `out` without materializing it.
pub fn write_dataset<W, I>(
    mut out: W,
    seed: u64,
    params: &[(String, String)],
    sequences: I,
    vocabulary: &Vocabulary,
) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = ConceptSequence>,
{
    write!(out, "# seed={seed}")?;
    for (k, v) in params.iter().filter(|(k, _)| k != "seed") {
        write!(out, " {k}={v}")?;
    }
    writeln!(out)?;
    for seq in sequences {
        let mut first = true;
        for &id in &seq.tokens {
            let label = vocabulary
                .label(id)
                .ok_or_else(|| Error::Data(format!("concept id {id} not in vocabulary")))?;
            if !first {
                out.write_all(b" ")?;
            }
            out.write_all(label.as_bytes())?;
            first = false;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Streaming generator of artwork permutations.
pub struct ArtworkSequences<'a> {
    artworks: &'a [ArtworkRecord],
    per_artwork: usize,
    rng: Rng,
    artwork: usize,
    emitted: usize,
    buffer: Vec<ConceptId>,
}

impl Iterator for ArtworkSequences<'_> {
    type Item = ConceptSequence;

    fn next(&mut self) -> Option<ConceptSequence> {
        if self.emitted == self.per_artwork {
            self.artwork += 1;
            self.emitted = 0;
        }
        let art = self.artworks.get(self.artwork)?;
        if self.emitted == 0 {
            self.buffer = art.concepts.iter().copied().collect();
        }
        self.buffer.shuffle(&mut self.rng);
        self.emitted += 1;
        Some(ConceptSequence::new(self.buffer.clone(), Origin::Artwork))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let total = self.artworks.len() * self.per_artwork;
        let done = (self.artwork * self.per_artwork + self.emitted).min(total);
        (total - done, Some(total - done))
    }
}

/// Validate inputs and return the artwork permutation stream.
pub fn artwork_sequences(
    artworks: &[ArtworkRecord],
    permutations_per_artwork: usize,
    seed: u64,
) -> Result<ArtworkSequences<'_>> {
    if permutations_per_artwork == 0 {
        return Err(Error::Config("permutations_per_artwork must be at least 1".into()));
    }
    if let Some(bad) = artworks.iter().find(|a| a.concepts.is_empty()) {
        return Err(Error::Data(format!(
            "artwork {} has an empty concept set",
            bad.artwork_id
        )));
    }
    Ok(ArtworkSequences {
        artworks,
        per_artwork: permutations_per_artwork,
        rng: rng(seed),
        artwork: 0,
        emitted: 0,
        buffer: Vec::new(),
    })
}

/// `permutations_per_artwork` uniformly random orderings of every artwork's concept set.
pub fn build_artwork_dataset(
    artworks: &[ArtworkRecord],
    permutations_per_artwork: usize,
    seed: u64,
) -> Result<SequenceDataset> {
    let sequences = artwork_sequences(artworks, permutations_per_artwork, seed)?.collect();
    Ok(SequenceDataset {
        sequences,
        seed,
        params: vec![
            ("origin".into(), "artwork".into()),
            (
                "permutations_per_artwork".into(),
                permutations_per_artwork.to_string(),
            ),
        ],
    })
}

/// Streaming generator of artist vocabulary samples.
pub struct ArtistSequences<'a> {
    artists: &'a [ArtistRecord],
    sequence_length: usize,
    per_artwork: usize,
    rng: Rng,
    artist: usize,
    emitted: usize,
    pool: Vec<ConceptId>,
}

impl Iterator for ArtistSequences<'_> {
    type Item = ConceptSequence;

    fn next(&mut self) -> Option<ConceptSequence> {
        loop {
            let artist = self.artists.get(self.artist)?;
            if self.emitted < self.per_artwork * artist.artwork_count {
                break;
            }
            self.artist += 1;
            self.emitted = 0;
        }
        let artist = &self.artists[self.artist];
        if self.emitted == 0 {
            self.pool = artist.vocabulary.iter().copied().collect();
        }
        self.emitted += 1;
        let tokens = if self.pool.len() >= self.sequence_length {
            let (chosen, _) = self.pool.partial_shuffle(&mut self.rng, self.sequence_length);
            chosen.to_vec()
        } else {
            (0..self.sequence_length)
                .map(|_| self.pool[self.rng.gen_range(0..self.pool.len())])
                .collect()
        };
        Some(ConceptSequence::new(tokens, Origin::Artist))
    }
}

pub fn artist_sequences(
    artists: &[ArtistRecord],
    sequence_length: usize,
    sequences_per_artwork: usize,
    seed: u64,
) -> Result<ArtistSequences<'_>> {
    if artists.is_empty() {
        return Err(Error::Config("no artists to sample from".into()));
    }
    if sequence_length == 0 || sequences_per_artwork == 0 {
        return Err(Error::Config(
            "sequence_length and sequences_per_artwork must be at least 1".into(),
        ));
    }
    if let Some(bad) = artists.iter().find(|a| a.vocabulary.is_empty()) {
        return Err(Error::Data(format!(
            "artist {} has an empty vocabulary",
            bad.artist_id
        )));
    }
    Ok(ArtistSequences {
        artists,
        sequence_length,
        per_artwork: sequences_per_artwork,
        rng: rng(seed),
        artist: 0,
        emitted: 0,
        pool: Vec::new(),
    })
}

/// `sequences_per_artwork × artwork_count` samples of `sequence_length` concepts per
/// artist: without replacement when the vocabulary is large enough, with replacement
/// otherwise.
pub fn build_artist_dataset(
    artists: &[ArtistRecord],
    sequence_length: usize,
    sequences_per_artwork: usize,
    seed: u64,
) -> Result<SequenceDataset> {
    let sequences =
        artist_sequences(artists, sequence_length, sequences_per_artwork, seed)?.collect();
    Ok(SequenceDataset {
        sequences,
        seed,
        params: vec![
            ("origin".into(), "artist".into()),
            ("sequence_length".into(), sequence_length.to_string()),
            (
                "sequences_per_artwork".into(),
                sequences_per_artwork.to_string(),
            ),
        ],
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn art(id: &str, artist: &str, concepts: &[u32]) -> ArtworkRecord {
        ArtworkRecord {
            artwork_id: id.into(),
            artist_id: artist.into(),
            concepts: concepts.iter().map(|&c| ConceptId(c)).collect(),
        }
    }

    #[test]
    fn single_concept_artwork() {
        let ds = build_artwork_dataset(&[art("w", "k", &[4])], 100, 1).unwrap();
        assert_eq!(ds.len(), 100);
        assert!(ds.sequences.iter().all(|s| s.tokens == [ConceptId(4)]));
    }

    #[test]
    fn empty_artwork_is_named_in_error() {
        let err = build_artwork_dataset(&[art("bad-7", "k", &[])], 3, 1).unwrap_err();
        assert!(matches!(err, Error::Data(msg) if msg.contains("bad-7")));
    }

    #[test]
    fn artist_counts_and_full_permutations() {
        let artist = ArtistRecord {
            artist_id: "k".into(),
            artwork_count: 3,
            vocabulary: (0..10).map(ConceptId).collect(),
        };
        let ds = build_artist_dataset(std::slice::from_ref(&artist), 10, 100, 9).unwrap();
        assert_eq!(ds.len(), 300);
        for s in &ds.sequences {
            let set: BTreeSet<_> = s.tokens.iter().copied().collect();
            assert_eq!(set, artist.vocabulary);
        }
    }

    #[test]
    fn small_vocabulary_samples_with_replacement() {
        let artist = ArtistRecord {
            artist_id: "k".into(),
            artwork_count: 1,
            vocabulary: [ConceptId(1), ConceptId(2)].into(),
        };
        let ds = build_artist_dataset(&[artist], 10, 5, 3).unwrap();
        assert!(ds.sequences.iter().all(|s| s.len() == 10));
    }

    #[test]
    fn empty_artist_vocabulary_is_error() {
        let artist = ArtistRecord {
            artist_id: "nobody".into(),
            artwork_count: 1,
            vocabulary: BTreeSet::new(),
        };
        assert!(matches!(
            build_artist_dataset(&[artist], 10, 1, 0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let vocab = Vocabulary::from_labels(["a", "b", "c"]).unwrap();
        let ds = build_artwork_dataset(&[art("w", "k", &[0, 1, 2])], 4, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.txt");
        ds.save(&path, &vocab).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# seed=11 origin=artwork permutations_per_artwork=4\n"));
        let back = SequenceDataset::load(&path, &vocab).unwrap();
        assert_eq!(back, ds);
    }
}
