//! Synthetic artwork corpus with artist and movement structure, for tests and demos.
//!
//! Concepts belong to movement clusters (`m<k>_<j>`) plus a shared set of bridging
//! concepts (`bridge_<j>`). Each artist works within one movement from a small
//! personal palette, so artist vocabularies are narrow and overlapping.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{
    build_artist_dataset, build_artwork_dataset, DEFAULT_PERMUTATIONS_PER_ARTWORK,
    DEFAULT_SEQUENCES_PER_ARTWORK, DEFAULT_SEQUENCE_LENGTH,
};
use crate::scorer::{CooccurrenceModel, DEFAULT_ALPHA, DEFAULT_LAMBDA};
use crate::util::{derive_seed, rng};
use crate::vocab::{build_artist_records, ArtistRecord, ArtworkRecord, Vocabulary};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub artists: usize,
    pub artworks: usize,
    pub movements: usize,
    /// Concepts per movement cluster.
    pub cluster_size: usize,
    pub bridging: usize,
    /// Movement concepts in each artist's palette.
    pub palette_size: usize,
    /// Bridging concepts in each artist's palette.
    pub palette_bridging: usize,
    pub min_concepts: usize,
    pub max_concepts: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    /// 20 artists, 200 artworks, 100 concepts.
    fn default() -> Self {
        Self {
            artists: 20,
            artworks: 200,
            movements: 5,
            cluster_size: 16,
            bridging: 20,
            palette_size: 8,
            palette_bridging: 2,
            min_concepts: 3,
            max_concepts: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFixture {
    pub vocabulary: Vocabulary,
    pub artworks: Vec<ArtworkRecord>,
    pub artists: Vec<ArtistRecord>,
}

impl FixtureSpec {
    pub fn vocabulary_size(&self) -> usize {
        self.movements * self.cluster_size + self.bridging
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("fixture: {m}")));
        if self.artists == 0 || self.movements == 0 || self.artworks < self.artists {
            return bad("need at least one artist, one movement and one artwork per artist");
        }
        if self.palette_size > self.cluster_size || self.palette_bridging > self.bridging {
            return bad("palette larger than its source cluster");
        }
        if self.min_concepts == 0 || self.min_concepts > self.max_concepts {
            return bad("invalid concepts-per-artwork range");
        }
        if self.max_concepts > self.palette_size + self.palette_bridging {
            return bad("artworks cannot have more concepts than the palette");
        }
        Ok(())
    }
}

/// Generate the fixture deterministically from `spec.seed`.
pub fn synthetic_fixture(spec: &FixtureSpec) -> Result<SyntheticFixture> {
    spec.validate()?;
    let mut labels = Vec::with_capacity(spec.vocabulary_size());
    for m in 0..spec.movements {
        for j in 0..spec.cluster_size {
            labels.push(format!("m{m}_{j:02}"));
        }
    }
    for j in 0..spec.bridging {
        labels.push(format!("bridge_{j:02}"));
    }
    let vocabulary = Vocabulary::from_labels(&labels)?;
    let id = |label: &str| vocabulary.id(label).expect("fixture label");

    let mut r = rng(spec.seed);
    let palettes: Vec<Vec<String>> = (0..spec.artists)
        .map(|a| {
            let m = a % spec.movements;
            let mut cluster: Vec<usize> = (0..spec.cluster_size).collect();
            cluster.shuffle(&mut r);
            let mut bridges: Vec<usize> = (0..spec.bridging).collect();
            bridges.shuffle(&mut r);
            cluster[..spec.palette_size]
                .iter()
                .map(|j| format!("m{m}_{j:02}"))
                .chain(bridges[..spec.palette_bridging].iter().map(|j| format!("bridge_{j:02}")))
                .collect()
        })
        .collect();

    let mut artworks = Vec::with_capacity(spec.artworks);
    for w in 0..spec.artworks {
        let a = w % spec.artists;
        let k = r.gen_range(spec.min_concepts..=spec.max_concepts);
        let concepts: BTreeSet<_> = palettes[a]
            .choose_multiple(&mut r, k)
            .map(|l| id(l))
            .collect();
        artworks.push(ArtworkRecord {
            artwork_id: format!("artwork_{w:03}"),
            artist_id: format!("artist_{a:02}"),
            concepts,
        });
    }
    let artists = build_artist_records(&artworks);
    Ok(SyntheticFixture {
        vocabulary,
        artworks,
        artists,
    })
}

impl SyntheticFixture {
    /// Coherence and context models trained with the default dataset sizes.
    pub fn train_models(&self, seed: u64) -> Result<(CooccurrenceModel, CooccurrenceModel)> {
        let artwork_data =
            build_artwork_dataset(&self.artworks, DEFAULT_PERMUTATIONS_PER_ARTWORK, derive_seed(seed, 0))?;
        let artist_data = build_artist_dataset(
            &self.artists,
            DEFAULT_SEQUENCE_LENGTH,
            DEFAULT_SEQUENCES_PER_ARTWORK,
            derive_seed(seed, 1),
        )?;
        let coherence = CooccurrenceModel::train(
            &self.vocabulary,
            artwork_data.iter_tokens(),
            DEFAULT_ALPHA,
            DEFAULT_LAMBDA,
        )?;
        let context = CooccurrenceModel::train(
            &self.vocabulary,
            artist_data.iter_tokens(),
            DEFAULT_ALPHA,
            DEFAULT_LAMBDA,
        )?;
        Ok((coherence, context))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape() {
        let f = synthetic_fixture(&FixtureSpec::default()).unwrap();
        assert_eq!(f.vocabulary.len(), 100);
        assert_eq!(f.artworks.len(), 200);
        assert_eq!(f.artists.len(), 20);
        for art in &f.artworks {
            assert!((3..=5).contains(&art.concepts.len()));
        }
        for artist in &f.artists {
            assert!(artist.vocabulary.len() <= 10);
        }
        let again = synthetic_fixture(&FixtureSpec::default()).unwrap();
        assert_eq!(again.artworks, f.artworks);
    }
}
