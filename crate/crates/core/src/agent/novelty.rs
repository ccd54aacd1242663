use serde::{Deserialize, Serialize};

use crate::embed::{cosine, EmbeddingKind, EmbeddingVector};
use crate::{Error, Result};

/// Text, image and combined novelty of one generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Novelty {
    pub text: f64,
    pub image: f64,
    pub combined: f64,
}

impl Novelty {
    pub fn new(text: f64, image: f64) -> Self {
        Self {
            text,
            image,
            combined: (text + image) / 2.0,
        }
    }
}

/// Embeddings of all previously scored generations.
#[derive(Debug, Clone, Default)]
pub struct NoveltyHistory {
    text: Vec<EmbeddingVector>,
    image: Vec<EmbeddingVector>,
}

impl NoveltyHistory {
    pub fn push(&mut self, text: EmbeddingVector, image: EmbeddingVector) {
        self.text.push(text);
        self.image.push(image);
    }

    pub fn len(&self) -> usize {
        self.text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

/// `1 − max cosine` against the history, 0 when the history is empty.
fn modality_novelty(current: &EmbeddingVector, history: &[EmbeddingVector]) -> Result<f64> {
    let mut best: Option<f64> = None;
    for prior in history {
        let c = cosine(current, prior)?;
        best = Some(best.map_or(c, |b: f64| b.max(c)));
    }
    Ok(best.map_or(0.0, |b| 1.0 - b))
}

/// Novelty of a prompt/image pair relative to all earlier generations.
pub fn compute_novelty(
    prompt_embedding: &EmbeddingVector,
    image_embedding: &EmbeddingVector,
    history: &NoveltyHistory,
) -> Result<Novelty> {
    if prompt_embedding.kind() != EmbeddingKind::Text {
        return Err(Error::Embedding("prompt embedding must be a text embedding".into()));
    }
    if image_embedding.kind() != EmbeddingKind::Image {
        return Err(Error::Embedding("image embedding must be an image embedding".into()));
    }
    let text = modality_novelty(prompt_embedding, &history.text)?;
    let image = modality_novelty(image_embedding, &history.image)?;
    Ok(Novelty::new(text, image))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EmbeddingSource;

    fn v(kind: EmbeddingKind, values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec(), kind, EmbeddingSource::Deterministic).unwrap()
    }

    #[test]
    fn empty_history_is_zero() {
        let n = compute_novelty(
            &v(EmbeddingKind::Text, &[1.0, 0.0]),
            &v(EmbeddingKind::Image, &[0.0, 1.0]),
            &NoveltyHistory::default(),
        )
        .unwrap();
        assert_eq!(n, Novelty { text: 0.0, image: 0.0, combined: 0.0 });
    }

    #[test]
    fn duplicate_and_orthogonal() {
        let mut h = NoveltyHistory::default();
        h.push(v(EmbeddingKind::Text, &[1.0, 0.0]), v(EmbeddingKind::Image, &[1.0, 0.0]));
        let n = compute_novelty(
            &v(EmbeddingKind::Text, &[1.0, 0.0]),
            &v(EmbeddingKind::Image, &[0.0, 1.0]),
            &h,
        )
        .unwrap();
        assert_eq!(n.text, 0.0);
        assert_eq!(n.image, 1.0);
        assert_eq!(n.combined, 0.5);
    }

    #[test]
    fn kinds_are_checked() {
        let t = v(EmbeddingKind::Text, &[1.0]);
        assert!(compute_novelty(&t, &t, &NoveltyHistory::default()).is_err());
    }
}
