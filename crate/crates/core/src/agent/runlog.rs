use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::novelty::{compute_novelty, Novelty, NoveltyHistory};
use crate::embed::{content_key, EmbeddingCache, EmbeddingKind};
use crate::sampler::Provenance;
use crate::{Error, Result};

/// One generation of an agent run, as stored in the run log.
///
/// Failed generations keep whatever was produced before the failure, carry no
/// novelty and set `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u32,
    pub pool_before: Vec<String>,
    pub new_concepts: Vec<String>,
    pub concepts_used: Vec<String>,
    pub prompt: String,
    pub name: String,
    pub thought: String,
    pub image_ref: Option<String>,
    pub novelty_text: Option<f64>,
    pub novelty_image: Option<f64>,
    pub novelty_combined: Option<f64>,
    pub removed_concepts: Vec<String>,
    pub provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GenerationRecord {
    pub fn is_failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn novelty(&self) -> Option<Novelty> {
        Some(Novelty {
            text: self.novelty_text?,
            image: self.novelty_image?,
            combined: self.novelty_combined?,
        })
    }
}

/// Append-only JSON Lines writer; every record is flushed and synced before returning.
#[derive(Debug)]
pub struct RunLogWriter {
    file: File,
}

impl RunLogWriter {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }

    pub fn append(&mut self, record: &GenerationRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}

/// Read a run log. A trailing partial line (an interrupted append) is ignored.
pub fn read_run_log(path: &Path) -> Result<Vec<GenerationRecord>> {
    let text = fs::read_to_string(path)?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut records = Vec::new();
    for (i, line) in BufReader::new(complete.as_bytes()).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GenerationRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        records.push(record);
    }
    Ok(records)
}

/// Recompute every successful generation's novelty from cached embeddings.
///
/// Entries for failed generations are `None`.
pub fn replay_novelty(records: &[GenerationRecord], cache: &EmbeddingCache) -> Result<Vec<Option<Novelty>>> {
    let mut history = NoveltyHistory::default();
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        if record.is_failed() {
            out.push(None);
            continue;
        }
        let text_key = content_key(EmbeddingKind::Text, record.prompt.as_bytes());
        let image_ref = record.image_ref.as_deref().ok_or_else(|| {
            Error::Data(format!("generation {} has no image_ref", record.generation))
        })?;
        let image_key = format!("image:{image_ref}");
        let missing = |key: &str| Error::Data(format!("embedding {key} missing from cache"));
        let text = cache.get(&text_key).ok_or_else(|| missing(&text_key))?;
        let image = cache.get(&image_key).ok_or_else(|| missing(&image_key))?;
        out.push(Some(compute_novelty(&text, &image, &history)?));
        history.push(text, image);
    }
    Ok(out)
}

/// File layout of a persisted run.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn log(&self) -> PathBuf {
        self.root.join("run.jsonl")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings.jsonl")
    }

    pub fn images(&self) -> PathBuf {
        self.root.join("images")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(generation: u32) -> GenerationRecord {
        GenerationRecord {
            generation,
            pool_before: vec!["moon".into()],
            new_concepts: vec![],
            concepts_used: vec!["moon".into()],
            prompt: "p".into(),
            name: "n".into(),
            thought: "t".into(),
            image_ref: Some("abc".into()),
            novelty_text: Some(0.0),
            novelty_image: Some(0.0),
            novelty_combined: Some(0.0),
            removed_concepts: vec![],
            provenance: None,
            error: None,
        }
    }

    #[test]
    fn field_names_are_exact() {
        let v = serde_json::to_value(record(1)).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut expected = vec![
            "generation",
            "pool_before",
            "new_concepts",
            "concepts_used",
            "prompt",
            "name",
            "thought",
            "image_ref",
            "novelty_text",
            "novelty_image",
            "novelty_combined",
            "removed_concepts",
            "provenance",
        ];
        let mut keys = keys;
        keys.sort();
        expected.sort();
        assert_eq!(keys, expected);
    }

    #[test]
    fn partial_tail_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut w = RunLogWriter::open(&path).unwrap();
        w.append(&record(1)).unwrap();
        w.append(&record(2)).unwrap();
        drop(w);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"generation\": 3, \"pool_bef").unwrap();
        let records = read_run_log(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1], record(2));
    }
}
