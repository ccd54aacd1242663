use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::agent::GenerationRecord;
use crate::embed::{cosine, Embedder, EmbeddingVector};
use crate::{Error, Result};

pub const DEFAULT_REPETITION_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRepetition {
    pub run_id: String,
    /// Concepts that could be embedded.
    pub total: usize,
    pub repeated: usize,
    pub rate: f64,
}

/// Concepts linked across runs by above-threshold similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionCluster {
    pub concepts: Vec<String>,
    pub runs: Vec<String>,
    pub occurrences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedConcept {
    pub run_id: String,
    pub concept: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub threshold: f64,
    pub per_run: Vec<RunRepetition>,
    /// Mean of the per-run rates over runs with at least one embedded concept.
    pub mean_rate: f64,
    /// Largest clusters first.
    pub clusters: Vec<RepetitionCluster>,
    pub excluded: Vec<ExcludedConcept>,
}

/// Concepts each run added to its pool, in order, with runs labeled by id.
pub fn run_concepts(run_id: &str, records: &[GenerationRecord]) -> (String, Vec<String>) {
    (
        run_id.to_owned(),
        records.iter().flat_map(|r| r.new_concepts.iter().cloned()).collect(),
    )
}

/// Read `run_id<TAB>concept` lines, grouping concepts by run in first-seen order.
pub fn read_run_concepts<R: BufRead>(reader: R) -> Result<Vec<(String, Vec<String>)>> {
    let mut runs: Vec<(String, Vec<String>)> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (run, concept) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("line {}: expected run_id<TAB>concept", n + 1)))?;
        match runs.iter_mut().find(|(r, _)| r == run) {
            Some((_, concepts)) => concepts.push(concept.trim().to_owned()),
            None => runs.push((run.to_owned(), vec![concept.trim().to_owned()])),
        }
    }
    Ok(runs)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Cross-run concept repetition.
///
/// A concept of one run is repeated when some concept of a different run has cosine
/// similarity strictly above `threshold`. Concepts that fail to embed are excluded
/// and listed in the report.
pub fn repetition_rate(
    runs: &[(String, Vec<String>)],
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<RepetitionReport> {
    if runs.len() < 2 {
        return Err(Error::Argument("repetition analysis needs at least two runs".into()));
    }
    let mut items: Vec<(usize, &str, EmbeddingVector)> = Vec::new();
    let mut excluded = Vec::new();
    for (r, (run_id, concepts)) in runs.iter().enumerate() {
        for concept in concepts {
            match embedder.embed_text(concept) {
                Ok(v) => items.push((r, concept.as_str(), v)),
                Err(e) => excluded.push(ExcludedConcept {
                    run_id: run_id.clone(),
                    concept: concept.clone(),
                    reason: e.to_string(),
                }),
            }
        }
    }

    let mut repeated = vec![false; items.len()];
    let mut parent: Vec<usize> = (0..items.len()).collect();
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            if items[i].0 == items[j].0 {
                continue;
            }
            if cosine(&items[i].2, &items[j].2)? > threshold {
                repeated[i] = true;
                repeated[j] = true;
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }

    let per_run: Vec<RunRepetition> = runs
        .iter()
        .enumerate()
        .map(|(r, (run_id, _))| {
            let mine: Vec<usize> = (0..items.len()).filter(|&i| items[i].0 == r).collect();
            let rep = mine.iter().filter(|&&i| repeated[i]).count();
            RunRepetition {
                run_id: run_id.clone(),
                total: mine.len(),
                repeated: rep,
                rate: if mine.is_empty() { 0.0 } else { rep as f64 / mine.len() as f64 },
            }
        })
        .collect();
    let counted: Vec<f64> = per_run.iter().filter(|r| r.total > 0).map(|r| r.rate).collect();
    let mean_rate = if counted.is_empty() {
        0.0
    } else {
        counted.iter().sum::<f64>() / counted.len() as f64
    };

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in (0..items.len()).filter(|&i| repeated[i]) {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut clusters: Vec<RepetitionCluster> = groups
        .into_values()
        .map(|members| {
            let mut concepts: Vec<String> = members.iter().map(|&i| items[i].1.to_owned()).collect();
            concepts.sort();
            concepts.dedup();
            let mut run_ids: Vec<String> = members.iter().map(|&i| runs[items[i].0].0.clone()).collect();
            run_ids.sort();
            run_ids.dedup();
            RepetitionCluster {
                concepts,
                runs: run_ids,
                occurrences: members.len(),
            }
        })
        .collect();
    clusters.sort_by(|a, b| b.occurrences.cmp(&a.occurrences).then_with(|| a.concepts.cmp(&b.concepts)));

    Ok(RepetitionReport {
        threshold,
        per_run,
        mean_rate,
        clusters,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::TableEmbedder;

    #[test]
    fn identical_labels_repeat_and_failures_are_excluded() {
        let mut e = TableEmbedder::new(2);
        e.insert("moon", vec![1.0, 0.0]).unwrap();
        e.insert("sun", vec![0.0, 1.0]).unwrap();
        let runs = vec![
            ("a".to_owned(), vec!["moon".to_owned(), "sun".to_owned()]),
            ("b".to_owned(), vec!["moon".to_owned(), "ghost".to_owned()]),
        ];
        let r = repetition_rate(&runs, &e, 0.99).unwrap();
        assert_eq!(r.per_run[0].rate, 0.5);
        assert_eq!(r.per_run[1].rate, 1.0);
        assert_eq!(r.mean_rate, 0.75);
        assert_eq!(r.excluded.len(), 1);
        assert_eq!(r.clusters[0].concepts, ["moon"]);
        assert_eq!(r.clusters[0].occurrences, 2);
    }

    #[test]
    fn within_run_similarity_does_not_count() {
        let mut e = TableEmbedder::new(1);
        e.insert("x", vec![1.0]).unwrap();
        e.insert("y", vec![2.0]).unwrap();
        let runs = vec![
            ("a".to_owned(), vec!["x".to_owned(), "y".to_owned()]),
            ("b".to_owned(), vec![]),
        ];
        let r = repetition_rate(&runs, &e, 0.5).unwrap();
        assert_eq!(r.per_run[0].repeated, 0);
        assert!(repetition_rate(&runs[..1], &e, 0.5).is_err());
    }
}
