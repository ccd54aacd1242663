//! Validity metrics, trajectory metrics, cross-run repetition and Bradley–Terry fits.

mod bradley_terry;
mod repetition;
mod trajectory;
mod validity;

pub use bradley_terry::{
    fit_bradley_terry, fit_by_criterion, read_comparisons, significance_stars, Criterion,
    PairwiseComparison, PairwiseTest, SkillEstimate,
};
pub use repetition::{
    read_run_concepts, repetition_rate, run_concepts, ExcludedConcept, RepetitionCluster, RepetitionReport, RunRepetition,
    DEFAULT_REPETITION_THRESHOLD,
};
pub use trajectory::{
    analyze_trajectories, exploration_radius, pooled_thresholds, return_rate,
    return_rate_with_threshold, saturation_generation, trajectory_metrics, ThresholdMode,
    Trajectory, TrajectoryMetrics,
};
pub use validity::{
    beta_sweep, min_missing, novelty_vs_artists, novelty_vs_artworks, sign_test, sweep_trial,
    validity, write_sweep, SignTest, SweepCell, SweepConfig, TrialOutcome, Validity,
};

use serde::{Deserialize, Serialize};

use std::path::Path;

use crate::agent::{read_run_log, GenerationRecord, RunDir};
use crate::embed::{content_key, EmbeddingCache, EmbeddingKind};
use crate::{Error, Result};

/// Prompt-embedding trajectory of a run's successful generations.
pub fn run_trajectory(
    method: &str,
    run_id: &str,
    records: &[GenerationRecord],
    cache: &EmbeddingCache,
) -> Result<Trajectory> {
    let points = records
        .iter()
        .filter(|r| !r.is_failed())
        .map(|r| {
            let key = content_key(EmbeddingKind::Text, r.prompt.as_bytes());
            cache
                .get(&key)
                .map(|v| v.values().to_vec())
                .ok_or_else(|| Error::Data(format!("generation {}: embedding {key} missing", r.generation)))
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(method, run_id, points)
}

/// Records and embedding cache of a persisted run.
pub fn load_run(dir: &Path) -> Result<(Vec<GenerationRecord>, EmbeddingCache)> {
    let dir = RunDir::new(dir);
    Ok((read_run_log(&dir.log())?, EmbeddingCache::open(&dir.embeddings())?))
}

/// Summary of one agent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub generations: usize,
    pub failed: usize,
    pub mean_novelty_text: Option<f64>,
    pub mean_novelty_image: Option<f64>,
    pub mean_novelty_combined: Option<f64>,
    pub concepts_added: usize,
    pub concepts_expired: usize,
    /// Present when the run has at least 3 successful generations.
    pub trajectory: Option<TrajectoryMetrics>,
}

pub fn summarize_run(records: &[GenerationRecord], cache: &EmbeddingCache) -> Result<RunSummary> {
    let ok: Vec<&GenerationRecord> = records.iter().filter(|r| !r.is_failed()).collect();
    let mean = |f: fn(&GenerationRecord) -> Option<f64>| {
        let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let trajectory = if ok.len() >= 3 {
        Some(trajectory_metrics(&run_trajectory("run", "run", records, cache)?, None)?)
    } else {
        None
    };
    Ok(RunSummary {
        generations: records.len(),
        failed: records.len() - ok.len(),
        mean_novelty_text: mean(|r| r.novelty_text),
        mean_novelty_image: mean(|r| r.novelty_image),
        mean_novelty_combined: mean(|r| r.novelty_combined),
        concepts_added: records.iter().map(|r| r.new_concepts.len()).sum(),
        concepts_expired: records.iter().map(|r| r.removed_concepts.len()).sum(),
        trajectory,
    })
}
