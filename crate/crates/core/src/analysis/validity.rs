use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::sampler::{cas_candidates, rank_candidates, CasConfig, RankedCandidate};
use crate::scorer::SequenceScorer;
use crate::util::derive_seed;
use crate::vocab::{ArtistRecord, ArtworkRecord, ConceptId};
use crate::{Error, Result};

/// `min_i |S \ B_i|`; `|S|` when there are no sets.
pub fn min_missing<'a, I>(s: &BTreeSet<ConceptId>, sets: I) -> usize
where
    I: IntoIterator<Item = &'a BTreeSet<ConceptId>>,
{
    sets.into_iter()
        .map(|b| s.difference(b).count())
        .min()
        .unwrap_or(s.len())
}

/// Concepts of `s` missing from the closest single artwork (N_art).
pub fn novelty_vs_artworks(s: &BTreeSet<ConceptId>, artworks: &[ArtworkRecord]) -> usize {
    min_missing(s, artworks.iter().map(|a| &a.concepts))
}

/// Concepts of `s` missing from the closest single artist vocabulary (N_cog).
pub fn novelty_vs_artists(s: &BTreeSet<ConceptId>, artists: &[ArtistRecord]) -> usize {
    min_missing(s, artists.iter().map(|a| &a.vocabulary))
}

/// Both validity measures of one concept sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validity {
    pub n_art: usize,
    pub n_cog: usize,
}

pub fn validity(tokens: &[ConceptId], artworks: &[ArtworkRecord], artists: &[ArtistRecord]) -> Validity {
    let s: BTreeSet<ConceptId> = tokens.iter().copied().collect();
    Validity {
        n_art: novelty_vs_artworks(&s, artworks),
        n_cog: novelty_vs_artists(&s, artists),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub temperatures: Vec<f64>,
    pub betas: Vec<f64>,
    pub n: usize,
    pub max_length: usize,
    pub trials: usize,
    pub seed: u64,
}

impl SweepConfig {
    /// Temperatures 0.1 to 3.1 in steps of 0.3.
    pub fn default_temperatures() -> Vec<f64> {
        (0..=10).map(|i| ((1 + 3 * i) as f64) / 10.0).collect()
    }
}

/// One (temperature, β) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub temperature: f64,
    pub beta: f64,
    pub mean_n_art: Option<f64>,
    pub mean_n_cog: Option<f64>,
    pub baseline_mean_n_art: Option<f64>,
    pub baseline_mean_n_cog: Option<f64>,
    /// Trials that produced a selection.
    pub trials: usize,
    /// Trials where sampling failed.
    pub missing: usize,
}

/// Paired outcome of one sweep trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub cas: Validity,
    pub baseline: Validity,
}

fn top(ranked: &[RankedCandidate]) -> &[ConceptId] {
    &ranked[0].sequence.tokens
}

/// Run one trial: sample candidates once, select with `beta` and with β = 0.
pub fn sweep_trial<C, X>(
    conditioning: &[ConceptId],
    coherence: &C,
    context: &X,
    cfg: &CasConfig,
    artworks: &[ArtworkRecord],
    artists: &[ArtistRecord],
) -> Result<TrialOutcome>
where
    C: SequenceScorer + ?Sized,
    X: SequenceScorer + ?Sized,
{
    let ranked = cas_candidates(conditioning, coherence, context, cfg)?;
    let sequences: Vec<Vec<ConceptId>> = ranked.iter().map(|c| c.sequence.tokens.clone()).collect();
    let nll_coh: Vec<f64> = ranked.iter().map(|c| c.nll_coherence).collect();
    let nll_ctx: Vec<f64> = ranked.iter().map(|c| c.nll_context).collect();
    let baseline = rank_candidates(sequences, &nll_coh, &nll_ctx, 0.0)?;
    Ok(TrialOutcome {
        cas: validity(top(&ranked), artworks, artists),
        baseline: validity(top(&baseline), artworks, artists),
    })
}

fn mean(values: impl Iterator<Item = usize>) -> Option<f64> {
    let (sum, count) = values.fold((0usize, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum as f64 / count as f64)
}

/// Mean N_art / N_cog of CAS selections per (temperature, β), next to the β = 0
/// baseline on the same candidates. Trial `k` of input `i` uses seed
/// `derive_seed(cfg.seed, i * trials + k)` in every cell.
pub fn beta_sweep<C, X>(
    inputs: &[Vec<ConceptId>],
    coherence: &C,
    context: &X,
    cfg: &SweepConfig,
    artworks: &[ArtworkRecord],
    artists: &[ArtistRecord],
) -> Result<Vec<SweepCell>>
where
    C: SequenceScorer + ?Sized,
    X: SequenceScorer + ?Sized,
{
    if inputs.is_empty() || cfg.trials == 0 {
        return Err(Error::Argument("beta sweep needs inputs and at least one trial".into()));
    }
    let mut cells = Vec::new();
    for &temperature in &cfg.temperatures {
        for &beta in &cfg.betas {
            let jobs: Vec<(usize, usize)> = (0..inputs.len())
                .flat_map(|i| (0..cfg.trials).map(move |k| (i, k)))
                .collect();
            let outcomes: Vec<Option<TrialOutcome>> = jobs
                .par_iter()
                .map(|&(i, k)| {
                    let cas = CasConfig {
                        n: cfg.n,
                        beta,
                        temperature,
                        max_length: cfg.max_length,
                        seed: derive_seed(cfg.seed, (i * cfg.trials + k) as u64),
                        ..CasConfig::default()
                    };
                    match sweep_trial(&inputs[i], coherence, context, &cas, artworks, artists) {
                        Ok(o) => Ok(Some(o)),
                        Err(Error::SamplerExhausted(_)) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<_>>()?;
            let ok: Vec<TrialOutcome> = outcomes.iter().flatten().copied().collect();
            cells.push(SweepCell {
                temperature,
                beta,
                mean_n_art: mean(ok.iter().map(|o| o.cas.n_art)),
                mean_n_cog: mean(ok.iter().map(|o| o.cas.n_cog)),
                baseline_mean_n_art: mean(ok.iter().map(|o| o.baseline.n_art)),
                baseline_mean_n_cog: mean(ok.iter().map(|o| o.baseline.n_cog)),
                trials: ok.len(),
                missing: outcomes.len() - ok.len(),
            });
        }
    }
    Ok(cells)
}

/// Write sweep cells as a tab-separated grid; missing means are empty fields.
pub fn write_sweep<W: std::io::Write>(mut out: W, cells: &[SweepCell]) -> Result<()> {
    writeln!(
        out,
        "temperature\tbeta\tmean_n_art\tmean_n_cog\tbaseline_mean_n_art\tbaseline_mean_n_cog\ttrials\tmissing"
    )?;
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in cells {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.temperature,
            c.beta,
            f(c.mean_n_art),
            f(c.mean_n_cog),
            f(c.baseline_mean_n_art),
            f(c.baseline_mean_n_cog),
            c.trials,
            c.missing
        )?;
    }
    Ok(())
}

/// One-sided sign test of paired samples: is `a` larger than `b`?
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    /// P(X ≥ wins) for X ~ Binomial(wins + losses, 1/2); 1 when every pair ties.
    pub p_value: f64,
}

pub fn sign_test(pairs: impl IntoIterator<Item = (f64, f64)>) -> SignTest {
    let (mut wins, mut losses, mut ties) = (0u64, 0u64, 0u64);
    for (a, b) in pairs {
        if a > b {
            wins += 1;
        } else if a < b {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    let n = wins + losses;
    let p_value = if n == 0 || wins == 0 {
        1.0
    } else {
        let binom = Binomial::new(0.5, n).expect("valid binomial");
        binom.sf(wins - 1)
    };
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}
