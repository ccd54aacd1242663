use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::sync::{Arc, OnceLock};

use cas_core::agent::{
    read_run_log, replay_novelty, Agent, Backends, CasInspirer, Compositor, GenerationRecord, Inspiration,
    RandomInspirer, RunConfig, RunDir, StubCompositor,
};
use cas_core::bridge::{ComposeRequest, ComposeResponse};
use cas_core::embed::EmbeddingCache;
use cas_core::fixture::{synthetic_fixture, FixtureSpec};
use cas_core::sampler::{CasConfig, InspirationProposal, Provenance};
use cas_core::scorer::{CooccurrenceModel, SequenceScorer};
use cas_core::vocab::Vocabulary;
use cas_core::Error;

struct Models {
    vocab: Arc<Vocabulary>,
    coherence: Arc<dyn SequenceScorer>,
    context: Arc<dyn SequenceScorer>,
}

fn models() -> &'static Models {
    static MODELS: OnceLock<Models> = OnceLock::new();
    MODELS.get_or_init(|| {
        let fixture = synthetic_fixture(&FixtureSpec::default()).unwrap();
        let (coherence, context): (CooccurrenceModel, CooccurrenceModel) = fixture.train_models(0).unwrap();
        Models {
            vocab: Arc::new(fixture.vocabulary),
            coherence: Arc::new(coherence),
            context: Arc::new(context),
        }
    })
}

fn cas_backends(seed: u64) -> Backends {
    let m = models();
    let inspirer = CasInspirer::new(m.vocab.clone(), m.coherence.clone(), m.context.clone(), CasConfig::default());
    Backends::stub(Some(Box::new(inspirer)), seed)
}

fn random_backends(seed: u64) -> Backends {
    Backends::stub(Some(Box::new(RandomInspirer::new(models().vocab.clone()))), seed)
}

fn config(generations: u32, patience: u32, preserve: bool) -> RunConfig {
    let mut c = RunConfig::new(&["m0_00", "m1_00", "bridge_00"], generations);
    c.patience = patience;
    c.preserve_original = preserve;
    c.seed = 3;
    c
}

/// Independent re-statement of the pool rules, driven by the logged records.
fn check_against_pool_oracle(records: &[GenerationRecord], seeds: &[String], patience: u32, preserve: bool) {
    let mut active: Vec<String> = seeds.to_vec();
    let mut expired: BTreeSet<String> = BTreeSet::new();
    let mut failures: BTreeMap<String, u32> = BTreeMap::new();
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for r in records {
        assert_eq!(r.pool_before, active, "pool before generation {}", r.generation);
        for c in &r.new_concepts {
            assert!(!active.contains(c) && !expired.contains(c), "{c} re-added");
            active.push(c.clone());
            failures.insert(c.clone(), 0);
        }
        if r.is_failed() {
            assert!(r.removed_concepts.is_empty());
            continue;
        }
        let novelty = r.novelty_combined.unwrap();
        let mut removed = Vec::new();
        for c in &r.concepts_used {
            assert!(active.contains(c), "generation {} used inactive {c}", r.generation);
            let improved = best.get(c).is_none_or(|&b| novelty > b);
            if improved {
                best.insert(c.clone(), novelty);
                failures.insert(c.clone(), 0);
            } else {
                *failures.entry(c.clone()).or_default() += 1;
            }
            let protected = preserve && seeds.contains(c);
            if failures[c] >= patience && !protected {
                active.retain(|a| a != c);
                expired.insert(c.clone());
                removed.push(c.clone());
            }
        }
        assert_eq!(r.removed_concepts, removed, "removed at generation {}", r.generation);
    }
}

#[test]
fn stub_runs_follow_the_pool_oracle() {
    for (patience, preserve) in [(1, false), (2, false), (2, true), (5, false)] {
        for backends in [cas_backends(3), random_backends(3)] {
            let cfg = config(20, patience, preserve);
            let mut agent = Agent::new(cfg.clone(), backends).unwrap();
            let records = agent.run().unwrap().to_vec();
            assert_eq!(records.len(), 20);
            assert_eq!(records.iter().map(|r| r.generation).collect::<Vec<_>>(), (1..=20).collect::<Vec<_>>());
            check_against_pool_oracle(&records, &cfg.seed_concepts, patience, preserve);
            if preserve {
                assert!(cfg.seed_concepts.iter().all(|s| agent.pool().is_active(s)));
            }
            if patience == 1 && !preserve {
                assert!(!agent.pool().expired().is_empty(), "patience 1 should expire something");
            }
            assert_eq!(records[0].novelty_combined, Some(0.0));
            for r in &records {
                let n = r.novelty().unwrap();
                assert!((n.combined - (n.text + n.image) / 2.0).abs() <= 1e-12);
                assert_eq!(r.new_concepts.len(), 1);
            }
        }
    }
}

#[test]
fn runs_are_deterministic_and_seed_sensitive() {
    let a = Agent::new(config(10, 5, false), cas_backends(3)).unwrap().run().unwrap().to_vec();
    let b = Agent::new(config(10, 5, false), cas_backends(3)).unwrap().run().unwrap().to_vec();
    assert_eq!(a, b);
    let mut other = config(10, 5, false);
    other.seed = 4;
    let c = Agent::new(other, cas_backends(3)).unwrap().run().unwrap().to_vec();
    assert_ne!(
        a.iter().map(|r| &r.new_concepts).collect::<Vec<_>>(),
        c.iter().map(|r| &r.new_concepts).collect::<Vec<_>>()
    );
    assert!(a.iter().all(|r| r.provenance == Some(Provenance::Cas)));
}

#[test]
fn persisted_run_replays_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = RunDir::new(dir.path().join("run"));
    let mut agent = Agent::create(config(10, 2, false), cas_backends(3), run_dir.clone()).unwrap();
    let records = agent.run().unwrap().to_vec();
    drop(agent);

    let logged = read_run_log(&run_dir.log()).unwrap();
    assert_eq!(logged, records);
    let cache = EmbeddingCache::open(&run_dir.embeddings()).unwrap();
    let replayed = replay_novelty(&logged, &cache).unwrap();
    for (r, n) in logged.iter().zip(&replayed) {
        let n = n.unwrap();
        assert_eq!(r.novelty_text.unwrap().to_bits(), n.text.to_bits());
        assert_eq!(r.novelty_image.unwrap().to_bits(), n.image.to_bits());
        assert_eq!(r.novelty_combined.unwrap().to_bits(), n.combined.to_bits());
    }
    for r in &logged {
        assert!(run_dir.images().join(format!("{}.bin", r.image_ref.as_ref().unwrap())).exists());
    }

    // Reopening verifies the log against a full replay.
    let resumed = Agent::resume(run_dir, cas_backends(3)).unwrap();
    assert!(resumed.is_finished());
    assert_eq!(resumed.records(), &records[..]);
}

#[test]
fn resume_after_interrupted_append_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let whole = RunDir::new(dir.path().join("whole"));
    let want = Agent::create(config(10, 2, false), cas_backends(3), whole.clone())
        .unwrap()
        .run()
        .unwrap()
        .to_vec();

    let split = RunDir::new(dir.path().join("split"));
    let mut agent = Agent::create(config(10, 2, false), cas_backends(3), split.clone()).unwrap();
    for _ in 0..4 {
        agent.step(Inspiration::Backend).unwrap();
    }
    drop(agent);
    let mut log = fs::OpenOptions::new().append(true).open(split.log()).unwrap();
    log.write_all(br#"{"generation":5,"pool_before":["m0_"#).unwrap();
    drop(log);

    let mut agent = Agent::resume(split.clone(), cas_backends(3)).unwrap();
    assert_eq!(agent.next_generation(), 5);
    let got = agent.run().unwrap().to_vec();
    assert_eq!(got, want);
    assert_eq!(read_run_log(&split.log()).unwrap(), want);
    assert_eq!(fs::read(split.embeddings()).unwrap(), fs::read(whole.embeddings()).unwrap());
    assert_eq!(fs::read(split.config()).unwrap(), fs::read(whole.config()).unwrap());
}

#[test]
fn existing_run_is_not_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = RunDir::new(dir.path());
    Agent::create(config(2, 5, false), cas_backends(3), run_dir.clone()).unwrap().run().unwrap();
    assert!(matches!(
        Agent::create(config(2, 5, false), cas_backends(3), run_dir),
        Err(Error::Config(_))
    ));
}

/// Fails every request for one generation.
struct FailingAt(u32);

impl Compositor for FailingAt {
    fn compose(&self, request: &ComposeRequest) -> cas_core::Result<ComposeResponse> {
        if request.state.generation == self.0 {
            Err(Error::Bridge("compositor unavailable".into()))
        } else {
            StubCompositor.compose(request)
        }
    }
}

#[test]
fn failed_generation_is_logged_and_skipped_by_novelty() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = RunDir::new(dir.path());
    let failing = || Backends {
        compositor: Box::new(FailingAt(3)),
        ..random_backends(3)
    };
    let mut agent = Agent::create(config(6, 1, false), failing(), run_dir.clone()).unwrap();
    let records = agent.run().unwrap().to_vec();
    let failed = &records[2];
    assert!(failed.is_failed());
    assert!(failed.error.as_deref().unwrap().contains("compositor unavailable"));
    assert_eq!(failed.novelty(), None);
    assert!(failed.removed_concepts.is_empty() && failed.concepts_used.is_empty());
    assert_eq!(failed.new_concepts.len(), 1, "the inspired concept still joins the pool");
    check_against_pool_oracle(&records, &config(6, 1, false).seed_concepts, 1, false);

    let cache = EmbeddingCache::open(&run_dir.embeddings()).unwrap();
    let replayed = replay_novelty(&records, &cache).unwrap();
    assert_eq!(replayed[2], None);
    drop(agent);
    let resumed = Agent::resume(run_dir, failing()).unwrap();
    assert_eq!(resumed.records(), &records[..]);
}

#[test]
fn provided_and_skipped_inspiration() {
    let mut agent = Agent::new(config(3, 5, false), Backends::stub(None, 0)).unwrap();
    assert!(matches!(agent.step(Inspiration::Backend), Err(Error::Argument(_))));
    let pooled = InspirationProposal {
        concept: "m0_00".into(),
        concept_id: None,
        provenance: Provenance::Human,
        candidate_trace: None,
    };
    assert!(agent.step(Inspiration::Provided(pooled)).is_err());
    assert_eq!(agent.next_generation(), 1, "rejected input does not consume a generation");

    let fresh = InspirationProposal {
        concept: "Paper Lantern".into(),
        concept_id: None,
        provenance: Provenance::Human,
        candidate_trace: None,
    };
    let r = agent.step(Inspiration::Provided(fresh)).unwrap();
    assert_eq!(r.new_concepts, ["paper_lantern"]);
    assert_eq!(r.provenance, Some(Provenance::Human));
    let r = agent.step(Inspiration::Skip).unwrap();
    assert!(r.new_concepts.is_empty() && r.provenance.is_none());
    agent.step(Inspiration::Skip).unwrap();
    assert!(agent.is_finished());
    assert!(matches!(agent.step(Inspiration::Skip), Err(Error::Argument(_))));
}
