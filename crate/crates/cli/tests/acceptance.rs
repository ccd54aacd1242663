//! Acceptance checks. Runs without the test harness and prints one PASS/FAIL line
//! per criterion; exits non-zero if any fails.
//!
//! Set `CAS_UPDATE_GOLDEN=1` to rewrite the golden run log.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use cas_core::agent::{
    compute_novelty, read_run_log, replay_novelty, Agent, Backends, CasInspirer, ConceptPool, NoveltyHistory,
    RunConfig, RunDir, BRIDGE_URL_ENV,
};
use cas_core::analysis::{
    exploration_radius, fit_bradley_terry, novelty_vs_artists, novelty_vs_artworks, repetition_rate, return_rate,
    saturation_generation, sign_test, sweep_trial, validity, Criterion, PairwiseComparison, Trajectory,
    DEFAULT_REPETITION_THRESHOLD,
};
use cas_core::bridge::{BridgeClient, BridgeScorer};
use cas_core::embed::{EmbeddingCache, EmbeddingKind, EmbeddingSource, EmbeddingVector, TableEmbedder};
use cas_core::fixture::{synthetic_fixture, FixtureSpec, SyntheticFixture};
use cas_core::sampler::{cas_sample, cas_score, rank_candidates, CasConfig};
use cas_core::scorer::{CooccurrenceModel, SamplingParams, SequenceScorer};
use cas_core::util::{derive_seed, rng};
use cas_core::vocab::{build_artist_records, ArtistRecord, ArtworkRecord, ConceptId};
use cas_core::Result;
use cas_service::{adapter_router, spawn_background, StubAdapter};

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/run_t10.jsonl");

fn main() {
    let criteria: [(&str, fn()); 11] = [
        ("1 cas score and degeneracies", scoring_formula),
        ("2 rank invariance under NLL shifts", rank_invariance),
        ("3 novelty scoring", novelty_scoring),
        ("4 pool regulation", pool_regulation),
        ("5 validity metrics", validity_metrics),
        ("6 directional cas validity", directional_validity),
        ("7 bradley-terry", bradley_terry),
        ("8 trajectory metrics", trajectory_metrics),
        ("9 repetition anchors", repetition),
        ("10 end-to-end offline run", offline_run),
        ("11 bridge equivalence", bridge_equivalence),
    ];
    panic::set_hook(Box::new(|info| eprintln!("    {info}")));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let ok = panic::catch_unwind(AssertUnwindSafe(check)).is_ok();
        let elapsed = start.elapsed();
        println!("{} criterion {name} ({:.2?})", if ok { "PASS" } else { "FAIL" }, elapsed);
        if !ok {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn within(start: Instant, limit: Duration, what: &str) {
    let elapsed = start.elapsed();
    assert!(elapsed < limit, "{what} took {elapsed:.2?}, limit {limit:?}");
}

fn trained_fixture(spec: &FixtureSpec) -> (SyntheticFixture, CooccurrenceModel, CooccurrenceModel) {
    let fixture = synthetic_fixture(spec).unwrap();
    let (coherence, context) = fixture.train_models(0).unwrap();
    (fixture, coherence, context)
}

fn scoring_formula() {
    let start = Instant::now();
    for n in [2usize, 4, 8, 16] {
        for beta in [0.0, 0.5, 0.85, 1.0] {
            for rc in 1..=n {
                for rx in 1..=n {
                    let direct = (1.0 - beta) * (n as f64 - rc as f64) - beta * (n as f64 - rx as f64);
                    assert_eq!(cas_score(rc, rx, n, beta).unwrap().to_bits(), direct.to_bits());
                }
            }
        }
    }

    // β = 0 keeps the most coherent candidate, β = 1 the least typical one.
    let mut r = rng(1);
    for n in [2usize, 4, 8, 16] {
        for _ in 0..50 {
            let sequences: Vec<Vec<ConceptId>> = (0..n as u32).map(|i| vec![ConceptId(i)]).collect();
            let coh: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..50.0)).collect();
            let ctx: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..50.0)).collect();
            let argmin = |v: &[f64]| (0..n).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
            let argmax = |v: &[f64]| (0..n).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
            let top = |beta| rank_candidates(sequences.clone(), &coh, &ctx, beta).unwrap()[0].sequence.tokens.clone();
            assert_eq!(top(0.0), sequences[argmin(&coh)]);
            assert_eq!(top(1.0), sequences[argmax(&ctx)]);
        }
    }
    within(start, Duration::from_secs(1), "exhaustive score check");
}

/// Adds a constant to every NLL; distributions and samples are untouched.
struct Shifted<'a> {
    inner: &'a CooccurrenceModel,
    shift: f64,
}

impl SequenceScorer for Shifted<'_> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
    fn vocabulary_hash(&self) -> &str {
        self.inner.vocabulary_hash()
    }
    fn next_distribution(&self, context: &[ConceptId]) -> Result<Vec<f64>> {
        self.inner.next_distribution(context)
    }
    fn nll(&self, sequence: &[ConceptId]) -> Result<f64> {
        Ok(self.inner.nll(sequence)? + self.shift)
    }
    fn sample_continuations(&self, context: &[ConceptId], params: &SamplingParams) -> Result<Vec<Vec<ConceptId>>> {
        self.inner.sample_continuations(context, params)
    }
}

fn rank_invariance() {
    let (fixture, coherence, context) = trained_fixture(&FixtureSpec::default());
    let vocab = &fixture.vocabulary;
    let ids: Vec<ConceptId> = (0..vocab.len() as u32).map(ConceptId).collect();
    for trial in 0..100u64 {
        let mut r = rng(derive_seed(2, trial));
        let seeds: Vec<ConceptId> = ids.choose_multiple(&mut r, 2).copied().collect();
        let pool: HashSet<ConceptId> = seeds.iter().copied().collect();
        let cfg = CasConfig {
            n: 64,
            seed: derive_seed(3, trial),
            ..CasConfig::default()
        };
        let shift_coh = r.gen_range(-500.0..500.0);
        let shift_ctx = r.gen_range(-500.0..500.0);
        let run = |coh: &dyn SequenceScorer, ctx: &dyn SequenceScorer| {
            let p = cas_sample(&seeds, coh, ctx, &cfg, &pool, &HashSet::new(), vocab).unwrap();
            let trace = p.candidate_trace.unwrap();
            let ranks: Vec<_> = trace
                .iter()
                .map(|c| (c.sequence.tokens.clone(), c.rank_coherence, c.rank_context))
                .collect();
            (p.concept_id, ranks)
        };
        let base = run(&coherence, &context);
        let coh = Shifted { inner: &coherence, shift: shift_coh };
        let ctx = Shifted { inner: &context, shift: shift_ctx };
        assert_eq!(run(&coh, &context), base, "coherence shift, trial {trial}");
        assert_eq!(run(&coherence, &ctx), base, "context shift, trial {trial}");
        assert_eq!(run(&coh, &ctx), base, "both shifted, trial {trial}");
    }
}

fn novelty_scoring() {
    let v = |values: &[f64], kind| EmbeddingVector::new(values.to_vec(), kind, EmbeddingSource::Deterministic).unwrap();
    let text = |values: &[f64]| v(values, EmbeddingKind::Text);
    let image = |values: &[f64]| v(values, EmbeddingKind::Image);

    let mut history = NoveltyHistory::default();
    let first = compute_novelty(&text(&[1.0, 0.0, 0.0]), &image(&[0.0, 1.0, 0.0]), &history).unwrap();
    assert_eq!((first.text, first.image, first.combined), (0.0, 0.0, 0.0));

    history.push(text(&[1.0, 0.0, 0.0]), image(&[0.0, 1.0, 0.0]));
    history.push(text(&[0.0, 0.0, 1.0]), image(&[1.0, 1.0, 0.0]));
    let dup_text = compute_novelty(&text(&[1.0, 0.0, 0.0]), &image(&[0.0, 0.0, 1.0]), &history).unwrap();
    assert_eq!(dup_text.text, 0.0);
    assert_eq!(dup_text.image, 1.0);
    let dup_image = compute_novelty(&text(&[0.0, 1.0, 0.0]), &image(&[1.0, 1.0, 0.0]), &history).unwrap();
    assert!(dup_image.image.abs() < 1e-12);
    assert_eq!(dup_image.text, 1.0);
    for n in [dup_text, dup_image] {
        assert!((n.combined - (n.text + n.image) / 2.0).abs() <= 1e-12);
    }

    let (fixture, coherence, context) = trained_fixture(&FixtureSpec::default());
    let inspirer = CasInspirer::new(
        Arc::new(fixture.vocabulary),
        Arc::new(coherence),
        Arc::new(context),
        CasConfig::default(),
    );
    let dir = tempfile::tempdir().unwrap();
    let run_dir = RunDir::new(dir.path());
    let mut config = RunConfig::new(&["m0_00", "m1_00"], 12);
    config.seed = 5;
    let records = Agent::create(config, Backends::stub(Some(Box::new(inspirer)), 5), run_dir.clone())
        .unwrap()
        .run()
        .unwrap()
        .to_vec();
    let logged = read_run_log(&run_dir.log()).unwrap();
    assert_eq!(logged, records);
    let cache = EmbeddingCache::open(&run_dir.embeddings()).unwrap();
    for (r, n) in logged.iter().zip(replay_novelty(&logged, &cache).unwrap()) {
        let n = n.unwrap();
        assert_eq!(r.novelty_text.unwrap().to_bits(), n.text.to_bits());
        assert_eq!(r.novelty_image.unwrap().to_bits(), n.image.to_bits());
        assert_eq!(r.novelty_combined.unwrap().to_bits(), n.combined.to_bits());
    }
}

fn pool_regulation() {
    // A concept failing every generation from the start: first use sets its best.
    let mut pool = ConceptPool::new(&["x"], false).unwrap();
    let used = vec!["x".to_string()];
    assert!(pool.filter(&used, 0.5, 5).is_empty());
    for k in 1..=4 {
        assert!(pool.filter(&used, 0.5 - 0.01 * k as f64, 5).is_empty(), "expired after {k} failures");
        assert!(pool.is_active("x"));
    }
    assert_eq!(pool.filter(&used, 0.1, 5), used);
    assert!(pool.is_expired("x"));

    // Hand trace: novelty of the generations that used "y", with the expected failure
    // count after each. Equal novelty does not count as an improvement.
    let trace = [
        (0.50, 0),
        (0.40, 1),
        (0.30, 2),
        (0.60, 0),
        (0.60, 1),
        (0.10, 2),
        (0.20, 3),
        (0.55, 4),
    ];
    let mut pool = ConceptPool::new(&["y", "z"], false).unwrap();
    let used = vec!["y".to_string()];
    for (g, &(novelty, failures)) in trace.iter().enumerate() {
        assert!(pool.filter(&used, novelty, 5).is_empty(), "generation {}", g + 1);
        assert_eq!(pool.failures("y"), Some(failures), "generation {}", g + 1);
        assert_eq!(pool.best_novelty("y"), Some(if g < 3 { 0.5 } else { 0.6 }));
    }
    assert_eq!(pool.filter(&used, 0.0, 5), used, "fifth failure after the reset expires");
    assert!(pool.is_active("z"));

    // Seeds survive arbitrarily long runs of failures when preserved.
    for t in [1u32, 5, 50, 500] {
        let mut pool = ConceptPool::new(&["a", "b"], true).unwrap();
        pool.add("c").unwrap();
        let used: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mut expired_c = false;
        for g in 0..t {
            let active: Vec<String> = used.iter().filter(|c| pool.is_active(c)).cloned().collect();
            let removed = pool.filter(&active, 1.0 / (g + 1) as f64, 5);
            assert!(removed.iter().all(|c| c == "c"));
            expired_c |= !removed.is_empty();
            assert!(pool.is_active("a") && pool.is_active("b"));
        }
        assert_eq!(expired_c, t >= 6, "c expires on its fifth failure, T={t}");
    }
}

/// Random corpus of at most 50 artworks by at most 10 artists.
fn random_corpus(r: &mut impl Rng, concepts: u32) -> Vec<ArtworkRecord> {
    let artworks = r.gen_range(1..=50);
    let artists = r.gen_range(1..=10);
    (0..artworks)
        .map(|w| ArtworkRecord {
            artwork_id: format!("w{w}"),
            artist_id: format!("a{}", r.gen_range(0..artists)),
            concepts: (0..r.gen_range(1..=6)).map(|_| ConceptId(r.gen_range(0..concepts))).collect(),
        })
        .collect()
}

fn brute_force_missing(s: &[ConceptId], sets: &[Vec<ConceptId>]) -> usize {
    sets.iter()
        .map(|set| s.iter().filter(|c| !set.contains(c)).count())
        .min()
        .unwrap()
}

fn brute_force(s: &[ConceptId], artworks: &[ArtworkRecord], artists: &[ArtistRecord]) -> (usize, usize) {
    let works: Vec<Vec<ConceptId>> = artworks.iter().map(|a| a.concepts.iter().copied().collect()).collect();
    let mut by_artist: Vec<Vec<ConceptId>> = Vec::new();
    let mut names: Vec<&str> = Vec::new();
    for a in artworks {
        match names.iter().position(|n| *n == a.artist_id) {
            Some(i) => by_artist[i].extend(a.concepts.iter().copied()),
            None => {
                names.push(&a.artist_id);
                by_artist.push(a.concepts.iter().copied().collect());
            }
        }
    }
    assert_eq!(by_artist.len(), artists.len());
    (brute_force_missing(s, &works), brute_force_missing(s, &by_artist))
}

fn validity_metrics() {
    let mut r = rng(5);
    let small = synthetic_fixture(&FixtureSpec {
        artists: 10,
        artworks: 50,
        ..FixtureSpec::default()
    })
    .unwrap();
    let mut corpora: Vec<(Vec<ArtworkRecord>, u32)> = vec![(small.artworks.clone(), small.vocabulary.len() as u32)];
    corpora.extend((0..20).map(|_| (random_corpus(&mut r, 30), 30)));
    let mut checked = 0;
    for (artworks, concepts) in &corpora {
        let artists = build_artist_records(artworks);
        for _ in 0..500 {
            let tokens: Vec<ConceptId> = (0..r.gen_range(1..=8)).map(|_| ConceptId(r.gen_range(0..*concepts))).collect();
            let s: BTreeSet<ConceptId> = tokens.iter().copied().collect();
            let distinct: Vec<ConceptId> = s.iter().copied().collect();
            let (n_art, n_cog) = brute_force(&distinct, artworks, &artists);
            assert_eq!(novelty_vs_artworks(&s, artworks), n_art);
            assert_eq!(novelty_vs_artists(&s, &artists), n_cog);
            let v = validity(&tokens, artworks, &artists);
            assert_eq!((v.n_art, v.n_cog), (n_art, n_cog));
            assert!(n_cog <= n_art);
            checked += 1;
        }
    }
    assert!(checked >= 10_000);
}

fn directional_validity() {
    let start = Instant::now();
    let (fixture, coherence, context) = trained_fixture(&FixtureSpec::default());
    let ids: Vec<ConceptId> = (0..fixture.vocabulary.len() as u32).map(ConceptId).collect();
    let trials = 200u64;
    let mut pairs = Vec::new();
    for trial in 0..trials {
        let mut r = rng(derive_seed(6, trial));
        let conditioning: Vec<ConceptId> = ids.choose_multiple(&mut r, 2).copied().collect();
        let cfg = CasConfig {
            n: 256,
            beta: 0.85,
            temperature: 2.5,
            seed: derive_seed(7, trial),
            ..CasConfig::default()
        };
        let o = sweep_trial(&conditioning, &coherence, &context, &cfg, &fixture.artworks, &fixture.artists).unwrap();
        pairs.push((o.cas.n_cog as f64, o.baseline.n_cog as f64));
    }
    let mean = |f: fn(&(f64, f64)) -> f64| pairs.iter().map(f).sum::<f64>() / pairs.len() as f64;
    let (cas, baseline) = (mean(|p| p.0), mean(|p| p.1));
    let test = sign_test(pairs.iter().copied());
    println!(
        "    mean N_cog {cas:.3} (beta 0.85) vs {baseline:.3} (beta 0); sign test {}/{}/{} p={:.2e}",
        test.wins, test.losses, test.ties, test.p_value
    );
    assert!(cas > baseline);
    assert!(test.p_value < 0.01);
    within(start, Duration::from_secs(120), "directional validity");
}

fn comparison(a: &str, b: &str, winner: &str) -> PairwiseComparison {
    PairwiseComparison::new(a, b, winner, Criterion::Originality).unwrap()
}

fn bradley_terry() {
    let games = [
        comparison("a", "b", "a"),
        comparison("a", "b", "a"),
        comparison("b", "a", "a"),
        comparison("a", "b", "b"),
    ];
    let fit = fit_bradley_terry(&games).unwrap();
    let diff = fit.theta_of("a").unwrap() - fit.theta_of("b").unwrap();
    assert!((diff - 3f64.ln()).abs() <= 1e-6, "difference {diff}");
    assert_eq!(fit.theta.iter().sum::<f64>(), 0.0);

    let truth: [(&str, f64); 4] = [("cas", 0.6), ("gpt", 0.1), ("free", -0.2), ("random", -0.5)];
    let mut r = rng(7);
    let mut comparisons = Vec::new();
    for _ in 0..5000 {
        let i = r.gen_range(0..truth.len());
        let j = (i + r.gen_range(1..truth.len())) % truth.len();
        let (a, ta) = truth[i];
        let (b, tb) = truth[j];
        let p = 1.0 / (1.0 + (tb - ta).exp());
        comparisons.push(comparison(a, b, if r.gen_bool(p) { a } else { b }));
    }
    let fit = fit_bradley_terry(&comparisons).unwrap();
    assert_eq!(fit.theta.iter().sum::<f64>(), 0.0);
    for (method, theta) in truth {
        let i = fit.methods.iter().position(|m| m == method).unwrap();
        let error = (fit.theta[i] - theta).abs();
        assert!(error <= 3.0 * fit.standard_errors[i], "{method}: error {error}, se {}", fit.standard_errors[i]);
    }
}

fn trajectory(points: Vec<Vec<f64>>) -> Trajectory {
    Trajectory::new("m", "r", points).unwrap()
}

fn trajectory_metrics() {
    // The 95% saturation rule lands on the last point for lines of up to 19 steps.
    for steps in [2usize, 5, 10, 19] {
        let line = trajectory((0..=steps).map(|i| vec![i as f64, 0.0]).collect());
        assert_eq!(exploration_radius(&line), steps as f64);
        assert_eq!(return_rate(&line).unwrap(), 0.0);
        assert_eq!(saturation_generation(&line).unwrap(), steps);
    }

    // Points 0, 1, 1.1, 0.1, 0.2, 1.2, 1.25. Steps 1, .1, 1, .1, 1, .05 have median
    // 0.55. Nearest earlier points: 1, .1, .1, .1, .1, .05, so 5 returns out of 6.
    let ping_pong = trajectory([0.0, 1.0, 1.1, 0.1, 0.2, 1.2, 1.25].iter().map(|&x| vec![x]).collect());
    assert!((return_rate(&ping_pong).unwrap() - 5.0 / 6.0).abs() < 1e-12);
    // Points 0, 2, 0.1, 2.1, 4. Steps 2, 1.9, 2, 1.9 have median 1.95. Nearest
    // earlier: 2 (no), 0.1, 0.1, 1.9, so 3 returns out of 4.
    let drifting = trajectory([0.0, 2.0, 0.1, 2.1, 4.0].iter().map(|&x| vec![x]).collect());
    assert!((return_rate(&drifting).unwrap() - 0.75).abs() < 1e-12);

    let mut r = rng(8);
    for _ in 0..1000 {
        let dim = r.gen_range(1..6);
        let len = r.gen_range(2..30);
        let points: Vec<Vec<f64>> = (0..len).map(|_| (0..dim).map(|_| r.gen_range(-3.0..3.0)).collect()).collect();
        let mut brute = 0.0f64;
        for p in &points {
            let d: f64 = p.iter().zip(&points[0]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            brute = brute.max(d);
        }
        assert!((exploration_radius(&trajectory(points)) - brute).abs() <= 1e-12);
    }
}

fn repetition() {
    let mut e = TableEmbedder::new(4);
    let c = 0.86f64;
    let d = 0.786f64;
    e.insert("bioluminescent forest", vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    e.insert("glowing woodland", vec![c, (1.0 - c * c).sqrt(), 0.0, 0.0]).unwrap();
    e.insert("cyberspace", vec![0.0, 0.0, 1.0, 0.0]).unwrap();
    e.insert("digital frontier", vec![0.0, 0.0, d, (1.0 - d * d).sqrt()]).unwrap();
    let runs = vec![
        ("run_a".to_string(), vec!["bioluminescent forest".to_string(), "cyberspace".to_string()]),
        ("run_b".to_string(), vec!["glowing woodland".to_string(), "digital frontier".to_string()]),
    ];
    let report = repetition_rate(&runs, &e, DEFAULT_REPETITION_THRESHOLD).unwrap();
    assert_eq!(DEFAULT_REPETITION_THRESHOLD, 0.85);
    assert_eq!(report.per_run[0].repeated, 1);
    assert_eq!(report.per_run[1].repeated, 1);
    assert_eq!(report.clusters.len(), 1);
    let cluster: BTreeSet<&str> = report.clusters[0].concepts.iter().map(|s| s.as_str()).collect();
    assert_eq!(cluster, BTreeSet::from(["bioluminescent forest", "glowing woodland"]));
}

fn cas(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_cas"))
        .args(args)
        .env_remove(BRIDGE_URL_ENV)
        .output()
        .unwrap();
    assert!(out.status.success(), "cas {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn offline_run() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = |p: &str| dir.path().join(p).to_str().unwrap().to_owned();
    cas(&["make-fixture", "--seed", "11", "--out", &path("fx")]);
    let config = RunConfig::load(&dir.path().join("fx/run.toml")).unwrap();
    assert_eq!(config.generations, 10);
    assert!(config.backends.bridge_url.is_none());
    cas(&["run", "--config", &path("fx/run.toml"), "--out", &path("run")]);

    let log = fs::read_to_string(dir.path().join("run/run.jsonl")).unwrap();
    let records = read_run_log(&dir.path().join("run/run.jsonl")).unwrap();
    assert_eq!(records.len(), 10);
    assert!(records.iter().all(|r| !r.is_failed() && r.novelty().is_some()));
    assert!(records.iter().any(|r| !r.removed_concepts.is_empty() || !r.new_concepts.is_empty()));

    if std::env::var_os("CAS_UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(Path::new(GOLDEN).parent().unwrap()).unwrap();
        fs::write(GOLDEN, &log).unwrap();
    }
    let golden = fs::read_to_string(GOLDEN).expect("golden run log missing; set CAS_UPDATE_GOLDEN=1");
    assert!(log == golden, "run log differs from {GOLDEN}");

    cas(&["run", "--config", &path("fx/run.toml"), "--out", &path("again")]);
    assert_eq!(fs::read_to_string(dir.path().join("again/run.jsonl")).unwrap(), log);
    within(start, Duration::from_secs(10), "offline run");
}

fn bridge_equivalence() {
    let (fixture, coherence, _) = trained_fixture(&FixtureSpec::default());
    let vocab = Arc::new(fixture.vocabulary);
    let local = Arc::new(coherence);
    let url = spawn_background(adapter_router(StubAdapter::new().with_scorer(
        "coherence",
        vocab.clone(),
        local.clone(),
    )))
    .unwrap();
    let remote = BridgeScorer::connect(
        BridgeClient::new(url, Duration::from_secs(30)),
        Some("coherence".into()),
        vocab.clone(),
    )
    .unwrap();

    let mut r = rng(9);
    let ids: Vec<ConceptId> = (0..vocab.len() as u32).map(ConceptId).collect();
    let sequences: Vec<Vec<ConceptId>> = (0..200)
        .map(|_| (0..r.gen_range(1..=10)).map(|_| *ids.choose(&mut r).unwrap()).collect())
        .collect();
    let want = local.nll_batch(&sequences).unwrap();
    let got = remote.nll_batch(&sequences).unwrap();
    for (w, g) in want.iter().zip(&got) {
        assert!((w - g).abs() <= 1e-9, "{w} vs {g}");
    }
    for seed in 0..5 {
        let context = vec![ids[seed as usize], ids[40 + seed as usize]];
        let params = SamplingParams {
            count: 32,
            temperature: 2.5,
            max_length: 10,
            seed,
        };
        assert_eq!(
            local.sample_continuations(&context, &params).unwrap(),
            remote.sample_continuations(&context, &params).unwrap()
        );
    }
}
