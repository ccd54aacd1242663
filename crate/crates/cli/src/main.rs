//! `cas`: command-line front end. Each subcommand parses its arguments, calls the
//! matching library operation and writes results under `--out` with fixed file names.

use std::collections::HashSet;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use cas_core::agent::{build_backends, load_models, Agent, RunConfig, RunDir, BRIDGE_URL_ENV};
use cas_core::analysis::{
    analyze_trajectories, beta_sweep, fit_by_criterion, load_run, read_comparisons, read_run_concepts,
    repetition_rate, run_concepts, run_trajectory, significance_stars, summarize_run, write_sweep,
    SweepConfig, ThresholdMode,
};
use cas_core::bridge::{BridgeClient, BridgeEmbedder};
use cas_core::datasets::{
    build_artist_dataset, build_artwork_dataset, SequenceDataset, DEFAULT_PERMUTATIONS_PER_ARTWORK,
    DEFAULT_SEQUENCES_PER_ARTWORK, DEFAULT_SEQUENCE_LENGTH,
};
use cas_core::embed::{Embedder, HashEmbedder, TableEmbedder};
use cas_core::fixture::{synthetic_fixture, FixtureSpec};
use cas_core::prompts::{InspirationMode, InspirationState};
use cas_core::sampler::{
    cas_sample, llm_sample, random_sample, write_trace, CasConfig, DEFAULT_BETA, DEFAULT_CANDIDATES,
    DEFAULT_LLM_RETRIES, DEFAULT_MAX_LENGTH, DEFAULT_TEMPERATURE,
};
use cas_core::scorer::{CooccurrenceModel, DEFAULT_ALPHA, DEFAULT_LAMBDA};
use cas_core::util::derive_seed;
use cas_core::vocab::{
    build_artist_records, build_vocabulary_with, embed_concepts, load_artwork_embeddings, load_artworks,
    load_concept_embeddings, load_stoplist, tag_artworks, write_artworks, CaptionCorpus, ConceptId,
    ScoreAggregation, TermFrequency, TfIdfOptions, Vocabulary,
};
use cas_core::{Error, Result};
use cas_service::{ServiceConfig, StubAdapter};

#[derive(Parser)]
#[command(name = "cas", version, about = "Cultural alien sampler: vocabulary, scorers, sampling, agent runs and analysis")]
struct Cli {
    /// Root seed for every stochastic step. Defaults to 0; `run` uses the config's
    /// seed unless this is given.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Output directory (for `run`, the run directory).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Tf {
    Relative,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum Aggregation {
    Max,
    Sum,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Cas,
    Random,
    Llm,
    LlmFree,
}

#[derive(Clone, Copy, ValueEnum)]
enum Conditioning {
    Seed,
    Pool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Thresholds {
    PerTrajectory,
    PerMethod,
}

#[derive(Subcommand)]
enum Command {
    /// Extract a concept vocabulary from a caption corpus (JSON Lines).
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        top_k: usize,
        #[arg(long)]
        stoplist: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Tf::Relative)]
        tf: Tf,
        #[arg(long, value_enum, default_value_t = Aggregation::Max)]
        aggregation: Aggregation,
    },
    /// Tag artwork embeddings with their nearest concepts.
    TagArtworks {
        #[arg(long)]
        vocab: PathBuf,
        /// JSON Lines of {artwork_id, artist_id, embedding}.
        #[arg(long)]
        artworks: PathBuf,
        /// JSON Lines of {label, embedding}; otherwise concepts are embedded as text.
        #[arg(long)]
        concept_embeddings: Option<PathBuf>,
        /// Embed concepts through this bridge instead of the offline embedder.
        #[arg(long)]
        bridge_url: Option<String>,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Build the artwork and artist training datasets.
    BuildDatasets {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        artworks: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PERMUTATIONS_PER_ARTWORK)]
        permutations: usize,
        #[arg(long, default_value_t = DEFAULT_SEQUENCE_LENGTH)]
        sequence_length: usize,
        #[arg(long, default_value_t = DEFAULT_SEQUENCES_PER_ARTWORK)]
        sequences_per_artwork: usize,
    },
    /// Train a co-occurrence scorer on a dataset file.
    TrainScorer {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        /// Writes `<name>.json`.
        #[arg(long, default_value = "scorer")]
        name: String,
    },
    /// Propose one concept with CAS, uniformly at random, or from an LLM bridge.
    Sample {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        coherence: Option<PathBuf>,
        #[arg(long)]
        context: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        seed_concepts: Vec<String>,
        /// Active pool; defaults to the seed concepts.
        #[arg(long, value_delimiter = ',')]
        pool: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        expired: Vec<String>,
        #[arg(long, value_enum, default_value_t = Method::Cas)]
        method: Method,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
        #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
        temperature: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_LENGTH)]
        max_length: usize,
        #[arg(long, value_enum, default_value_t = Conditioning::Seed)]
        conditioning: Conditioning,
        #[arg(long, default_value_t = DEFAULT_LLM_RETRIES)]
        retries: usize,
        #[arg(long)]
        bridge_url: Option<String>,
    },
    /// Run the agent loop from a config file.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        generations: Option<u32>,
        #[arg(long)]
        patience: Option<u32>,
        /// Continue the run already in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Validity sweep over temperatures and β against the β = 0 baseline.
    SweepBeta {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        artworks: PathBuf,
        #[arg(long)]
        coherence: PathBuf,
        #[arg(long)]
        context: PathBuf,
        /// One conditioning sequence per line, labels separated by whitespace.
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, DEFAULT_BETA])]
        betas: Vec<f64>,
        /// Defaults to 0.1 through 3.1 in steps of 0.3.
        #[arg(long, value_delimiter = ',')]
        temperatures: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_LENGTH)]
        max_length: usize,
        #[arg(long, default_value_t = 1)]
        trials: usize,
    },
    /// Novelty and trajectory metrics of persisted runs.
    AnalyzeRun {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Method label per run (one for all, or one per run).
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
        #[arg(long, value_enum, default_value_t = Thresholds::PerTrajectory)]
        thresholds: Thresholds,
    },
    /// Cross-run concept repetition.
    Repetition {
        /// Run directories; their added concepts are compared.
        runs: Vec<PathBuf>,
        /// `run_id<TAB>concept` lines instead of run directories.
        #[arg(long, conflicts_with = "runs")]
        concepts: Option<PathBuf>,
        /// Precomputed {label, embedding} JSON Lines.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        bridge_url: Option<String>,
        #[arg(long, default_value_t = cas_core::analysis::DEFAULT_REPETITION_THRESHOLD)]
        threshold: f64,
    },
    /// Fit Bradley–Terry skills to pairwise comparisons, per criterion.
    FitBt { comparisons: PathBuf },
    /// Serve the session API (and optionally the bridge endpoints).
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Also serve /v1/* from these models.
        #[arg(long, requires_all = ["adapter_coherence", "adapter_context"])]
        adapter_vocab: Option<PathBuf>,
        #[arg(long)]
        adapter_coherence: Option<PathBuf>,
        #[arg(long)]
        adapter_context: Option<PathBuf>,
    },
    /// Write the synthetic fixture: vocabulary, artworks, trained models, run config.
    MakeFixture,
}

/// File names written under `--out`.
mod files {
    pub const VOCABULARY: &str = "vocabulary.txt";
    pub const ARTWORKS: &str = "artworks.jsonl";
    pub const ARTWORK_DATASET: &str = "artwork_dataset.txt";
    pub const ARTIST_DATASET: &str = "artist_dataset.txt";
    pub const PROPOSAL: &str = "proposal.json";
    pub const TRACE: &str = "trace.tsv";
    pub const SWEEP: &str = "sweep.tsv";
    pub const ANALYSIS: &str = "analysis.json";
    pub const REPETITION: &str = "repetition.json";
    pub const BRADLEY_TERRY: &str = "bradley_terry.json";
    pub const COHERENCE: &str = "coherence.json";
    pub const CONTEXT: &str = "context.json";
    pub const RUN_CONFIG: &str = "run.toml";
}

struct Ctx {
    seed: u64,
    explicit_seed: Option<u64>,
    format: Format,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn emit(&self, report: &Value, text: &str) -> Result<()> {
        let body = match self.format {
            Format::Json => serde_json::to_string_pretty(report)? + "\n",
            Format::Text => text.to_owned(),
        };
        match std::io::stdout().lock().write_all(body.as_bytes()) {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            r => Ok(r?),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn bridge_client(url: Option<String>) -> Result<BridgeClient> {
    let url = url
        .or_else(|| std::env::var(BRIDGE_URL_ENV).ok().filter(|s| !s.is_empty()))
        .ok_or_else(|| Error::Config(format!("no bridge URL: pass --bridge-url or set {BRIDGE_URL_ENV}")))?;
    Ok(BridgeClient::new(url, Duration::from_secs(30)))
}

fn resolve_set(vocab: &Vocabulary, labels: &[String]) -> Result<HashSet<ConceptId>> {
    Ok(vocab.resolve(labels)?.into_iter().collect())
}

fn model(path: Option<&PathBuf>, vocab: &Vocabulary, what: &str) -> Result<CooccurrenceModel> {
    let path = path.ok_or_else(|| Error::Config(format!("--{what} is required for this method")))?;
    CooccurrenceModel::load(path, vocab)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(0),
        explicit_seed: cli.seed,
        format: cli.format,
        out: cli.out,
    };
    match dispatch(&ctx, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(ctx: &Ctx, command: Command) -> Result<()> {
    if !matches!(command, Command::Serve { .. }) {
        fs::create_dir_all(&ctx.out)?;
    }
    match command {
        Command::BuildVocab {
            corpus,
            top_k,
            stoplist,
            tf,
            aggregation,
        } => {
            let corpus = CaptionCorpus::load_jsonl(&corpus)?;
            let stoplist = match stoplist {
                Some(p) => load_stoplist(&p)?,
                None => HashSet::new(),
            };
            let options = TfIdfOptions {
                term_frequency: match tf {
                    Tf::Relative => TermFrequency::Relative,
                    Tf::Raw => TermFrequency::Raw,
                },
                aggregation: match aggregation {
                    Aggregation::Max => ScoreAggregation::Max,
                    Aggregation::Sum => ScoreAggregation::Sum,
                },
            };
            let vocab = build_vocabulary_with(&corpus, top_k, &stoplist, options)?;
            vocab.save(&ctx.path(files::VOCABULARY))?;
            ctx.emit(
                &json!({ "concepts": vocab.len(), "hash": vocab.hash() }),
                &format!("{} concepts, hash {}\n", vocab.len(), vocab.hash()),
            )
        }
        Command::TagArtworks {
            vocab,
            artworks,
            concept_embeddings,
            bridge_url,
            k,
        } => {
            let vocab = Vocabulary::load(&vocab)?;
            let items = load_artwork_embeddings(&artworks)?;
            let concepts = match (concept_embeddings, bridge_url) {
                (Some(p), _) => load_concept_embeddings(&p, &vocab)?,
                (None, Some(url)) => {
                    embed_concepts(&vocab, &BridgeEmbedder::connect(bridge_client(Some(url))?)?)?
                }
                (None, None) => embed_concepts(&vocab, &HashEmbedder::default())?,
            };
            let tagged = tag_artworks(&items, &vocab, &concepts, k)?;
            write_artworks(
                BufWriter::new(fs::File::create(ctx.path(files::ARTWORKS))?),
                &tagged,
                &vocab,
            )?;
            ctx.emit(
                &json!({ "artworks": tagged.len(), "k": k }),
                &format!("tagged {} artworks with {k} concepts each\n", tagged.len()),
            )
        }
        Command::BuildDatasets {
            vocab,
            artworks,
            permutations,
            sequence_length,
            sequences_per_artwork,
        } => {
            let vocab = Vocabulary::load(&vocab)?;
            let artworks = load_artworks(&artworks, &vocab)?;
            let artists = build_artist_records(&artworks);
            let artwork_data = build_artwork_dataset(&artworks, permutations, derive_seed(ctx.seed, 0))?;
            let artist_data = build_artist_dataset(
                &artists,
                sequence_length,
                sequences_per_artwork,
                derive_seed(ctx.seed, 1),
            )?;
            artwork_data.save(&ctx.path(files::ARTWORK_DATASET), &vocab)?;
            artist_data.save(&ctx.path(files::ARTIST_DATASET), &vocab)?;
            ctx.emit(
                &json!({
                    "artworks": artworks.len(),
                    "artists": artists.len(),
                    "artwork_sequences": artwork_data.len(),
                    "artist_sequences": artist_data.len(),
                }),
                &format!(
                    "{} artwork sequences, {} artist sequences\n",
                    artwork_data.len(),
                    artist_data.len()
                ),
            )
        }
        Command::TrainScorer {
            vocab,
            dataset,
            alpha,
            lambda,
            name,
        } => {
            let vocab = Vocabulary::load(&vocab)?;
            let data = SequenceDataset::load(&dataset, &vocab)?;
            let model = CooccurrenceModel::train(&vocab, data.iter_tokens(), alpha, lambda)?;
            let path = ctx.path(&format!("{name}.json"));
            model.save(&path)?;
            ctx.emit(
                &json!({ "sequences": data.len(), "model": path }),
                &format!("trained on {} sequences -> {}\n", data.len(), path.display()),
            )
        }
        Command::Sample {
            vocab,
            coherence,
            context,
            seed_concepts,
            pool,
            expired,
            method,
            beta,
            n,
            temperature,
            max_length,
            conditioning,
            retries,
            bridge_url,
        } => {
            let vocab = Vocabulary::load(&vocab)?;
            let pool = if pool.is_empty() { seed_concepts.clone() } else { pool };
            let proposal = match method {
                Method::Cas => {
                    let coherence = model(coherence.as_ref(), &vocab, "coherence")?;
                    let context = model(context.as_ref(), &vocab, "context")?;
                    let cfg = CasConfig {
                        n,
                        beta,
                        temperature,
                        max_length,
                        seed: ctx.seed,
                        conditioning: match conditioning {
                            Conditioning::Seed => cas_core::sampler::Conditioning::Seed,
                            Conditioning::Pool => cas_core::sampler::Conditioning::Pool,
                        },
                    };
                    let conditioned = match conditioning {
                        Conditioning::Seed => vocab.resolve(&seed_concepts)?,
                        Conditioning::Pool => vocab.resolve(&pool)?,
                    };
                    cas_sample(
                        &conditioned,
                        &coherence,
                        &context,
                        &cfg,
                        &resolve_set(&vocab, &pool)?,
                        &resolve_set(&vocab, &expired)?,
                        &vocab,
                    )?
                }
                Method::Random => random_sample(
                    &vocab,
                    &resolve_set(&vocab, &pool)?,
                    &resolve_set(&vocab, &expired)?,
                    ctx.seed,
                )?,
                Method::Llm | Method::LlmFree => {
                    let state = InspirationState {
                        generation: 1,
                        concept_pool: pool,
                        original_concepts: seed_concepts,
                        expired_concepts: expired,
                        last_artwork: None,
                        last_concepts_used: Vec::new(),
                        performance: None,
                        novelty_trend: None,
                    };
                    let mode = if method == Method::Llm {
                        InspirationMode::Constrained
                    } else {
                        InspirationMode::Free
                    };
                    llm_sample(&state, mode, &bridge_client(bridge_url)?, &vocab, retries)?
                }
            };
            write_json(&ctx.path(files::PROPOSAL), &proposal)?;
            if let Some(trace) = &proposal.candidate_trace {
                write_trace(
                    BufWriter::new(fs::File::create(ctx.path(files::TRACE))?),
                    trace,
                    &vocab,
                )?;
            }
            ctx.emit(
                &serde_json::to_value(&proposal)?,
                &format!("{} ({})\n", proposal.concept, proposal.provenance),
            )
        }
        Command::Run {
            config,
            generations,
            patience,
            resume,
        } => {
            let dir = RunDir::new(&ctx.out);
            let mut agent = if resume {
                let config = RunConfig::load(&dir.config())?;
                let models = load_models(&config)?;
                Agent::resume(dir, build_backends(&config, models.as_ref())?)?
            } else {
                let path = config.ok_or_else(|| Error::Config("--config is required unless --resume".into()))?;
                let mut config = RunConfig::load(&path)?;
                if let Some(g) = generations {
                    config.generations = g;
                }
                if let Some(p) = patience {
                    config.patience = p;
                }
                if let Some(s) = ctx.explicit_seed {
                    config.seed = s;
                }
                config.validate()?;
                let models = load_models(&config)?;
                Agent::create(config.clone(), build_backends(&config, models.as_ref())?, dir)?
            };
            let records = agent.run()?;
            let failed = records.iter().filter(|r| r.is_failed()).count();
            let pool: Vec<&String> = agent.pool().active().iter().collect();
            ctx.emit(
                &json!({
                    "generations": agent.records().len(),
                    "failed": failed,
                    "pool": pool,
                    "run_dir": ctx.out,
                }),
                &format!(
                    "{} generations ({failed} failed) -> {}\n",
                    agent.records().len(),
                    ctx.out.display()
                ),
            )
        }
        Command::SweepBeta {
            vocab,
            artworks,
            coherence,
            context,
            inputs,
            betas,
            temperatures,
            n,
            max_length,
            trials,
        } => {
            let vocab = Vocabulary::load(&vocab)?;
            let artworks = load_artworks(&artworks, &vocab)?;
            let artists = build_artist_records(&artworks);
            let coherence = CooccurrenceModel::load(&coherence, &vocab)?;
            let context = CooccurrenceModel::load(&context, &vocab)?;
            let inputs = fs::read_to_string(&inputs)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| vocab.resolve(&l.split_whitespace().collect::<Vec<_>>()))
                .collect::<Result<Vec<_>>>()?;
            let cfg = SweepConfig {
                temperatures: if temperatures.is_empty() {
                    SweepConfig::default_temperatures()
                } else {
                    temperatures
                },
                betas,
                n,
                max_length,
                trials,
                seed: ctx.seed,
            };
            let cells = beta_sweep(&inputs, &coherence, &context, &cfg, &artworks, &artists)?;
            write_sweep(BufWriter::new(fs::File::create(ctx.path(files::SWEEP))?), &cells)?;
            let mut text = Vec::new();
            write_sweep(&mut text, &cells)?;
            ctx.emit(&serde_json::to_value(&cells)?, &String::from_utf8_lossy(&text))
        }
        Command::AnalyzeRun {
            runs,
            method,
            thresholds,
        } => {
            if method.len() > 1 && method.len() != runs.len() {
                return Err(Error::Argument("give one --method label, or one per run".into()));
            }
            let mut summaries = Vec::new();
            let mut trajectories = Vec::new();
            for (i, dir) in runs.iter().enumerate() {
                let run_id = dir
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| dir.display().to_string());
                let label = method.get(i).or(method.first()).map(String::as_str).unwrap_or("run");
                let (records, cache) = load_run(dir)?;
                let summary = summarize_run(&records, &cache)?;
                if summary.trajectory.is_some() {
                    trajectories.push(run_trajectory(label, &run_id, &records, &cache)?);
                }
                summaries.push(json!({ "run_id": run_id, "method": label, "summary": summary }));
            }
            let mode = match thresholds {
                Thresholds::PerTrajectory => ThresholdMode::PerTrajectory,
                Thresholds::PerMethod => ThresholdMode::PerMethod,
            };
            let metrics: Vec<Value> = trajectories
                .iter()
                .zip(analyze_trajectories(&trajectories, mode)?)
                .map(|(t, m)| json!({ "method": t.method, "run_id": t.run_id, "metrics": m }))
                .collect();
            let report = json!({ "runs": summaries, "trajectories": metrics });
            write_json(&ctx.path(files::ANALYSIS), &report)?;
            let mut text = String::new();
            for s in &summaries {
                text.push_str(&format!(
                    "{}: {} generations, mean combined novelty {}\n",
                    s["run_id"].as_str().unwrap_or_default(),
                    s["summary"]["generations"],
                    s["summary"]["mean_novelty_combined"]
                ));
            }
            for m in &metrics {
                text.push_str(&format!(
                    "  {}/{}: radius {}, return rate {}, saturation {}\n",
                    m["method"].as_str().unwrap_or_default(),
                    m["run_id"].as_str().unwrap_or_default(),
                    m["metrics"]["exploration_radius"],
                    m["metrics"]["return_rate"],
                    m["metrics"]["saturation_generation"]
                ));
            }
            ctx.emit(&report, &text)
        }
        Command::Repetition {
            runs,
            concepts,
            embeddings,
            bridge_url,
            threshold,
        } => {
            let run_sets = match concepts {
                Some(p) => read_run_concepts(BufReader::new(fs::File::open(p)?))?,
                None => runs
                    .iter()
                    .map(|dir| {
                        let (records, _) = load_run(dir)?;
                        let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                        Ok(run_concepts(&id, &records))
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            let embedder: Box<dyn Embedder> = match (embeddings, bridge_url) {
                (Some(p), _) => Box::new(TableEmbedder::load(&p)?),
                (None, Some(url)) => Box::new(BridgeEmbedder::connect(bridge_client(Some(url))?)?),
                (None, None) => Box::new(HashEmbedder::default()),
            };
            let report = repetition_rate(&run_sets, embedder.as_ref(), threshold)?;
            write_json(&ctx.path(files::REPETITION), &report)?;
            let mut text = format!("mean repetition rate {:.4} at threshold {threshold}\n", report.mean_rate);
            for r in &report.per_run {
                text.push_str(&format!("  {}: {}/{} ({:.4})\n", r.run_id, r.repeated, r.total, r.rate));
            }
            ctx.emit(&serde_json::to_value(&report)?, &text)
        }
        Command::FitBt { comparisons } => {
            let comparisons = read_comparisons(fs::File::open(comparisons)?)?;
            let fits = fit_by_criterion(&comparisons)?;
            write_json(&ctx.path(files::BRADLEY_TERRY), &fits)?;
            let mut text = String::new();
            for (criterion, fit) in &fits {
                text.push_str(&format!("{criterion:?}\n"));
                for (i, m) in fit.methods.iter().enumerate() {
                    text.push_str(&format!(
                        "  {m}\ttheta {:.6}\tse {:.6}\n",
                        fit.theta[i], fit.standard_errors[i]
                    ));
                }
                for t in &fit.pairwise {
                    text.push_str(&format!(
                        "  {} vs {}\tdiff {:.6}\tp {:.4} {}\n",
                        t.method_a,
                        t.method_b,
                        t.difference,
                        t.p_value,
                        significance_stars(t.p_value)
                    ));
                }
            }
            ctx.emit(&serde_json::to_value(&fits)?, &text)
        }
        Command::Serve {
            addr,
            data_dir,
            ui_dir,
            adapter_vocab,
            adapter_coherence,
            adapter_context,
        } => {
            let mut config = ServiceConfig::from_env();
            if let Some(d) = data_dir {
                config.data_dir = d;
            }
            if ui_dir.is_some() {
                config.ui_dir = ui_dir;
            }
            if let (Some(v), Some(coh), Some(ctx_model)) = (adapter_vocab, adapter_coherence, adapter_context) {
                let vocab = Arc::new(Vocabulary::load(&v)?);
                let coherence = CooccurrenceModel::load(&coh, &vocab)?;
                let context = CooccurrenceModel::load(&ctx_model, &vocab)?;
                config.adapter = Some(
                    StubAdapter::new()
                        .with_scorer(cas_core::agent::BRIDGE_COHERENCE_MODEL, vocab.clone(), Arc::new(coherence))
                        .with_scorer(cas_core::agent::BRIDGE_CONTEXT_MODEL, vocab, Arc::new(context)),
                );
            }
            eprintln!("listening on http://{addr}");
            tokio::runtime::Runtime::new()?.block_on(cas_service::serve(addr, config))
        }
        Command::MakeFixture => {
            let spec = FixtureSpec {
                seed: ctx.seed,
                ..FixtureSpec::default()
            };
            let fixture = synthetic_fixture(&spec)?;
            let (coherence, context) = fixture.train_models(ctx.seed)?;
            fixture.vocabulary.save(&ctx.path(files::VOCABULARY))?;
            write_artworks(
                BufWriter::new(fs::File::create(ctx.path(files::ARTWORKS))?),
                &fixture.artworks,
                &fixture.vocabulary,
            )?;
            coherence.save(&ctx.path(files::COHERENCE))?;
            context.save(&ctx.path(files::CONTEXT))?;
            let mut config = RunConfig::new(&["m0_00", "m1_00"], 10);
            config.seed = ctx.seed;
            config.data.vocabulary = Some(files::VOCABULARY.into());
            config.data.coherence_model = Some(files::COHERENCE.into());
            config.data.context_model = Some(files::CONTEXT.into());
            config.save(&ctx.path(files::RUN_CONFIG))?;
            ctx.emit(
                &json!({
                    "concepts": fixture.vocabulary.len(),
                    "artworks": fixture.artworks.len(),
                    "artists": fixture.artists.len(),
                }),
                &format!(
                    "{} concepts, {} artworks, {} artists -> {}\n",
                    fixture.vocabulary.len(),
                    fixture.artworks.len(),
                    fixture.artists.len(),
                    ctx.out.display()
                ),
            )
        }
    }
}
