#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cas_core::agent::{RunConfig, SamplerKind};
use cas_core::fixture::{synthetic_fixture, FixtureSpec};
use cas_core::scorer::CooccurrenceModel;
use cas_core::vocab::Vocabulary;

pub struct FixtureFiles {
    pub vocabulary: PathBuf,
    pub coherence: PathBuf,
    pub context: PathBuf,
}

pub fn fixture_models() -> (Arc<Vocabulary>, CooccurrenceModel, CooccurrenceModel) {
    let fixture = synthetic_fixture(&FixtureSpec::default()).unwrap();
    let (coherence, context) = fixture.train_models(0).unwrap();
    (Arc::new(fixture.vocabulary), coherence, context)
}

pub fn write_fixture(dir: &Path) -> FixtureFiles {
    let (vocabulary, coherence, context) = fixture_models();
    let files = FixtureFiles {
        vocabulary: dir.join("vocab.txt"),
        coherence: dir.join("coherence.json"),
        context: dir.join("context.json"),
    };
    vocabulary.save(&files.vocabulary).unwrap();
    coherence.save(&files.coherence).unwrap();
    context.save(&files.context).unwrap();
    files
}

pub fn human_config(files: &FixtureFiles, generations: u32) -> RunConfig {
    let mut config = RunConfig::new(&["m0_00", "m1_00"], generations);
    config.sampler.kind = SamplerKind::Human;
    config.data.vocabulary = Some(files.vocabulary.clone());
    config.data.coherence_model = Some(files.coherence.clone());
    config.data.context_model = Some(files.context.clone());
    config
}

/// HTTP agent that returns error statuses as responses.
pub fn http() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

pub fn get(agent: &ureq::Agent, url: &str) -> (u16, serde_json::Value) {
    let mut resp = agent.get(url).call().unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap())
}

pub fn post(agent: &ureq::Agent, url: &str, body: serde_json::Value) -> (u16, serde_json::Value) {
    let mut resp = agent.post(url).send_json(&body).unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap())
}
