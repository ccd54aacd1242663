use std::collections::BTreeMap;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::vocab::normalize_token;
use crate::{Error, Result};

/// The agent's evolving concept pool.
///
/// Concepts are stored as normalized labels so free-form suggestions that are not
/// part of the vocabulary can live in the pool too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptPool {
    active: IndexSet<String>,
    original: IndexSet<String>,
    expired: IndexSet<String>,
    failures: BTreeMap<String, u32>,
    best_novelty: BTreeMap<String, f64>,
    preserve_original: bool,
}

impl ConceptPool {
    pub fn new<S: AsRef<str>>(seed_concepts: &[S], preserve_original: bool) -> Result<Self> {
        let mut original = IndexSet::new();
        for raw in seed_concepts {
            let label = normalize_token(raw.as_ref());
            if label.is_empty() {
                return Err(Error::Config(format!(
                    "seed concept {:?} is empty after normalization",
                    raw.as_ref()
                )));
            }
            original.insert(label);
        }
        if original.is_empty() {
            return Err(Error::Config("at least one seed concept is required".into()));
        }
        Ok(Self {
            active: original.clone(),
            failures: original.iter().map(|c| (c.clone(), 0)).collect(),
            original,
            expired: IndexSet::new(),
            best_novelty: BTreeMap::new(),
            preserve_original,
        })
    }

    pub fn active(&self) -> &IndexSet<String> {
        &self.active
    }

    pub fn original(&self) -> &IndexSet<String> {
        &self.original
    }

    pub fn expired(&self) -> &IndexSet<String> {
        &self.expired
    }

    pub fn preserve_original(&self) -> bool {
        self.preserve_original
    }

    pub fn failures(&self, concept: &str) -> Option<u32> {
        self.failures.get(concept).copied()
    }

    pub fn best_novelty(&self, concept: &str) -> Option<f64> {
        self.best_novelty.get(concept).copied()
    }

    pub fn is_active(&self, concept: &str) -> bool {
        self.active.contains(concept)
    }

    pub fn is_expired(&self, concept: &str) -> bool {
        self.expired.contains(concept)
    }

    /// Neither active nor expired.
    pub fn is_eligible(&self, concept: &str) -> bool {
        !self.active.contains(concept) && !self.expired.contains(concept)
    }

    /// Add an inspired concept to the active pool.
    pub fn add(&mut self, concept: &str) -> Result<()> {
        let label = normalize_token(concept);
        if !self.is_eligible(&label) {
            return Err(Error::Argument(format!(
                "concept {label:?} is already active or expired"
            )));
        }
        self.failures.insert(label.clone(), 0);
        self.active.insert(label);
        Ok(())
    }

    /// Update failure counters after a scored generation and expire stale concepts.
    ///
    /// A used concept whose personal best is beaten (or that has none yet) resets its
    /// counter; otherwise the counter grows. Concepts reaching `patience` failures
    /// expire, except original concepts when preservation is on. Returns the
    /// concepts expired by this call, in usage order.
    pub fn filter(&mut self, concepts_used: &[String], novelty: f64, patience: u32) -> Vec<String> {
        let mut removed = Vec::new();
        for c in concepts_used {
            if !self.active.contains(c) {
                continue;
            }
            let improved = self.best_novelty.get(c).is_none_or(|&best| novelty > best);
            let counter = self.failures.entry(c.clone()).or_insert(0);
            if improved {
                self.best_novelty.insert(c.clone(), novelty);
                *counter = 0;
            } else {
                *counter += 1;
            }
            let protected = self.preserve_original && self.original.contains(c);
            if *counter >= patience && !protected {
                self.failures.remove(c);
                self.active.shift_remove(c);
                self.expired.insert(c.clone());
                removed.push(c.clone());
            }
        }
        removed
    }
}
