use std::collections::HashSet;

use crate::bridge::{ComposeRequest, ComposeResponse};
use crate::prompts::{compositor_system_prompt, compositor_user_prompt, CompositionState};
use crate::vocab::normalize_token;
use crate::{Error, Result};

/// Prompt-composition backend.
pub trait Compositor: Send + Sync {
    fn compose(&self, request: &ComposeRequest) -> Result<ComposeResponse>;
}

/// Offline compositor: the original concepts still in the pool plus the newest concept.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubCompositor;

impl Compositor for StubCompositor {
    fn compose(&self, request: &ComposeRequest) -> Result<ComposeResponse> {
        let state = &request.state;
        let pool: HashSet<&str> = state.concept_pool.iter().map(String::as_str).collect();
        let mut chosen: Vec<String> = state
            .original_concepts
            .iter()
            .filter(|c| pool.contains(c.as_str()))
            .cloned()
            .collect();
        let newest = state
            .newly_added
            .iter()
            .rev()
            .find(|c| pool.contains(c.as_str()))
            .or_else(|| state.concept_pool.last());
        if let Some(newest) = newest {
            if !chosen.contains(newest) {
                chosen.push(newest.clone());
            }
        }
        if chosen.is_empty() {
            return Err(Error::Composition("concept pool is empty".into()));
        }
        Ok(ComposeResponse {
            thought: "Original concepts plus the newest addition.".into(),
            name: format!("Composition {}", state.generation),
            prompt: format!("A composition combining: {}", chosen.join(", ")),
            concepts_used: chosen,
        })
    }
}

/// Check a compositor response against the pool rules. Returns the normalized
/// `concepts_used` on success and the reason on failure.
pub fn validate_composition(
    state: &CompositionState,
    response: &ComposeResponse,
) -> std::result::Result<Vec<String>, String> {
    if response.prompt.trim().is_empty() {
        return Err("prompt is empty".into());
    }
    if response.concepts_used.is_empty() {
        return Err("concepts_used is empty".into());
    }
    let mut used = Vec::with_capacity(response.concepts_used.len());
    for raw in &response.concepts_used {
        let label = normalize_token(raw);
        if state.expired_concepts.contains(&label) {
            return Err(format!("{raw:?} is an expired concept and cannot be used"));
        }
        if !state.concept_pool.contains(&label) {
            return Err(format!("{raw:?} is not in the concept pool"));
        }
        if !used.contains(&label) {
            used.push(label);
        }
    }
    if state.preserve_original {
        let missing: Vec<&String> = state
            .original_concepts
            .iter()
            .filter(|c| !used.contains(c))
            .collect();
        if !missing.is_empty() {
            return Err(format!("original concepts missing from concepts_used: {missing:?}"));
        }
    }
    Ok(used)
}

/// Ask the compositor for a prompt, allowing one repair round-trip.
///
/// The returned response carries normalized `concepts_used`.
pub fn compose_prompt(compositor: &dyn Compositor, state: &CompositionState) -> Result<ComposeResponse> {
    if state.concept_pool.is_empty() {
        return Err(Error::Composition("concept pool is empty".into()));
    }
    let mut request = ComposeRequest {
        state: state.clone(),
        system_prompt: compositor_system_prompt(state.preserve_original),
        user_prompt: compositor_user_prompt(state),
        repair_feedback: None,
    };
    let mut problem = String::new();
    for _ in 0..2 {
        let mut response = compositor.compose(&request)?;
        match validate_composition(state, &response) {
            Ok(used) => {
                response.concepts_used = used;
                return Ok(response);
            }
            Err(reason) => {
                problem = reason;
                request.repair_feedback = Some(problem.clone());
            }
        }
    }
    Err(Error::Composition(format!("invalid response after repair: {problem}")))
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;

    fn state(pool: &[&str], original: &[&str], expired: &[&str], new: &[&str], preserve: bool) -> CompositionState {
        let v = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        CompositionState {
            generation: 3,
            concept_pool: v(pool),
            original_concepts: v(original),
            expired_concepts: v(expired),
            newly_added: v(new),
            previous: None,
            preserve_original: preserve,
        }
    }

    struct Scripted(Mutex<Vec<ComposeResponse>>, Mutex<Vec<Option<String>>>);

    impl Compositor for Scripted {
        fn compose(&self, request: &ComposeRequest) -> Result<ComposeResponse> {
            self.1.lock().unwrap().push(request.repair_feedback.clone());
            Ok(self.0.lock().unwrap().remove(0))
        }
    }

    fn response(used: &[&str]) -> ComposeResponse {
        ComposeResponse {
            thought: "t".into(),
            name: "n".into(),
            concepts_used: used.iter().map(|s| s.to_string()).collect(),
            prompt: "p".into(),
        }
    }

    #[test]
    fn stub_template() {
        let s = state(&["woman", "ukiyo_e", "carrot"], &["woman", "ukiyo_e"], &[], &["carrot"], false);
        let r = compose_prompt(&StubCompositor, &s).unwrap();
        assert_eq!(r.prompt, "A composition combining: woman, ukiyo_e, carrot");
        assert_eq!(r.concepts_used, ["woman", "ukiyo_e", "carrot"]);
    }

    #[test]
    fn expired_concept_rejected_then_repaired() {
        let s = state(&["moon", "ship"], &["moon"], &["sun"], &[], false);
        let c = Scripted(
            Mutex::new(vec![response(&["sun"]), response(&["Moon"])]),
            Mutex::new(vec![]),
        );
        let r = compose_prompt(&c, &s).unwrap();
        assert_eq!(r.concepts_used, ["moon"]);
        let feedback = c.1.lock().unwrap();
        assert_eq!(feedback[0], None);
        assert!(feedback[1].as_deref().unwrap().contains("expired"));
    }

    #[test]
    fn missing_original_rejected_under_preservation() {
        let s = state(&["moon", "ship"], &["moon"], &[], &["ship"], true);
        let c = Scripted(
            Mutex::new(vec![response(&["ship"]), response(&["ship"])]),
            Mutex::new(vec![]),
        );
        assert!(matches!(compose_prompt(&c, &s), Err(Error::Composition(_))));
    }
}
