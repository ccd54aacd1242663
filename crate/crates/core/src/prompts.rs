//! Prompt rendering for the LLM-backed compositor and inspiration backends.
//!
//! Templates live in `assets/prompts`. Concept labels are shown with spaces instead
//! of underscores; suggestions coming back are normalized again by the callers.

use serde::{Deserialize, Serialize};

const COMPOSITOR_SYSTEM: &str = include_str!("../assets/prompts/compositor_system.txt");
const PRESERVE_ORIGINAL_RULE: &str = include_str!("../assets/prompts/preserve_original_rule.txt");
const COMPOSITOR_INSTRUCTIONS: &str =
    include_str!("../assets/prompts/compositor_user_instructions.txt");
const INSPIRATION_SYSTEM: &str = include_str!("../assets/prompts/inspiration_system.txt");
const INSPIRATION_CONSTRAINED: &str = include_str!("../assets/prompts/inspiration_constrained.txt");
const INSPIRATION_FREE: &str = include_str!("../assets/prompts/inspiration_free.txt");
const INSPIRATION_FORMAT: &str = include_str!("../assets/prompts/inspiration_response_format.txt");
const INSPIRATION_TASK: &str = include_str!("../assets/prompts/inspiration_task.txt");

/// Whether LLM inspiration is restricted to the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InspirationMode {
    Constrained,
    Free,
}

/// Scores of the previous generation, as fed back to the LLM components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub fitness: f64,
    pub combined: f64,
    pub text: f64,
    pub image: f64,
}

impl Performance {
    /// Fitness is the combined novelty.
    pub fn from_novelty(text: f64, image: f64, combined: f64) -> Self {
        Self {
            fitness: combined,
            combined,
            text,
            image,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoveltyTrend {
    Increasing,
    Decreasing,
    Stable,
}

impl NoveltyTrend {
    /// Trend between the last two combined novelty values, if there are two.
    pub fn from_history(combined: &[f64]) -> Option<Self> {
        let [.., prev, last] = combined else {
            return None;
        };
        let delta = last - prev;
        Some(if delta > 1e-9 {
            NoveltyTrend::Increasing
        } else if delta < -1e-9 {
            NoveltyTrend::Decreasing
        } else {
            NoveltyTrend::Stable
        })
    }

    fn describe(self) -> &'static str {
        match self {
            NoveltyTrend::Increasing => "increasing",
            NoveltyTrend::Decreasing => "decreasing (need more novelty)",
            NoveltyTrend::Stable => "stable",
        }
    }
}

/// What the compositor sees about the previous generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviousGeneration {
    pub concepts_used: Vec<String>,
    pub performance: Performance,
}

/// Per-generation compositor input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionState {
    pub generation: u32,
    pub concept_pool: Vec<String>,
    pub original_concepts: Vec<String>,
    pub expired_concepts: Vec<String>,
    pub newly_added: Vec<String>,
    pub previous: Option<PreviousGeneration>,
    pub preserve_original: bool,
}

/// Per-generation LLM inspiration input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspirationState {
    pub generation: u32,
    pub concept_pool: Vec<String>,
    pub original_concepts: Vec<String>,
    pub expired_concepts: Vec<String>,
    pub last_artwork: Option<String>,
    pub last_concepts_used: Vec<String>,
    pub performance: Option<Performance>,
    pub novelty_trend: Option<NoveltyTrend>,
}

pub fn display_label(label: &str) -> String {
    label.replace('_', " ")
}

/// `['a', 'b']`
pub fn quoted_list<S: AsRef<str>>(labels: &[S]) -> String {
    let items: Vec<String> = labels
        .iter()
        .map(|l| format!("'{}'", display_label(l.as_ref())))
        .collect();
    format!("[{}]", items.join(", "))
}

/// `[a, b]`
pub fn bare_list<S: AsRef<str>>(labels: &[S]) -> String {
    let items: Vec<String> = labels.iter().map(|l| display_label(l.as_ref())).collect();
    format!("[{}]", items.join(", "))
}

/// Scores rounded to three decimals with trailing zeros trimmed (0.330 → 0.33).
pub fn format_score(x: f64) -> String {
    let s = format!("{x:.3}");
    let s = s.trim_end_matches('0');
    let s = s.strip_suffix('.').unwrap_or(s);
    if s == "-0" {
        "0".into()
    } else {
        s.to_owned()
    }
}

pub fn compositor_system_prompt(preserve_original: bool) -> String {
    let mut out = COMPOSITOR_SYSTEM.to_owned();
    if preserve_original {
        out.push('\n');
        out.push_str(PRESERVE_ORIGINAL_RULE);
    }
    out
}

pub fn compositor_user_prompt(state: &CompositionState) -> String {
    let mut out = format!("Generation {}\n", state.generation);
    out += &format!("Current concept pool: {}\n", quoted_list(&state.concept_pool));
    if state.preserve_original {
        out += &format!(
            "Original concepts (MUST BE INCLUDED): {}\n",
            quoted_list(&state.original_concepts)
        );
    } else {
        out += &format!("Original concepts: {}\n", quoted_list(&state.original_concepts));
    }
    out += &format!(
        "Expired concepts (cannot be used): {}\n",
        quoted_list(&state.expired_concepts)
    );
    out += &format!("Newly added concepts: {}\n", quoted_list(&state.newly_added));
    if let Some(prev) = &state.previous {
        let p = prev.performance;
        out += "\nPREVIOUS GENERATION CONTEXT:\n";
        out += &format!(
            "Previous generation concepts used: {}\n",
            quoted_list(&prev.concepts_used)
        );
        out += &format!("Previous generation fitness: {}\n", format_score(p.fitness));
        out += &format!("Previous generation novelty: {}\n", format_score(p.combined));
        out += &format!("Previous generation text novelty: {}\n", format_score(p.text));
        out += &format!("Previous generation image novelty: {}\n", format_score(p.image));
    }
    out.push('\n');
    if state.newly_added.is_empty() {
        out += "No new concepts were added this generation. Create the next artwork. ";
    } else {
        out += "New concept(s) have been added to your concept pool. Create the next artwork. ";
    }
    out += COMPOSITOR_INSTRUCTIONS;
    out
}

pub fn inspiration_system_prompt<S: AsRef<str>>(mode: InspirationMode, vocabulary: &[S]) -> String {
    let constraint = match mode {
        InspirationMode::Constrained => {
            INSPIRATION_CONSTRAINED.replace("{vocabulary_list}", &bare_list(vocabulary))
        }
        InspirationMode::Free => INSPIRATION_FREE.to_owned(),
    };
    format!("{INSPIRATION_SYSTEM}\n{constraint}\n{INSPIRATION_FORMAT}")
}

pub fn inspiration_user_prompt(state: &InspirationState, mode: InspirationMode) -> String {
    let mut out = format!("CONCEPT INSPIRATION REQUEST - Generation {}\n\n", state.generation);
    out += "CURRENT CONCEPT POOL (concepts used in previous generations):\n";
    out += &format!("{}\n", bare_list(&state.concept_pool));
    out += &format!("Original concepts: {}\n", quoted_list(&state.original_concepts));
    out += &format!(
        "Expired concepts (avoid these): {}\n",
        quoted_list(&state.expired_concepts)
    );
    if let Some(name) = &state.last_artwork {
        out += &format!("Last artwork: \"{name}\"\n");
    }
    if !state.last_concepts_used.is_empty() {
        out += &format!(
            "Last concepts used: {}\n",
            quoted_list(&state.last_concepts_used)
        );
    }
    out += "\nPERFORMANCE HISTORY:\n";
    match state.performance {
        Some(p) => {
            out += "Previous Performance:\n";
            out += &format!("Fitness (Novelty): {}\n", format_score(p.fitness));
            out += &format!("Combined Novelty: {}\n", format_score(p.combined));
            out += &format!("Text Novelty: {}\n", format_score(p.text));
            out += &format!("Image Novelty: {}\n", format_score(p.image));
        }
        None => out += "No previous generations yet.\n",
    }
    if let Some(trend) = state.novelty_trend {
        out += &format!("\nPrevious novelty trend: {}\n", trend.describe());
    }
    out.push('\n');
    let (source, constraint) = match mode {
        InspirationMode::Constrained => (
            "allowed vocabulary",
            "ONLY from the allowed vocabulary (defined in the beginning)",
        ),
        InspirationMode::Free => (
            "space of all possible concepts",
            "of your choosing (you are not restricted to a vocabulary)",
        ),
    };
    out += &INSPIRATION_TASK
        .replace("{source}", source)
        .replace("{source_constraint}", constraint);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn generation_six() -> InspirationState {
        InspirationState {
            generation: 6,
            concept_pool: vec![
                "landscape".into(),
                "romanticism".into(),
                "watercolor".into(),
                "geometry".into(),
            ],
            original_concepts: vec!["landscape".into(), "romanticism".into()],
            expired_concepts: vec!["abstract_expressionism".into(), "ship".into()],
            last_artwork: Some("Wilderness Grid".into()),
            last_concepts_used: vec![
                "landscape".into(),
                "romanticism".into(),
                "watercolor".into(),
                "geometry".into(),
            ],
            performance: Some(Performance {
                fitness: 0.33,
                combined: 0.33,
                text: 0.17,
                image: 0.015,
            }),
            novelty_trend: Some(NoveltyTrend::Decreasing),
        }
    }

    #[test]
    fn inspiration_prompt_layout() {
        let text = inspiration_user_prompt(&generation_six(), InspirationMode::Constrained);
        let expected_head = "CONCEPT INSPIRATION REQUEST - Generation 6\n\n\
CURRENT CONCEPT POOL (concepts used in previous generations):\n\
[landscape, romanticism, watercolor, geometry]\n\
Original concepts: ['landscape', 'romanticism']\n\
Expired concepts (avoid these): ['abstract expressionism', 'ship']\n\
Last artwork: \"Wilderness Grid\"\n\
Last concepts used: ['landscape', 'romanticism', 'watercolor', 'geometry']\n\
\nPERFORMANCE HISTORY:\n\
Previous Performance:\n\
Fitness (Novelty): 0.33\n\
Combined Novelty: 0.33\n\
Text Novelty: 0.17\n\
Image Novelty: 0.015\n\
\nPrevious novelty trend: decreasing (need more novelty)\n\
\nINSPIRATION TASK:\n";
        assert!(text.starts_with(expected_head), "{text}");
        assert!(text.contains("- Do NOT select any expired concepts"));
    }

    #[test]
    fn compositor_prompt_layout() {
        let state = CompositionState {
            generation: 6,
            concept_pool: ["landscape", "romanticism", "watercolor", "geometry", "bioluminescence", "vintage"]
                .map(String::from)
                .to_vec(),
            original_concepts: vec!["landscape".into(), "romanticism".into()],
            expired_concepts: vec!["abstract_expressionism".into(), "ship".into()],
            newly_added: vec!["bioluminescence".into()],
            previous: Some(PreviousGeneration {
                concepts_used: ["landscape", "romanticism", "watercolor", "geometry"]
                    .map(String::from)
                    .to_vec(),
                performance: Performance {
                    fitness: 0.33,
                    combined: 0.33,
                    text: 0.17,
                    image: 0.15,
                },
            }),
            preserve_original: true,
        };
        let text = compositor_user_prompt(&state);
        assert!(text.starts_with(
            "Generation 6\n\
Current concept pool: ['landscape', 'romanticism', 'watercolor', 'geometry', 'bioluminescence', 'vintage']\n\
Original concepts (MUST BE INCLUDED): ['landscape', 'romanticism']\n\
Expired concepts (cannot be used): ['abstract expressionism', 'ship']\n\
Newly added concepts: ['bioluminescence']\n\
\nPREVIOUS GENERATION CONTEXT:\n\
Previous generation concepts used: ['landscape', 'romanticism', 'watercolor', 'geometry']\n\
Previous generation fitness: 0.33\n"
        ));
        assert!(text.contains("New concept(s) have been added to your concept pool."));
        assert!(compositor_system_prompt(true).contains("PRESERVATION RULE ACTIVATED"));
        assert!(!compositor_system_prompt(false).contains("PRESERVATION RULE"));
    }

    #[test]
    fn system_prompt_modes() {
        let c = inspiration_system_prompt(InspirationMode::Constrained, &["ukiyo_e", "moon"]);
        assert!(c.contains("You MUST select concepts ONLY from this list: [ukiyo e, moon]"));
        assert!(c.contains("\"suggested_concepts\""));
        let f = inspiration_system_prompt::<&str>(InspirationMode::Free, &[]);
        assert!(f.contains("You can suggest ANY concepts"));
    }

    #[test]
    fn trend_and_scores() {
        assert_eq!(NoveltyTrend::from_history(&[0.5]), None);
        assert_eq!(
            NoveltyTrend::from_history(&[0.5, 0.3]),
            Some(NoveltyTrend::Decreasing)
        );
        assert_eq!(format_score(0.330), "0.33");
        assert_eq!(format_score(0.0), "0");
        assert_eq!(format_score(1.0), "1");
    }
}
