//! Candidate sentence generation through a language-model client.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::AuAnnotation;
use crate::coeffspace::Emotion;
use crate::error::{Error, Result};

/// What the language model is asked to write about.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePrompt {
    pub video_id: String,
    pub emotion_word: String,
    /// Level-qualified AU descriptions, in registry order.
    pub au_descriptions: Vec<String>,
    pub count: usize,
}

pub trait LlmClient: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, prompt: &CandidatePrompt) -> Result<Vec<String>>;
}

pub fn emotion_word(emotion: Emotion) -> &'static str {
    match emotion {
        Emotion::Neutral => "calm",
        Emotion::Angry => "angry",
        Emotion::Contempt => "contemptuous",
        Emotion::Disgusted => "disgusted",
        Emotion::Fear => "fearful",
        Emotion::Happy => "happy",
        Emotion::Sad => "sad",
        Emotion::Surprised => "surprised",
    }
}

const WITH_AUS: [&str; 10] = [
    "The person looks {E}, with {A}.",
    "A {E} face showing {A}.",
    "With {A}, the speaker appears {E}.",
    "Someone who seems {E}: {A}.",
    "{A} give the face a {E} look.",
    "The expression is {E}, marked by {A}.",
    "Looking {E}, the talker has {A}.",
    "Here {A} suggest a {E} mood.",
    "A {E} speaker whose face shows {A}.",
    "This is a {E} expression featuring {A}.",
];

const WITHOUT_AUS: [&str; 10] = [
    "The person looks {E}.",
    "A {E} face.",
    "The speaker appears {E}.",
    "Someone who seems {E}.",
    "The face has a {E} look.",
    "The expression is {E}.",
    "Looking {E}, the talker speaks.",
    "Here the mood is {E}.",
    "A {E} speaker.",
    "This is a {E} expression.",
];

const OPENERS: [&str; 2] = ["", "In this clip, "];

/// Most candidates the mock can produce without repeating itself.
pub const MOCK_CAPACITY: usize = WITH_AUS.len() * OPENERS.len();

fn join_descriptions(parts: &[String]) -> String {
    match parts {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn capitalize_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Fills syntactic templates in a seeded order.
#[derive(Clone, Debug)]
pub struct MockLlm {
    seed: u64,
}

impl MockLlm {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl LlmClient for MockLlm {
    fn name(&self) -> &str {
        "mock-llm"
    }

    fn generate(&self, prompt: &CandidatePrompt) -> Result<Vec<String>> {
        if prompt.count > MOCK_CAPACITY {
            return Err(Error::Config(format!(
                "mock language model offers at most {MOCK_CAPACITY} candidates, asked for {}",
                prompt.count
            )));
        }
        let templates = if prompt.au_descriptions.is_empty() { &WITHOUT_AUS } else { &WITH_AUS };
        let aus = join_descriptions(&prompt.au_descriptions);
        let mut slots: Vec<(usize, usize)> = (0..OPENERS.len())
            .flat_map(|o| (0..templates.len()).map(move |t| (o, t)))
            .collect();
        let seed = self.seed ^ crate::conditioning::hash_seed(&[prompt.video_id.as_bytes()]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Plain templates first so small requests never need an opener.
        slots[..templates.len()].shuffle(&mut rng);
        slots[templates.len()..].shuffle(&mut rng);
        Ok(slots
            .into_iter()
            .take(prompt.count)
            .map(|(o, t)| {
                let body = templates[t].replace("{E}", &prompt.emotion_word).replace("{A}", &aus);
                if OPENERS[o].is_empty() {
                    capitalize_first(&body)
                } else {
                    let mut lower = body.chars();
                    let first = lower.next().map(|c| c.to_lowercase().collect::<String>()).unwrap_or_default();
                    format!("{}{first}{}", OPENERS[o], lower.as_str())
                }
            })
            .collect())
    }
}

/// Asks `llm` for `k` sentences and checks that each names the emotion and
/// every activated AU description.
pub fn generate_candidates(
    video_id: &str,
    emotion: Emotion,
    annotations: &[AuAnnotation],
    llm: &dyn LlmClient,
    k: usize,
) -> Result<Vec<String>> {
    if k < 5 {
        return Err(Error::Config(format!("need at least 5 candidates, asked for {k}")));
    }
    let au_descriptions = annotations
        .iter()
        .filter_map(|a| a.level.map(|l| super::au::lookup(a.au_id).and_then(|au| au.describe(l))))
        .collect::<Result<Vec<_>>>()?;
    let prompt = CandidatePrompt {
        video_id: video_id.to_string(),
        emotion_word: emotion_word(emotion).to_string(),
        au_descriptions,
        count: k,
    };
    let out = llm.generate(&prompt).map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Pipeline { video_id: video_id.to_string(), message: format!("{}: {other}", llm.name()) },
    })?;
    let fail = |message: String| Error::Pipeline { video_id: video_id.to_string(), message };
    if out.len() != k {
        return Err(fail(format!("{} returned {} candidates, expected {k}", llm.name(), out.len())));
    }
    for s in &out {
        let lower = s.to_lowercase();
        if !lower.contains(&prompt.emotion_word) {
            return Err(fail(format!("candidate `{s}` omits `{}`", prompt.emotion_word)));
        }
        if let Some(missing) = prompt.au_descriptions.iter().find(|d| !lower.contains(d.as_str())) {
            return Err(fail(format!("candidate `{s}` omits `{missing}`")));
        }
    }
    Ok(out)
}
