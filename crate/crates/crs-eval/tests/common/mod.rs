//! Shared fixtures for the integration suites: a deterministic chat
//! provider, canned data files, and a seeded transcript generator.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crs_eval::adapter::CrsTurn;
use crs_eval::catalog::{AttributeGroup, Catalog, Item};
use crs_eval::gateway::{ChatTransport, DecodingConfig, TransportError};
use crs_eval::persona::{Persona, UserSpec};
use crs_eval::session::{RunMetadata, Termination, Transcript, Turn};

pub const GOOD_RUBRIC: &str = r#"{"Relevance": [4, "matched the ask", "offered an action film"],
    "Quality": [4, "solid picks", "both leads fit"],
    "Manner": [5, "polite", "thanked the user"],
    "Human-like": [4, "natural", "varied phrasing"],
    "Explanation": [4, "reasoned", "cited pacing"]}"#;

pub const GOOD_FEELINGS: &str = r#"{"sentence sentiment": {"1": ["Curiosity", "asked openly"]},
    "overall feeling": "Satisfaction",
    "feeling changes": "warmed toward the suggestions"}"#;

pub const GOOD_OVERALL: &str = r#"{"Overall Performance": [4, "quick success", "accepted fast"],
    "User Satisfaction": [5, "pleased", "said it sounds perfect"]}"#;

pub const GOOD_SOCIAL: &str = r#"{"Social Awareness": [4, "acknowledged mood", "mirrored excitement"]}"#;

/// Deterministic provider: replies are a pure function of the prompt.
/// The simulated user accepts once `accept_after` recommender replies are
/// visible in the history.
pub struct FakeProvider {
    pub accept_after: usize,
}

impl Default for FakeProvider {
    fn default() -> Self {
        Self { accept_after: 2 }
    }
}

impl ChatTransport for FakeProvider {
    fn complete(
        &self,
        _model: &str,
        prompt: &str,
        _decoding: &DecodingConfig,
    ) -> Result<String, TransportError> {
        Ok(self.reply(prompt))
    }
}

impl FakeProvider {
    fn reply(&self, prompt: &str) -> String {
        if prompt.contains("rewrite each paragraph") {
            return "I am an easy-going person who trusts recommendations.".to_string();
        }
        if prompt.contains("Paraphrase the following message") {
            let original = prompt.rsplit("Message:").next().unwrap_or("").trim();
            return format!("Put differently: {original}");
        }
        if prompt.contains("The Seeker notes how he feels") {
            return "Hopeful that something good comes up.".to_string();
        }
        if prompt.contains("Here is your feelings about the recommender") {
            if prompt.matches("Recommender: ").count() >= self.accept_after {
                return "That sounds perfect, I will watch it. [END]".to_string();
            }
            return "Do you have something exciting for me?".to_string();
        }
        if prompt.contains("could not be parsed") {
            return GOOD_RUBRIC.to_string();
        }
        if prompt.contains("Social Awareness") {
            return GOOD_SOCIAL.to_string();
        }
        if prompt.contains("sentence sentiment") {
            return GOOD_FEELINGS.to_string();
        }
        if prompt.contains("Other Judgements") {
            return GOOD_OVERALL.to_string();
        }
        GOOD_RUBRIC.to_string()
    }
}

pub fn write_lines(path: &Path, lines: &[&str]) {
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

pub struct DataFiles {
    pub catalog: PathBuf,
    pub groups: PathBuf,
    pub lexicon: PathBuf,
    pub sentiments: PathBuf,
    pub stub: PathBuf,
}

/// Small three-item corpus: two action titles, one drama, a single-label
/// target group, and a stub that surfaces an item from turn one.
pub fn standard_data(dir: &Path) -> DataFiles {
    let catalog = dir.join("catalog.jsonl");
    write_lines(
        &catalog,
        &[
            r#"{"id": "m01", "title": "Iron Harbor", "attributes": ["action"]}"#,
            r#"{"id": "m02", "title": "Quiet Season", "attributes": ["drama"]}"#,
            r#"{"id": "m03", "title": "Copper Dawn", "attributes": ["action"]}"#,
        ],
    );
    let groups = dir.join("groups.jsonl");
    write_lines(&groups, &[r#"{"labels": ["action"]}"#]);
    let lexicon = dir.join("lexicon.jsonl");
    write_lines(
        &lexicon,
        &[
            r#"{"label": "action", "phrase": "fast-paced action film"}"#,
            r#"{"label": "drama", "phrase": "slow-burning drama"}"#,
        ],
    );
    let sentiments = dir.join("sentiments.jsonl");
    write_lines(
        &sentiments,
        &[
            r#"{"name": "Trust", "description": "inclined to take suggestions at face value"}"#,
            r#"{"name": "Delight", "description": "quick to express joy at good finds"}"#,
        ],
    );
    let stub = dir.join("stub.jsonl");
    write_lines(
        &stub,
        &[
            r#"{"turn": 1, "message": "Have you seen Iron Harbor?", "items": ["m01", "m03"]}"#,
            r#"{"turn": 2, "message": "Then try Copper Dawn.", "items": ["m03"], "mentioned": ["m03"]}"#,
        ],
    );
    DataFiles {
        catalog,
        groups,
        lexicon,
        sentiments,
        stub,
    }
}

fn item(id: &str, title: &str, attrs: &[&str]) -> Item {
    Item {
        id: id.to_string(),
        title: title.to_string(),
        attributes: attrs.iter().map(|s| s.to_string()).collect(),
    }
}

/// Eight items over three labels; every label and pair used by the
/// generator has at least one matching item.
pub fn oracle_catalog() -> Catalog {
    Catalog::from_items(vec![
        item("m1", "Iron Harbor", &["action"]),
        item("m2", "Copper Dawn", &["action"]),
        item("m3", "Quiet Season", &["drama"]),
        item("m4", "Glass Orchard", &["drama"]),
        item("m5", "Penny Circus", &["comedy"]),
        item("m6", "Salt Meridian", &["action", "drama"]),
        item("m7", "Velvet Alibi", &["comedy", "drama"]),
        item("m8", "Last Tramline", &["action", "comedy"]),
    ])
    .unwrap()
}

const TARGETS: [&[&str]; 5] = [
    &["action"],
    &["drama"],
    &["comedy"],
    &["action", "drama"],
    &["comedy", "drama"],
];

const ITEM_POOL: [&str; 9] = [
    "m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8", "ghost-item",
];

fn random_items(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<String> {
    let len = rng.gen_range(0..=max_len);
    let mut out = Vec::new();
    while out.len() < len {
        let pick = ITEM_POOL[rng.gen_range(0..ITEM_POOL.len())].to_string();
        if !out.contains(&pick) {
            out.push(pick);
        }
    }
    out
}

/// One synthetic transcript drawn from the seeded generator. Shapes match
/// what run_conversation would produce: 1-based sequential turns, an
/// accepted session ending on a CRS-less turn.
pub fn random_transcript(rng: &mut ChaCha8Rng, cell: &str) -> Transcript {
    let target_labels = TARGETS[rng.gen_range(0..TARGETS.len())];
    let target =
        AttributeGroup::new(target_labels.iter().map(|s| s.to_string()).collect()).unwrap();
    let body_turns = rng.gen_range(1..=6u32);
    let termination = match rng.gen_range(0..10) {
        0..=4 => Termination::Accepted,
        5..=8 => Termination::TurnCap,
        _ => Termination::Error,
    };
    let mut turns: Vec<Turn> = (1..=body_turns)
        .map(|index| Turn {
            index,
            user_feeling: format!("feeling {index}"),
            user_text: format!("message {index}"),
            crs: Some(CrsTurn {
                response_text: format!("reply {index} with a few words"),
                recsys_items: random_items(rng, 5),
                conv_items: random_items(rng, 2),
                unresolved_mentions: rng.gen_range(0..=2),
            }),
        })
        .collect();
    if termination == Termination::Accepted {
        turns.push(Turn {
            index: body_turns + 1,
            user_feeling: "content".to_string(),
            user_text: "that works for me [END]".to_string(),
            crs: None,
        });
    }
    Transcript {
        cell_id: cell.to_string(),
        user_spec: UserSpec {
            cell_id: cell.to_string(),
            persona: Persona {
                sentiment: ["Trust", "Delight", "Boredom"][rng.gen_range(0..3)].to_string(),
                age_group: ["Adults", "Teens"][rng.gen_range(0..2)].to_string(),
                description: "a synthetic persona".to_string(),
            },
            target,
            adjusted_preferences: vec!["a synthetic preference".to_string()],
        },
        turns,
        terminated_by: termination,
        metadata: RunMetadata {
            config_digest: "synthetic".to_string(),
            started_at: "t0".to_string(),
            finished_at: "t1".to_string(),
            error: None,
        },
    }
}

pub fn random_transcripts(seed: u64, count: usize) -> Vec<Transcript> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| random_transcript(&mut rng, &format!("cell-{seed}-{i:03}")))
        .collect()
}
