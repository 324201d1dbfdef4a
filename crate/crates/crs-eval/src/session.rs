//! Conversation sessions and their persisted transcripts.
//!
//! A session interleaves simulator turns and adapter steps until the user
//! accepts, the turn cap is hit, or something fails. Turns are 1-based. The
//! terminal accepted turn records the user's acceptance message and no CRS
//! reply. On error the transcript is still produced (and persisted by the
//! runner) with what completed so far, so a crashed run leaves evidence
//! rather than a hole.
//!
//! Success is perspective-relative and derived, never stored: the module
//! perspective looks at ranked recommendations, the conversation perspective
//! at items the reply text surfaces, the user perspective at acceptance.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{observe_step, CrsAdapter, CrsTurn, WireMessage};
use crate::catalog::{matches_preference, Catalog, ItemId};
use crate::persona::UserSpec;
use crate::simulator::{detect_acceptance, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Accepted,
    TurnCap,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perspective {
    Module,
    Conversation,
    User,
}

impl Perspective {
    pub const ALL: [Perspective; 3] = [
        Perspective::Module,
        Perspective::Conversation,
        Perspective::User,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Perspective::Module => "module",
            Perspective::Conversation => "conversation",
            Perspective::User => "user",
        }
    }
}

/// One user turn and, unless the turn accepted or errored, the CRS reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// 1-based position in the session.
    pub index: u32,
    /// The simulator's private feeling, first call of the turn.
    pub user_feeling: String,
    /// The visible user message, second call of the turn.
    pub user_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crs: Option<CrsTurn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_digest: String,
    pub started_at: String,
    pub finished_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub cell_id: String,
    pub user_spec: UserSpec,
    pub turns: Vec<Turn>,
    pub terminated_by: Termination,
    pub metadata: RunMetadata,
}

#[derive(Debug, Clone, Copy)]
pub struct SessionConfig {
    pub max_turns: u32,
    /// How deep into the ranked list the module perspective looks.
    pub module_success_depth: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_turns: 10,
            module_success_depth: 10,
        }
    }
}

/// Timestamp source. Replays use a fixed clock so artifacts come out
/// byte-identical; live runs use the system clock.
pub trait Clock: Send + Sync {
    fn now(&self) -> String;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        chrono::Utc::now()
            .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }
}

pub struct FixedClock(pub String);

impl Default for FixedClock {
    fn default() -> Self {
        Self("1970-01-01T00:00:00Z".to_string())
    }
}

impl Clock for FixedClock {
    fn now(&self) -> String {
        self.0.clone()
    }
}

/// Runs one full session. The simulated user speaks first. Simulator or
/// adapter failures terminate the session with `Termination::Error` and the
/// failure text in the metadata; turns completed so far are kept.
pub fn run_conversation(
    spec: &UserSpec,
    simulator: &Simulator<'_>,
    adapter: &dyn CrsAdapter,
    catalog: &Catalog,
    session: &SessionConfig,
    config_digest: &str,
    clock: &dyn Clock,
) -> Transcript {
    let started_at = clock.now();
    let mut history: Vec<WireMessage> = Vec::new();
    let mut turns: Vec<Turn> = Vec::new();
    let mut terminated_by = Termination::TurnCap;
    let mut error = None;

    for index in 1..=session.max_turns {
        let feeling = match simulator.inner_monologue(spec, &history) {
            Ok(f) => f,
            Err(e) => {
                terminated_by = Termination::Error;
                error = Some(format!("turn {index}: {e}"));
                break;
            }
        };
        let user_text = match simulator.next_user_message(spec, &history, &feeling) {
            Ok(m) => m,
            Err(e) => {
                terminated_by = Termination::Error;
                error = Some(format!("turn {index}: {e}"));
                break;
            }
        };
        if detect_acceptance(&user_text) {
            turns.push(Turn {
                index,
                user_feeling: feeling,
                user_text,
                crs: None,
            });
            terminated_by = Termination::Accepted;
            break;
        }
        let crs_turn = match observe_step(adapter, &history, &user_text, index, catalog) {
            Ok(t) => t,
            Err(e) => {
                turns.push(Turn {
                    index,
                    user_feeling: feeling,
                    user_text,
                    crs: None,
                });
                terminated_by = Termination::Error;
                error = Some(format!("turn {index}: {e}"));
                break;
            }
        };
        history.push(WireMessage::user(&user_text));
        history.push(WireMessage::assistant(&crs_turn.response_text));
        turns.push(Turn {
            index,
            user_feeling: feeling,
            user_text,
            crs: Some(crs_turn),
        });
    }

    Transcript {
        cell_id: spec.cell_id.clone(),
        user_spec: spec.clone(),
        turns,
        terminated_by,
        metadata: RunMetadata {
            config_digest: config_digest.to_string(),
            started_at,
            finished_at: clock.now(),
            error,
        },
    }
}

/// The visible conversation a transcript encodes, in wire form.
pub fn visible_history(transcript: &Transcript) -> Vec<WireMessage> {
    let mut out = Vec::new();
    for turn in &transcript.turns {
        out.push(WireMessage::user(&turn.user_text));
        if let Some(crs) = &turn.crs {
            out.push(WireMessage::assistant(&crs.response_text));
        }
    }
    out
}

fn item_matches(catalog: &Catalog, id: &ItemId, spec: &UserSpec) -> bool {
    catalog
        .get(id)
        .is_some_and(|item| matches_preference(item, &spec.target))
}

/// Earliest 1-based turn at which the given perspective counts the session
/// as successful, if any.
pub fn first_success_turn(
    transcript: &Transcript,
    perspective: Perspective,
    catalog: &Catalog,
    module_success_depth: usize,
) -> Option<u32> {
    let spec = &transcript.user_spec;
    match perspective {
        Perspective::Module => transcript.turns.iter().find_map(|turn| {
            let crs = turn.crs.as_ref()?;
            crs.recsys_items
                .iter()
                .take(module_success_depth)
                .any(|id| item_matches(catalog, id, spec))
                .then_some(turn.index)
        }),
        Perspective::Conversation => transcript.turns.iter().find_map(|turn| {
            let crs = turn.crs.as_ref()?;
            crs.conv_items
                .iter()
                .any(|id| item_matches(catalog, id, spec))
                .then_some(turn.index)
        }),
        Perspective::User => (transcript.terminated_by == Termination::Accepted)
            .then(|| transcript.turns.last().map(|t| t.index))
            .flatten(),
    }
}

/// Items the user accepted: the surfaced items of the most recent CRS reply
/// before the acceptance turn that surfaced anything. Empty when the user
/// accepted without any resolvable item on the table.
pub fn accepted_items(transcript: &Transcript) -> Vec<ItemId> {
    if transcript.terminated_by != Termination::Accepted {
        return Vec::new();
    }
    transcript
        .turns
        .iter()
        .rev()
        .filter_map(|turn| turn.crs.as_ref())
        .map(|crs| &crs.conv_items)
        .find(|items| !items.is_empty())
        .cloned()
        .unwrap_or_default()
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Serde { path: String, detail: String },
}

/// Writes `{cell_id}.json` into the directory and returns the path.
pub fn write_transcript(dir: &Path, transcript: &Transcript) -> Result<PathBuf, SessionError> {
    let path = dir.join(format!("{}.json", transcript.cell_id));
    let json = serde_json::to_string_pretty(transcript).map_err(|e| SessionError::Serde {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    fs::write(&path, json + "\n").map_err(|source| SessionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}

pub fn read_transcript(path: &Path) -> Result<Transcript, SessionError> {
    let text = fs::read_to_string(path).map_err(|source| SessionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| SessionError::Serde {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{ScriptRecord, ScriptedCrs};
    use crate::catalog::{AttributeGroup, Catalog, Item};
    use crate::gateway::{ChatTransport, DecodingConfig, Gateway, TransportError};
    use crate::persona::Persona;
    use crate::prompts::PromptSet;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn catalog() -> Catalog {
        let mk = |id: &str, title: &str, attrs: &[&str]| Item {
            id: id.to_string(),
            title: title.to_string(),
            attributes: attrs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
        };
        Catalog::from_items(vec![
            mk("m1", "Iron Harbor", &["action", "adventure"]),
            mk("m2", "Quiet Season", &["drama"]),
        ])
        .unwrap()
    }

    fn spec() -> UserSpec {
        UserSpec {
            cell_id: "curiosity-adults-g01".to_string(),
            persona: Persona {
                sentiment: "Curiosity".to_string(),
                age_group: "Adults".to_string(),
                description: "I am a curious viewer.".to_string(),
            },
            target: AttributeGroup::new(vec!["action".to_string()]).unwrap(),
            adjusted_preferences: vec!["thrilling and adrenaline-pumping action movie".to_string()],
        }
    }

    /// Deterministic simulated user: feelings are fixed, messages accept
    /// after the recommender has spoken `accept_after` times.
    struct UserScript {
        accept_after: usize,
    }

    impl ChatTransport for UserScript {
        fn complete(
            &self,
            _m: &str,
            prompt: &str,
            _d: &DecodingConfig,
        ) -> Result<String, TransportError> {
            if prompt.contains("The Seeker notes how he feels") {
                return Ok("I feel curious about what comes next.".to_string());
            }
            let replies = prompt.matches("Recommender: ").count();
            if replies >= self.accept_after {
                Ok("That one sounds perfect, I will take it. [END]".to_string())
            } else {
                Ok("Can you suggest something thrilling?".to_string())
            }
        }
    }

    fn scripted_adapter() -> ScriptedCrs {
        ScriptedCrs::from_records(vec![
            ScriptRecord {
                turn: 1,
                message: "What are you in the mood for?".to_string(),
                items: vec![],
                mentioned: None,
            },
            ScriptRecord {
                turn: 2,
                message: "You might like 'Iron Harbor'.".to_string(),
                items: vec!["m1".to_string()],
                mentioned: None,
            },
        ])
    }

    fn run(accept_after: usize, max_turns: u32) -> Transcript {
        let gw = Gateway::live("m", Arc::new(UserScript { accept_after }));
        let prompts = PromptSet::builtin();
        let sim = Simulator::new(&gw, &prompts, DecodingConfig::default());
        let adapter = scripted_adapter();
        let cfg = SessionConfig {
            max_turns,
            module_success_depth: 10,
        };
        run_conversation(
            &spec(),
            &sim,
            &adapter,
            &catalog(),
            &cfg,
            "digest",
            &FixedClock::default(),
        )
    }

    #[test]
    fn accepted_session_ends_with_a_crs_less_turn() {
        let t = run(2, 10);
        assert_eq!(t.terminated_by, Termination::Accepted);
        assert_eq!(t.turns.len(), 3);
        assert_eq!(t.turns[0].index, 1);
        assert!(t.turns[0].crs.is_some());
        assert!(t.turns[1].crs.is_some());
        let last = t.turns.last().unwrap();
        assert!(last.crs.is_none());
        assert!(detect_acceptance(&last.user_text));
        assert!(t.metadata.error.is_none());
        // Every non-terminal turn carries a feeling and a CRS reply.
        for turn in &t.turns {
            assert!(!turn.user_feeling.is_empty());
        }
    }

    #[test]
    fn turn_cap_bounds_the_session() {
        let t = run(99, 4);
        assert_eq!(t.terminated_by, Termination::TurnCap);
        assert_eq!(t.turns.len(), 4);
        assert!(t.turns.iter().all(|turn| turn.crs.is_some()));
        assert_eq!(t.turns.last().unwrap().index, 4);
    }

    #[test]
    fn adapter_failure_keeps_the_partial_transcript() {
        struct FailingAt(u32);
        impl crate::adapter::CrsAdapter for FailingAt {
            fn name(&self) -> &str {
                "failing"
            }
            fn step(
                &self,
                req: &crate::adapter::CrsRequest,
            ) -> Result<crate::adapter::CrsResponse, crate::adapter::AdapterError> {
                if req.turn_index >= self.0 {
                    Err(crate::adapter::AdapterError::Transport {
                        detail: "connection reset".to_string(),
                    })
                } else {
                    Ok(crate::adapter::CrsResponse {
                        message: "Tell me more.".to_string(),
                        ..Default::default()
                    })
                }
            }
        }
        let gw = Gateway::live("m", Arc::new(UserScript { accept_after: 99 }));
        let prompts = PromptSet::builtin();
        let sim = Simulator::new(&gw, &prompts, DecodingConfig::default());
        let t = run_conversation(
            &spec(),
            &sim,
            &FailingAt(2),
            &catalog(),
            &SessionConfig::default(),
            "digest",
            &FixedClock::default(),
        );
        assert_eq!(t.terminated_by, Termination::Error);
        assert_eq!(t.turns.len(), 2);
        assert!(t.turns[0].crs.is_some());
        assert!(t.turns[1].crs.is_none());
        let err = t.metadata.error.as_deref().unwrap();
        assert!(err.contains("turn 2"), "{err}");
        assert!(err.contains("connection reset"), "{err}");
    }

    #[test]
    fn perspectives_disagree_by_design() {
        // Turn 1: ranked list only. Turn 2: text mention only. Turn 3: accept.
        let adapter = ScriptedCrs::from_records(vec![
            ScriptRecord {
                turn: 1,
                message: "Give me a second to think.".to_string(),
                items: vec!["m1".to_string()],
                mentioned: None,
            },
            ScriptRecord {
                turn: 2,
                message: "How about 'Iron Harbor'?".to_string(),
                items: vec![],
                mentioned: None,
            },
        ]);
        let gw = Gateway::live("m", Arc::new(UserScript { accept_after: 2 }));
        let prompts = PromptSet::builtin();
        let sim = Simulator::new(&gw, &prompts, DecodingConfig::default());
        let t = run_conversation(
            &spec(),
            &sim,
            &adapter,
            &catalog(),
            &SessionConfig::default(),
            "digest",
            &FixedClock::default(),
        );
        assert_eq!(t.terminated_by, Termination::Accepted);
        let c = catalog();
        assert_eq!(first_success_turn(&t, Perspective::Module, &c, 10), Some(1));
        assert_eq!(
            first_success_turn(&t, Perspective::Conversation, &c, 10),
            Some(2)
        );
        assert_eq!(first_success_turn(&t, Perspective::User, &c, 10), Some(3));
    }

    #[test]
    fn module_depth_limits_what_counts() {
        let adapter = ScriptedCrs::from_records(vec![ScriptRecord {
            turn: 1,
            message: "Some ideas.".to_string(),
            items: vec!["m2".to_string(), "m1".to_string()],
            mentioned: None,
        }]);
        let gw = Gateway::live("m", Arc::new(UserScript { accept_after: 99 }));
        let prompts = PromptSet::builtin();
        let sim = Simulator::new(&gw, &prompts, DecodingConfig::default());
        let t = run_conversation(
            &spec(),
            &sim,
            &adapter,
            &catalog(),
            &SessionConfig {
                max_turns: 1,
                module_success_depth: 10,
            },
            "digest",
            &FixedClock::default(),
        );
        let c = catalog();
        assert_eq!(first_success_turn(&t, Perspective::Module, &c, 1), None);
        assert_eq!(first_success_turn(&t, Perspective::Module, &c, 2), Some(1));
    }

    #[test]
    fn accepted_items_prefer_the_latest_surfacing_reply() {
        let t = run(2, 10);
        // Turn 2 mentioned 'Iron Harbor' in text; acceptance follows.
        assert_eq!(accepted_items(&t), vec!["m1".to_string()]);

        // No surfaced item at all: acceptance with empty accepted set.
        let adapter = ScriptedCrs::from_records(vec![]);
        let gw = Gateway::live("m", Arc::new(UserScript { accept_after: 1 }));
        let prompts = PromptSet::builtin();
        let sim = Simulator::new(&gw, &prompts, DecodingConfig::default());
        let t2 = run_conversation(
            &spec(),
            &sim,
            &adapter,
            &catalog(),
            &SessionConfig::default(),
            "digest",
            &FixedClock::default(),
        );
        assert_eq!(t2.terminated_by, Termination::Accepted);
        assert!(accepted_items(&t2).is_empty());

        // Unaccepted sessions never report accepted items.
        let t3 = run(99, 3);
        assert!(accepted_items(&t3).is_empty());
    }

    #[test]
    fn transcripts_roundtrip_through_disk() {
        let t = run(2, 10);
        let dir = tempfile::tempdir().unwrap();
        let path = write_transcript(dir.path(), &t).unwrap();
        assert!(path.ends_with("curiosity-adults-g01.json"));
        let back = read_transcript(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn visible_history_tracks_turn_structure() {
        let t = run(2, 10);
        let history = visible_history(&t);
        // Two full turns plus the acceptance message.
        assert_eq!(history.len(), 5);
        assert_eq!(history[0].role, crate::adapter::Role::User);
        assert_eq!(history[1].role, crate::adapter::Role::Assistant);
        assert!(detect_acceptance(&history[4].text));
    }
}
