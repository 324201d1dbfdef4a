//! Wire protocol between the harness and the recommender under test.
//!
//! The request type is deliberately minimal: the visible conversation and a
//! turn index, nothing else. Persona, target preferences, and simulator
//! feelings have no field to travel in, so payload secrecy is enforced by
//! construction rather than by discipline.
//!
//! Three adapters cover the usual integration shapes: an in-process scripted
//! stub for tests and demos, an HTTP endpoint, and a line-delimited
//! subprocess. All of them produce a [`CrsResponse`] that is validated and
//! then resolved against the catalog into one [`CrsTurn`].

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{resolve_item_mentions, Catalog, ItemId};

pub const MAX_RECOMMENDATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: Role,
    pub text: String,
}

impl WireMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

/// Everything the system under test is allowed to see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrsRequest {
    pub conversation: Vec<WireMessage>,
    pub turn_index: u32,
}

/// Raw adapter reply before catalog resolution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CrsResponse {
    pub message: String,
    /// Ranked item ids from the recommendation module, best first.
    pub recommendations: Vec<ItemId>,
    /// Item ids the reply text talks about, if the adapter reports them
    /// itself. `None` means "derive them from the text".
    pub mentioned_items: Option<Vec<ItemId>>,
}

/// One CRS reply after validation and catalog resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrsTurn {
    pub response_text: String,
    /// Ranked module output, ids verbatim from the adapter.
    pub recsys_items: Vec<ItemId>,
    /// Catalog items the reply demonstrably surfaces.
    pub conv_items: Vec<ItemId>,
    /// Mentions that failed to resolve to any catalog item.
    pub unresolved_mentions: u32,
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("missing field: {field}")]
    MissingField { field: &'static str },
    #[error("protocol violation: {detail}")]
    Protocol { detail: String },
    #[error("adapter transport: {detail}")]
    Transport { detail: String },
    #[error("cannot start adapter: {detail}")]
    Spawn { detail: String },
    #[error("script error: {detail}")]
    Script { detail: String },
}

/// A conversational recommender under test.
pub trait CrsAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn step(&self, request: &CrsRequest) -> Result<CrsResponse, AdapterError>;
}

/// Strict parse of the reply JSON. `message` is required and must be a
/// string; the item lists are optional arrays of strings.
pub fn parse_response(text: &str) -> Result<CrsResponse, AdapterError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| AdapterError::Protocol {
            detail: format!("reply is not valid JSON: {e}"),
        })?;
    let obj = value.as_object().ok_or_else(|| AdapterError::Protocol {
        detail: "reply is not a JSON object".to_string(),
    })?;
    let message = match obj.get("message") {
        None => return Err(AdapterError::MissingField { field: "message" }),
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(_) => {
            return Err(AdapterError::Protocol {
                detail: "field 'message' must be a string".to_string(),
            })
        }
    };
    let string_list = |key: &str| -> Result<Option<Vec<String>>, AdapterError> {
        match obj.get(key) {
            None | Some(serde_json::Value::Null) => Ok(None),
            Some(serde_json::Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    match item.as_str() {
                        Some(s) => out.push(s.to_string()),
                        None => {
                            return Err(AdapterError::Protocol {
                                detail: format!("field '{key}' must contain only strings"),
                            })
                        }
                    }
                }
                Ok(Some(out))
            }
            Some(_) => Err(AdapterError::Protocol {
                detail: format!("field '{key}' must be an array of strings"),
            }),
        }
    };
    Ok(CrsResponse {
        message,
        recommendations: string_list("recommendations")?.unwrap_or_default(),
        mentioned_items: string_list("mentioned_items")?,
    })
}

/// Protocol limits that do not depend on the catalog.
pub fn validate_response(resp: &CrsResponse) -> Result<(), AdapterError> {
    if resp.recommendations.len() > MAX_RECOMMENDATIONS {
        return Err(AdapterError::Protocol {
            detail: format!(
                "{} recommendations exceed the limit of {MAX_RECOMMENDATIONS}",
                resp.recommendations.len()
            ),
        });
    }
    let mut seen = BTreeSet::new();
    for id in &resp.recommendations {
        if !seen.insert(id.as_str()) {
            return Err(AdapterError::Protocol {
                detail: format!("duplicate recommendation id '{id}'"),
            });
        }
    }
    Ok(())
}

/// Runs one protocol step: builds the request from the visible history plus
/// the new user message, validates the reply, and resolves surfaced items.
pub fn observe_step(
    adapter: &dyn CrsAdapter,
    history: &[WireMessage],
    user_text: &str,
    turn_index: u32,
    catalog: &Catalog,
) -> Result<CrsTurn, AdapterError> {
    let mut conversation = history.to_vec();
    conversation.push(WireMessage::user(user_text));
    let request = CrsRequest {
        conversation,
        turn_index,
    };
    let response = adapter.step(&request)?;
    validate_response(&response)?;

    let (conv_items, unresolved) = match &response.mentioned_items {
        Some(ids) => {
            let mut seen = BTreeSet::new();
            let mut conv = Vec::new();
            let mut unresolved = 0u32;
            for id in ids {
                if !seen.insert(id.clone()) {
                    continue;
                }
                if catalog.contains(id) {
                    conv.push(id.clone());
                } else {
                    unresolved += 1;
                }
            }
            (conv, unresolved)
        }
        None => {
            let mentions = resolve_item_mentions(&response.message, catalog);
            let mut seen = BTreeSet::new();
            let mut conv = Vec::new();
            let mut unresolved = 0u32;
            for mention in mentions {
                match mention.item {
                    Some(id) => {
                        if seen.insert(id.clone()) {
                            conv.push(id);
                        }
                    }
                    None => unresolved += 1,
                }
            }
            (conv, unresolved)
        }
    };
    Ok(CrsTurn {
        response_text: response.message,
        recsys_items: response.recommendations,
        conv_items,
        unresolved_mentions: unresolved,
    })
}

/// One line of a scripted stub: what to answer at a given turn index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRecord {
    pub turn: u32,
    pub message: String,
    #[serde(default)]
    pub items: Vec<ItemId>,
    #[serde(default)]
    pub mentioned: Option<Vec<ItemId>>,
}

/// In-process stub driven by a turn-indexed script. Turns without a script
/// line get a neutral clarification question, so any session length works.
pub struct ScriptedCrs {
    records: Vec<ScriptRecord>,
}

pub const SCRIPT_FALLBACK_MESSAGE: &str = "Could you tell me more about what you like?";

impl ScriptedCrs {
    pub fn from_records(records: Vec<ScriptRecord>) -> Self {
        Self { records }
    }

    pub fn from_path(path: &Path) -> Result<Self, AdapterError> {
        let text = std::fs::read_to_string(path).map_err(|e| AdapterError::Script {
            detail: format!("cannot read {}: {e}", path.display()),
        })?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ScriptRecord =
                serde_json::from_str(line).map_err(|e| AdapterError::Script {
                    detail: format!("{}:{}: {e}", path.display(), i + 1),
                })?;
            records.push(record);
        }
        Ok(Self { records })
    }
}

impl CrsAdapter for ScriptedCrs {
    fn name(&self) -> &str {
        "scripted"
    }

    fn step(&self, request: &CrsRequest) -> Result<CrsResponse, AdapterError> {
        match self.records.iter().find(|r| r.turn == request.turn_index) {
            Some(r) => Ok(CrsResponse {
                message: r.message.clone(),
                recommendations: r.items.clone(),
                mentioned_items: r.mentioned.clone(),
            }),
            None => Ok(CrsResponse {
                message: SCRIPT_FALLBACK_MESSAGE.to_string(),
                recommendations: Vec::new(),
                mentioned_items: None,
            }),
        }
    }
}

/// Remote recommender behind `POST {url}`: request and reply bodies are the
/// wire JSON described above.
pub struct HttpCrs {
    url: String,
    client: reqwest::blocking::Client,
    label: String,
}

impl HttpCrs {
    pub fn new(url: impl Into<String>) -> Result<Self, AdapterError> {
        Self::with_timeout(url, Duration::from_secs(30))
    }

    pub fn with_timeout(url: impl Into<String>, timeout: Duration) -> Result<Self, AdapterError> {
        let url = url.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| AdapterError::Spawn {
                detail: format!("cannot build HTTP client: {e}"),
            })?;
        Ok(Self {
            label: format!("http:{url}"),
            url,
            client,
        })
    }
}

impl CrsAdapter for HttpCrs {
    fn name(&self) -> &str {
        &self.label
    }

    fn step(&self, request: &CrsRequest) -> Result<CrsResponse, AdapterError> {
        let resp = self
            .client
            .post(&self.url)
            .json(request)
            .send()
            .map_err(|e| AdapterError::Transport {
                detail: format!("request failed: {e}"),
            })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| AdapterError::Transport {
            detail: format!("cannot read body: {e}"),
        })?;
        if !status.is_success() {
            return Err(AdapterError::Transport {
                detail: format!("endpoint returned {status}"),
            });
        }
        parse_response(&text)
    }
}

/// Recommender spoken to over stdin/stdout, one JSON line per request and
/// one per reply. The child is spawned once and reused for every step.
pub struct SubprocessCrs {
    label: String,
    child: Mutex<ChildIo>,
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl SubprocessCrs {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, AdapterError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| AdapterError::Spawn {
                detail: format!("cannot spawn {program}: {e}"),
            })?;
        let stdin = child.stdin.take().ok_or_else(|| AdapterError::Spawn {
            detail: "child has no stdin".to_string(),
        })?;
        let stdout = child.stdout.take().ok_or_else(|| AdapterError::Spawn {
            detail: "child has no stdout".to_string(),
        })?;
        Ok(Self {
            label: format!("subprocess:{program}"),
            child: Mutex::new(ChildIo {
                child,
                stdin,
                stdout: BufReader::new(stdout),
            }),
        })
    }
}

impl CrsAdapter for SubprocessCrs {
    fn name(&self) -> &str {
        &self.label
    }

    fn step(&self, request: &CrsRequest) -> Result<CrsResponse, AdapterError> {
        let mut io = self.child.lock().unwrap();
        let line = serde_json::to_string(request).map_err(|e| AdapterError::Transport {
            detail: format!("cannot serialize request: {e}"),
        })?;
        io.stdin
            .write_all(line.as_bytes())
            .and_then(|_| io.stdin.write_all(b"\n"))
            .and_then(|_| io.stdin.flush())
            .map_err(|e| AdapterError::Transport {
                detail: format!("cannot write to child: {e}"),
            })?;
        let mut reply = String::new();
        let n = io
            .stdout
            .read_line(&mut reply)
            .map_err(|e| AdapterError::Transport {
                detail: format!("cannot read from child: {e}"),
            })?;
        if n == 0 {
            return Err(AdapterError::Transport {
                detail: "child closed stdout".to_string(),
            });
        }
        parse_response(reply.trim_end())
    }
}

impl Drop for SubprocessCrs {
    fn drop(&mut self) {
        if let Ok(mut io) = self.child.lock() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

/// Counting semaphore limiting concurrent in-flight steps.
pub struct ConcurrencyGate {
    state: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl ConcurrencyGate {
    pub fn new(cap: usize) -> Self {
        Self {
            state: Mutex::new(0),
            freed: Condvar::new(),
            cap: cap.max(1),
        }
    }

    pub fn acquire(&self) -> GatePermit<'_> {
        let mut in_flight = self.state.lock().unwrap();
        while *in_flight >= self.cap {
            in_flight = self.freed.wait(in_flight).unwrap();
        }
        *in_flight += 1;
        GatePermit { gate: self }
    }
}

pub struct GatePermit<'a> {
    gate: &'a ConcurrencyGate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.gate.state.lock().unwrap();
        *in_flight -= 1;
        self.gate.freed.notify_one();
    }
}

/// Wraps any adapter so at most `cap` steps run at once.
pub struct LimitedCrs<A> {
    inner: A,
    gate: ConcurrencyGate,
}

impl<A: CrsAdapter> LimitedCrs<A> {
    pub fn new(inner: A, cap: usize) -> Self {
        Self {
            inner,
            gate: ConcurrencyGate::new(cap),
        }
    }
}

impl<A: CrsAdapter> CrsAdapter for LimitedCrs<A> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn step(&self, request: &CrsRequest) -> Result<CrsResponse, AdapterError> {
        let _permit = self.gate.acquire();
        self.inner.step(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Catalog, Item};
    use std::collections::BTreeSet as Set;

    fn toy_catalog() -> Catalog {
        let items = vec![
            Item {
                id: "m1".to_string(),
                title: "Iron Harbor".to_string(),
                attributes: ["action"].iter().map(|s| s.to_string()).collect::<Set<_>>(),
            },
            Item {
                id: "m2".to_string(),
                title: "The Quiet Season".to_string(),
                attributes: ["drama"].iter().map(|s| s.to_string()).collect::<Set<_>>(),
            },
        ];
        Catalog::from_items(items).unwrap()
    }

    #[test]
    fn missing_message_names_the_field() {
        let err = parse_response(r#"{"recommendations": []}"#).unwrap_err();
        assert_eq!(err.to_string(), "missing field: message");
    }

    #[test]
    fn non_string_message_is_a_protocol_error() {
        let err = parse_response(r#"{"message": 5}"#).unwrap_err();
        assert!(matches!(err, AdapterError::Protocol { .. }));
    }

    #[test]
    fn item_lists_must_hold_strings() {
        let err = parse_response(r#"{"message": "hi", "recommendations": [1]}"#).unwrap_err();
        assert!(matches!(err, AdapterError::Protocol { .. }));
    }

    #[test]
    fn null_mentioned_items_means_derive_from_text() {
        let resp = parse_response(r#"{"message": "hi", "mentioned_items": null}"#).unwrap();
        assert!(resp.mentioned_items.is_none());
        let resp = parse_response(r#"{"message": "hi", "mentioned_items": []}"#).unwrap();
        assert_eq!(resp.mentioned_items, Some(Vec::new()));
    }

    #[test]
    fn oversized_recommendation_lists_are_rejected() {
        let resp = CrsResponse {
            message: "hi".to_string(),
            recommendations: (0..=MAX_RECOMMENDATIONS).map(|i| format!("m{i}")).collect(),
            mentioned_items: None,
        };
        let err = validate_response(&resp).unwrap_err();
        assert!(err.to_string().contains("51 recommendations"));
    }

    #[test]
    fn duplicate_recommendations_are_rejected() {
        let resp = CrsResponse {
            message: "hi".to_string(),
            recommendations: vec!["m1".to_string(), "m1".to_string()],
            mentioned_items: None,
        };
        assert!(validate_response(&resp).is_err());
    }

    #[test]
    fn request_wire_shape_is_exactly_conversation_and_turn_index() {
        let request = CrsRequest {
            conversation: vec![WireMessage::user("hello")],
            turn_index: 1,
        };
        let json = serde_json::to_string(&request).unwrap();
        assert_eq!(
            json,
            r#"{"conversation":[{"role":"user","text":"hello"}],"turn_index":1}"#
        );
    }

    #[test]
    fn observe_step_resolves_mentions_from_text() {
        let catalog = toy_catalog();
        let stub = ScriptedCrs::from_records(vec![ScriptRecord {
            turn: 1,
            message: "You might enjoy 'Iron Harbor' or maybe The Mystery Blob.".to_string(),
            items: vec!["m2".to_string()],
            mentioned: None,
        }]);
        let turn = observe_step(&stub, &[], "hi", 1, &catalog).unwrap();
        assert_eq!(turn.conv_items, vec!["m1".to_string()]);
        assert_eq!(turn.recsys_items, vec!["m2".to_string()]);
        assert_eq!(turn.unresolved_mentions, 1);
    }

    #[test]
    fn observe_step_trusts_declared_mentions_but_checks_the_catalog() {
        let catalog = toy_catalog();
        let stub = ScriptedCrs::from_records(vec![ScriptRecord {
            turn: 1,
            message: "Here are two picks.".to_string(),
            items: vec![],
            mentioned: Some(vec![
                "m2".to_string(),
                "ghost".to_string(),
                "m2".to_string(),
            ]),
        }]);
        let turn = observe_step(&stub, &[], "hi", 1, &catalog).unwrap();
        assert_eq!(turn.conv_items, vec!["m2".to_string()]);
        assert_eq!(turn.unresolved_mentions, 1);
    }

    #[test]
    fn scripted_stub_falls_back_on_unscripted_turns() {
        let stub = ScriptedCrs::from_records(vec![]);
        let resp = stub
            .step(&CrsRequest {
                conversation: vec![WireMessage::user("hi")],
                turn_index: 3,
            })
            .unwrap();
        assert_eq!(resp.message, SCRIPT_FALLBACK_MESSAGE);
        assert!(resp.recommendations.is_empty());
    }

    #[test]
    fn shipped_demo_script_parses() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample_stub.jsonl");
        let stub = ScriptedCrs::from_path(&path).unwrap();
        assert!(!stub.records.is_empty());
    }

    #[test]
    fn gate_limits_concurrent_steps() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;

        struct Slow {
            current: AtomicUsize,
            peak: AtomicUsize,
        }
        impl CrsAdapter for Slow {
            fn name(&self) -> &str {
                "slow"
            }
            fn step(&self, _req: &CrsRequest) -> Result<CrsResponse, AdapterError> {
                let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(20));
                self.current.fetch_sub(1, Ordering::SeqCst);
                Ok(CrsResponse {
                    message: "ok".to_string(),
                    ..Default::default()
                })
            }
        }

        let adapter = Arc::new(LimitedCrs::new(
            Slow {
                current: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
            },
            2,
        ));
        std::thread::scope(|scope| {
            for _ in 0..6 {
                let adapter = Arc::clone(&adapter);
                scope.spawn(move || {
                    adapter
                        .step(&CrsRequest {
                            conversation: vec![],
                            turn_index: 1,
                        })
                        .unwrap();
                });
            }
        });
        assert!(adapter.inner.peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(adapter.inner.current.load(Ordering::SeqCst), 0);
    }
}
