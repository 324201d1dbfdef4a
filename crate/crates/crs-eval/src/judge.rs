//! Rubric-driven judging of finished conversations.
//!
//! Scoring one transcript is three model calls in a fixed order, plus an
//! optional fourth:
//! 1. rubric scores over the visible conversation,
//! 2. sentiment classification of the simulator's private feelings,
//! 3. an overall verdict that sees the rubric scores and feeling summary,
//! 4. (optional) a social-awareness score over the visible conversation.
//!
//! Replies must be JSON with exactly the expected keys. Parsing tolerates
//! prose around one JSON object (first `{` to last `}`) but nothing else:
//! no clamping, no key aliasing, no defaulting. A malformed reply gets one
//! repair re-prompt quoting the broken reply; if that also fails to parse,
//! the transcript is flagged and excluded rather than silently patched.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{DecodingConfig, Gateway, GatewayError};
use crate::prompts::{PromptError, PromptSet};
use crate::session::{visible_history, Transcript};
use crate::simulator::history_slot;

pub const RUBRIC_CRITERIA: [&str; 5] =
    ["Relevance", "Quality", "Manner", "Human-like", "Explanation"];

pub const SOCIAL_CRITERION: &str = "Social Awareness";

/// Closed vocabulary for feeling classification.
pub const SENTIMENT_LABELS: [&str; 10] = [
    "Satisfaction",
    "Delight",
    "Disappointment",
    "Frustration",
    "Surprise",
    "Trust",
    "Curiosity",
    "Indifference",
    "Confusion",
    "Excitement",
];

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("{stage} reply is not JSON: {detail}")]
    InvalidJson { stage: &'static str, detail: String },
    #[error("{stage} reply is missing key '{key}'")]
    MissingKey { stage: &'static str, key: String },
    #[error("{stage} reply has unexpected shape: {detail}")]
    WrongShape { stage: &'static str, detail: String },
    #[error("score for '{criterion}' is {score}, outside 1..=5")]
    ScoreOutOfRange { criterion: String, score: i64 },
    #[error("score for '{criterion}' is not an integer")]
    NonIntegerScore { criterion: String },
    #[error("empty rationale for '{criterion}'")]
    EmptyRationale { criterion: String },
    #[error("unknown sentiment label '{label}'")]
    UnknownSentiment { label: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl JudgeError {
    /// Compact classification label used in failure reports.
    pub fn label(&self) -> String {
        match self {
            JudgeError::InvalidJson { stage, .. } => format!("invalid-json:{stage}"),
            JudgeError::MissingKey { key, .. } => format!("missing-key:{key}"),
            JudgeError::WrongShape { stage, .. } => format!("wrong-shape:{stage}"),
            JudgeError::ScoreOutOfRange { criterion, .. } => {
                format!("score-out-of-range:{criterion}")
            }
            JudgeError::NonIntegerScore { criterion } => {
                format!("non-integer-score:{criterion}")
            }
            JudgeError::EmptyRationale { criterion } => format!("empty-rationale:{criterion}"),
            JudgeError::UnknownSentiment { label } => format!("unknown-sentiment:{label}"),
            JudgeError::Prompt(_) => "prompt".to_string(),
            JudgeError::Gateway(_) => "gateway".to_string(),
        }
    }
}

/// One criterion verdict: integer score plus the judge's two rationales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionScore {
    pub criterion: String,
    pub score: u8,
    pub why: String,
    pub example: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceFeeling {
    pub index: u32,
    pub sentiment: String,
    pub why: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeelingSummary {
    pub per_sentence: Vec<SentenceFeeling>,
    pub overall: String,
    pub changes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorecard {
    pub cell_id: String,
    pub rubric: Vec<CriterionScore>,
    pub feelings: FeelingSummary,
    pub overall_performance: CriterionScore,
    pub user_satisfaction: CriterionScore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub social_awareness: Option<CriterionScore>,
}

impl Scorecard {
    pub fn rubric_score(&self, criterion: &str) -> Option<u8> {
        self.rubric
            .iter()
            .find(|c| c.criterion == criterion)
            .map(|c| c.score)
    }
}

/// Pulls one JSON object out of a reply: the whole trimmed text, or the
/// first `{` to the last `}` if the model wrapped it in prose.
fn extract_object(stage: &'static str, reply: &str) -> Result<serde_json::Value, JudgeError> {
    let trimmed = reply.trim();
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(trimmed) {
        return Ok(v);
    }
    let start = trimmed.find('{');
    let end = trimmed.rfind('}');
    if let (Some(s), Some(e)) = (start, end) {
        if s < e {
            return serde_json::from_str(&trimmed[s..=e]).map_err(|e| JudgeError::InvalidJson {
                stage,
                detail: e.to_string(),
            });
        }
    }
    Err(JudgeError::InvalidJson {
        stage,
        detail: "no JSON object found".to_string(),
    })
}

fn as_object<'v>(
    stage: &'static str,
    value: &'v serde_json::Value,
) -> Result<&'v serde_json::Map<String, serde_json::Value>, JudgeError> {
    value.as_object().ok_or_else(|| JudgeError::WrongShape {
        stage,
        detail: "top level is not an object".to_string(),
    })
}

/// Parses one `[score, why, example]` triple under strict rules.
fn parse_score_entry(
    stage: &'static str,
    criterion: &str,
    value: &serde_json::Value,
) -> Result<CriterionScore, JudgeError> {
    let arr = value.as_array().ok_or_else(|| JudgeError::WrongShape {
        stage,
        detail: format!("'{criterion}' is not an array"),
    })?;
    if arr.len() != 3 {
        return Err(JudgeError::WrongShape {
            stage,
            detail: format!("'{criterion}' has {} elements, expected 3", arr.len()),
        });
    }
    let score = match &arr[0] {
        serde_json::Value::Number(n) => n.as_i64().ok_or_else(|| JudgeError::NonIntegerScore {
            criterion: criterion.to_string(),
        })?,
        _ => {
            return Err(JudgeError::WrongShape {
                stage,
                detail: format!("'{criterion}' score is not a number"),
            })
        }
    };
    if !(1..=5).contains(&score) {
        return Err(JudgeError::ScoreOutOfRange {
            criterion: criterion.to_string(),
            score,
        });
    }
    let text_at = |i: usize| -> Result<String, JudgeError> {
        let s = arr[i].as_str().ok_or_else(|| JudgeError::WrongShape {
            stage,
            detail: format!("'{criterion}' rationale is not a string"),
        })?;
        if s.trim().is_empty() {
            return Err(JudgeError::EmptyRationale {
                criterion: criterion.to_string(),
            });
        }
        Ok(s.to_string())
    };
    Ok(CriterionScore {
        criterion: criterion.to_string(),
        score: score as u8,
        why: text_at(1)?,
        example: text_at(2)?,
    })
}

/// Stage 1 reply: exactly the five rubric criteria, each a triple.
pub fn parse_rubric_reply(reply: &str) -> Result<Vec<CriterionScore>, JudgeError> {
    const STAGE: &str = "rubric";
    let value = extract_object(STAGE, reply)?;
    let obj = as_object(STAGE, &value)?;
    for key in obj.keys() {
        if !RUBRIC_CRITERIA.contains(&key.as_str()) {
            return Err(JudgeError::WrongShape {
                stage: STAGE,
                detail: format!("unexpected key '{key}'"),
            });
        }
    }
    RUBRIC_CRITERIA
        .iter()
        .map(|criterion| {
            let value = obj.get(*criterion).ok_or_else(|| JudgeError::MissingKey {
                stage: STAGE,
                key: criterion.to_string(),
            })?;
            parse_score_entry(STAGE, criterion, value)
        })
        .collect()
}

fn known_sentiment(label: &str) -> Result<String, JudgeError> {
    if SENTIMENT_LABELS.contains(&label) {
        Ok(label.to_string())
    } else {
        Err(JudgeError::UnknownSentiment {
            label: label.to_string(),
        })
    }
}

/// Stage 2 reply: per-sentence sentiments from the closed vocabulary, an
/// overall feeling, and a change narrative.
pub fn parse_feelings_reply(reply: &str) -> Result<FeelingSummary, JudgeError> {
    const STAGE: &str = "feelings";
    let value = extract_object(STAGE, reply)?;
    let obj = as_object(STAGE, &value)?;
    const KEYS: [&str; 3] = ["sentence sentiment", "overall feeling", "feeling changes"];
    for key in obj.keys() {
        if !KEYS.contains(&key.as_str()) {
            return Err(JudgeError::WrongShape {
                stage: STAGE,
                detail: format!("unexpected key '{key}'"),
            });
        }
    }
    let sentence_value = obj
        .get("sentence sentiment")
        .ok_or_else(|| JudgeError::MissingKey {
            stage: STAGE,
            key: "sentence sentiment".to_string(),
        })?;
    let sentences = sentence_value
        .as_object()
        .ok_or_else(|| JudgeError::WrongShape {
            stage: STAGE,
            detail: "'sentence sentiment' is not an object".to_string(),
        })?;
    let mut per_sentence: Vec<SentenceFeeling> = Vec::with_capacity(sentences.len());
    for (index_text, entry) in sentences {
        let index: u32 = index_text
            .trim()
            .parse()
            .map_err(|_| JudgeError::WrongShape {
                stage: STAGE,
                detail: format!("sentence index '{index_text}' is not a number"),
            })?;
        let pair = entry.as_array().ok_or_else(|| JudgeError::WrongShape {
            stage: STAGE,
            detail: format!("sentence {index} entry is not an array"),
        })?;
        if pair.len() != 2 {
            return Err(JudgeError::WrongShape {
                stage: STAGE,
                detail: format!("sentence {index} entry has {} elements, expected 2", pair.len()),
            });
        }
        let label = pair[0].as_str().ok_or_else(|| JudgeError::WrongShape {
            stage: STAGE,
            detail: format!("sentence {index} sentiment is not a string"),
        })?;
        let why = pair[1].as_str().ok_or_else(|| JudgeError::WrongShape {
            stage: STAGE,
            detail: format!("sentence {index} rationale is not a string"),
        })?;
        if why.trim().is_empty() {
            return Err(JudgeError::EmptyRationale {
                criterion: format!("sentence {index}"),
            });
        }
        per_sentence.push(SentenceFeeling {
            index,
            sentiment: known_sentiment(label)?,
            why: why.to_string(),
        });
    }
    per_sentence.sort_by_key(|s| s.index);

    let overall = obj
        .get("overall feeling")
        .ok_or_else(|| JudgeError::MissingKey {
            stage: STAGE,
            key: "overall feeling".to_string(),
        })?
        .as_str()
        .ok_or_else(|| JudgeError::WrongShape {
            stage: STAGE,
            detail: "'overall feeling' is not a string".to_string(),
        })?;
    let changes = obj
        .get("feeling changes")
        .ok_or_else(|| JudgeError::MissingKey {
            stage: STAGE,
            key: "feeling changes".to_string(),
        })?
        .as_str()
        .ok_or_else(|| JudgeError::WrongShape {
            stage: STAGE,
            detail: "'feeling changes' is not a string".to_string(),
        })?;
    if changes.trim().is_empty() {
        return Err(JudgeError::EmptyRationale {
            criterion: "feeling changes".to_string(),
        });
    }
    Ok(FeelingSummary {
        per_sentence,
        overall: known_sentiment(overall)?,
        changes: changes.to_string(),
    })
}

/// Stage 3 reply: two verdict triples.
pub fn parse_overall_reply(reply: &str) -> Result<(CriterionScore, CriterionScore), JudgeError> {
    const STAGE: &str = "overall";
    let value = extract_object(STAGE, reply)?;
    let obj = as_object(STAGE, &value)?;
    const KEYS: [&str; 2] = ["Overall Performance", "User Satisfaction"];
    for key in obj.keys() {
        if !KEYS.contains(&key.as_str()) {
            return Err(JudgeError::WrongShape {
                stage: STAGE,
                detail: format!("unexpected key '{key}'"),
            });
        }
    }
    let mut parsed = Vec::with_capacity(2);
    for key in KEYS {
        let raw = obj.get(key).ok_or_else(|| JudgeError::MissingKey {
            stage: STAGE,
            key: key.to_string(),
        })?;
        parsed.push(parse_score_entry(STAGE, key, raw)?);
    }
    let satisfaction = parsed.pop().expect("two entries");
    let performance = parsed.pop().expect("two entries");
    Ok((performance, satisfaction))
}

/// Stage 4 reply: one triple keyed by the social criterion.
pub fn parse_social_reply(reply: &str) -> Result<CriterionScore, JudgeError> {
    const STAGE: &str = "social";
    let value = extract_object(STAGE, reply)?;
    let obj = as_object(STAGE, &value)?;
    for key in obj.keys() {
        if key != SOCIAL_CRITERION {
            return Err(JudgeError::WrongShape {
                stage: STAGE,
                detail: format!("unexpected key '{key}'"),
            });
        }
    }
    let entry = obj
        .get(SOCIAL_CRITERION)
        .ok_or_else(|| JudgeError::MissingKey {
            stage: STAGE,
            key: SOCIAL_CRITERION.to_string(),
        })?;
    parse_score_entry(STAGE, SOCIAL_CRITERION, entry)
}

#[derive(Debug, Clone, Copy)]
pub struct JudgeConfig {
    /// Whether the social-awareness stage runs at all.
    pub social_awareness: bool,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            social_awareness: true,
        }
    }
}

pub struct Judge<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptSet,
    decoding: DecodingConfig,
    config: JudgeConfig,
}

impl<'a> Judge<'a> {
    pub fn new(
        gateway: &'a Gateway,
        prompts: &'a PromptSet,
        decoding: DecodingConfig,
        config: JudgeConfig,
    ) -> Self {
        Self {
            gateway,
            prompts,
            decoding,
            config,
        }
    }

    /// One call plus at most one repair re-prompt quoting the broken reply.
    fn call_and_parse<T>(
        &self,
        prompt: &str,
        parse: impl Fn(&str) -> Result<T, JudgeError>,
    ) -> Result<T, JudgeError> {
        let reply = self.gateway.complete(prompt, &self.decoding)?;
        match parse(&reply) {
            Ok(v) => Ok(v),
            Err(_) => {
                let repair = self
                    .prompts
                    .judge_repair
                    .fill(&[("REPLY", reply.as_str())])?;
                let retry = self.gateway.complete(&repair, &self.decoding)?;
                parse(&retry)
            }
        }
    }

    /// The numbered feeling list handed to the classification stage.
    fn feeling_slot(transcript: &Transcript) -> String {
        transcript
            .turns
            .iter()
            .enumerate()
            .map(|(i, turn)| format!("{}. {}", i + 1, turn.user_feeling))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Scores one finished transcript. Stages run in order and the first
    /// unrecoverable failure aborts the whole card.
    pub fn judge_transcript(&self, transcript: &Transcript) -> Result<Scorecard, JudgeError> {
        let history = history_slot(&visible_history(transcript));

        let rubric_prompt = self.prompts.judge_rubric.fill(&[("HISTORY", history.as_str())])?;
        let rubric = self.call_and_parse(&rubric_prompt, parse_rubric_reply)?;

        let feelings_text = Self::feeling_slot(transcript);
        let feelings_prompt = self
            .prompts
            .judge_feelings
            .fill(&[("FEELING", feelings_text.as_str())])?;
        let feelings = self.call_and_parse(&feelings_prompt, parse_feelings_reply)?;

        let other_scores = rubric_scores_json(&rubric);
        let feelings_summary = format!(
            "overall feeling: {}; feeling changes: {}",
            feelings.overall, feelings.changes
        );
        let overall_prompt = self.prompts.judge_overall.fill(&[
            ("HISTORY", history.as_str()),
            ("OTHER SCORES", other_scores.as_str()),
            ("SUMMERIZED FEELINGS", feelings_summary.as_str()),
        ])?;
        let (overall_performance, user_satisfaction) =
            self.call_and_parse(&overall_prompt, parse_overall_reply)?;

        let social_awareness = if self.config.social_awareness {
            let prompt = self.prompts.judge_social.fill(&[("HISTORY", history.as_str())])?;
            Some(self.call_and_parse(&prompt, parse_social_reply)?)
        } else {
            None
        };

        Ok(Scorecard {
            cell_id: transcript.cell_id.clone(),
            rubric,
            feelings,
            overall_performance,
            user_satisfaction,
            social_awareness,
        })
    }
}

/// Compact JSON rendering of rubric scores in canonical criterion order,
/// embedded into the overall-verdict prompt.
pub fn rubric_scores_json(rubric: &[CriterionScore]) -> String {
    let by_name: BTreeMap<&str, u8> = rubric
        .iter()
        .map(|c| (c.criterion.as_str(), c.score))
        .collect();
    let parts: Vec<String> = RUBRIC_CRITERIA
        .iter()
        .filter_map(|c| by_name.get(c).map(|s| format!("\"{c}\":{s}")))
        .collect();
    format!("{{{}}}", parts.join(","))
}

/// Persists one scorecard next to its transcript.
pub fn write_scorecard(
    dir: &std::path::Path,
    card: &Scorecard,
) -> Result<std::path::PathBuf, std::io::Error> {
    let path = dir.join(format!("{}.scorecard.json", card.cell_id));
    let json = serde_json::to_string_pretty(card).expect("scorecard serializes");
    std::fs::write(&path, json + "\n")?;
    Ok(path)
}

pub fn read_scorecard(path: &std::path::Path) -> Result<Scorecard, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}
