//! Paraphrase-pair reliability probing.
//!
//! A probe replays the moment a finished conversation first surfaced items:
//! the same visible prefix is sent twice, once with the user's original
//! utterance and once with a meaning-preserving paraphrase, and the two item
//! sets are compared. A reliable recommender reacts to what the user means,
//! not to how the user words it.
//!
//! Outcome flags per probe:
//! * `action_consistent` - both sides recommend, or both stay silent.
//! * `rec_consistent`    - both recommend the same unordered item set.
//! * inconsistent pairs (both recommend, sets differ) split into diverse
//!   (every item on both sides fits the target) and sensitive (anything
//!   else), so diversity and sensitivity partition them exactly.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{observe_step, AdapterError, CrsAdapter, WireMessage};
use crate::catalog::{matches_preference, AttributeGroup, Catalog, ItemId};
use crate::gateway::{DecodingConfig, Gateway, GatewayError};
use crate::prompts::{PromptError, PromptSet};
use crate::session::{Transcript, Turn};

#[derive(Debug, Error)]
pub enum ReliabilityError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("paraphrase came back identical to the original even after a retry")]
    ParaphraseIdentical,
    #[error("paraphrase came back empty")]
    ParaphraseEmpty,
    #[error("no probe outcomes to aggregate")]
    NoOutcomes,
}

/// The replayable moment: prefix, original utterance, paraphrase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePair {
    pub cell_id: String,
    /// Visible messages strictly before the probed utterance.
    pub prefix: Vec<WireMessage>,
    /// 1-based turn index the probed utterance had in the source session.
    pub turn_index: u32,
    pub u1: String,
    pub u2: String,
}

/// What happened when both sides of a pair were sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub cell_id: String,
    pub u1: String,
    pub u2: String,
    pub items1: BTreeSet<ItemId>,
    pub items2: BTreeSet<ItemId>,
    pub action_consistent: bool,
    pub rec_consistent: bool,
    /// Present only for inconsistent pairs: true = diverse, false = sensitive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverse: Option<bool>,
}

/// Aggregate rates over a probe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRates {
    pub probes: usize,
    pub action_consistency: f64,
    pub rec_consistency: f64,
    /// Share of inconsistent pairs among pairs where both sides recommended.
    pub inconsistency: f64,
    /// Of the inconsistent pairs, the fully target-aligned share.
    pub diversity: f64,
    /// 1 - diversity: inconsistency that actually loses the target.
    pub sensitivity: f64,
    pub both_recommended: usize,
    pub inconsistent_pairs: usize,
}

/// Finds the first turn whose CRS reply surfaced anything: items in the
/// text or a non-empty ranked list.
pub fn probe_turn(transcript: &Transcript) -> Option<&Turn> {
    transcript.turns.iter().find(|turn| {
        turn.crs
            .as_ref()
            .is_some_and(|crs| !crs.conv_items.is_empty() || !crs.recsys_items.is_empty())
    })
}

/// Builds the probe pair for a transcript, paraphrasing the probed
/// utterance through the gateway. `Ok(None)` means the conversation never
/// surfaced an item, so there is nothing to probe.
pub fn make_probe_pair(
    transcript: &Transcript,
    gateway: &Gateway,
    prompts: &PromptSet,
    decoding: &DecodingConfig,
) -> Result<Option<ProbePair>, ReliabilityError> {
    let Some(turn) = probe_turn(transcript) else {
        return Ok(None);
    };
    let mut prefix = Vec::new();
    for earlier in &transcript.turns {
        if earlier.index >= turn.index {
            break;
        }
        prefix.push(WireMessage::user(&earlier.user_text));
        if let Some(crs) = &earlier.crs {
            prefix.push(WireMessage::assistant(&crs.response_text));
        }
    }
    let u1 = turn.user_text.clone();
    let u2 = paraphrase_distinct(gateway, prompts, decoding, &u1)?;
    Ok(Some(ProbePair {
        cell_id: transcript.cell_id.clone(),
        prefix,
        turn_index: turn.index,
        u1,
        u2,
    }))
}

/// One paraphrase attempt; if the model parrots the input back, one retry
/// with an explicit nudge, then a hard error.
fn paraphrase_distinct(
    gateway: &Gateway,
    prompts: &PromptSet,
    decoding: &DecodingConfig,
    original: &str,
) -> Result<String, ReliabilityError> {
    let prompt = prompts
        .utterance_paraphrase
        .fill(&[("MESSAGE", original)])?;
    let first = gateway.complete(&prompt, decoding)?.trim().to_string();
    if first.is_empty() {
        return Err(ReliabilityError::ParaphraseEmpty);
    }
    if first != original {
        return Ok(first);
    }
    let nudged = format!(
        "{prompt}\nThe paraphrase must not be identical to the original message."
    );
    let second = gateway.complete(&nudged, decoding)?.trim().to_string();
    if second.is_empty() {
        return Err(ReliabilityError::ParaphraseEmpty);
    }
    if second == original {
        return Err(ReliabilityError::ParaphraseIdentical);
    }
    Ok(second)
}

/// Sends both sides of the pair through the adapter and compares item sets.
///
/// Comparison prefers `conv_items`; only when both sides surface nothing in
/// text does it fall back to the top `module_success_depth` ranked items.
pub fn probe_pair(
    pair: &ProbePair,
    adapter: &dyn CrsAdapter,
    catalog: &Catalog,
    target: &AttributeGroup,
    module_success_depth: usize,
) -> Result<ProbeOutcome, AdapterError> {
    let r1 = observe_step(adapter, &pair.prefix, &pair.u1, pair.turn_index, catalog)?;
    let r2 = observe_step(adapter, &pair.prefix, &pair.u2, pair.turn_index, catalog)?;

    let mut items1: BTreeSet<ItemId> = r1.conv_items.iter().cloned().collect();
    let mut items2: BTreeSet<ItemId> = r2.conv_items.iter().cloned().collect();
    if items1.is_empty() && items2.is_empty() {
        items1 = r1
            .recsys_items
            .iter()
            .take(module_success_depth)
            .cloned()
            .collect();
        items2 = r2
            .recsys_items
            .iter()
            .take(module_success_depth)
            .cloned()
            .collect();
    }

    let action_consistent = items1.is_empty() == items2.is_empty();
    let both_recommended = !items1.is_empty() && !items2.is_empty();
    let rec_consistent = both_recommended && items1 == items2;
    let diverse = if both_recommended && !rec_consistent {
        let aligned = |items: &BTreeSet<ItemId>| {
            items.iter().all(|id| {
                catalog
                    .get(id)
                    .is_some_and(|item| matches_preference(item, target))
            })
        };
        Some(aligned(&items1) && aligned(&items2))
    } else {
        None
    };
    Ok(ProbeOutcome {
        cell_id: pair.cell_id.clone(),
        u1: pair.u1.clone(),
        u2: pair.u2.clone(),
        items1,
        items2,
        action_consistent,
        rec_consistent,
        diverse,
    })
}

/// Aggregates outcome flags into rates. Rates over empty denominators are
/// defined as zero inconsistency (nothing observed to be inconsistent) and
/// zero diversity/sensitivity.
pub fn aggregate_reliability(
    outcomes: &[ProbeOutcome],
) -> Result<ReliabilityRates, ReliabilityError> {
    if outcomes.is_empty() {
        return Err(ReliabilityError::NoOutcomes);
    }
    let probes = outcomes.len();
    let action = outcomes.iter().filter(|o| o.action_consistent).count();
    let both: Vec<_> = outcomes
        .iter()
        .filter(|o| !o.items1.is_empty() && !o.items2.is_empty())
        .collect();
    let consistent = both.iter().filter(|o| o.rec_consistent).count();
    let inconsistent: Vec<_> = both.iter().filter(|o| !o.rec_consistent).collect();
    let diverse = inconsistent
        .iter()
        .filter(|o| o.diverse == Some(true))
        .count();

    let rec_consistency = if both.is_empty() {
        0.0
    } else {
        consistent as f64 / both.len() as f64
    };
    let inconsistency = if both.is_empty() {
        0.0
    } else {
        inconsistent.len() as f64 / both.len() as f64
    };
    let (diversity, sensitivity) = if inconsistent.is_empty() {
        (0.0, 0.0)
    } else {
        let d = diverse as f64 / inconsistent.len() as f64;
        (d, 1.0 - d)
    };
    Ok(ReliabilityRates {
        probes,
        action_consistency: action as f64 / probes as f64,
        rec_consistency,
        inconsistency,
        diversity,
        sensitivity,
        both_recommended: both.len(),
        inconsistent_pairs: inconsistent.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{CrsTurn, ScriptRecord, ScriptedCrs};
    use crate::catalog::{Catalog, Item};
    use crate::gateway::{ChatTransport, Gateway, TransportError};
    use crate::persona::{Persona, UserSpec};
    use crate::session::{RunMetadata, Termination};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn catalog() -> Catalog {
        let mk = |id: &str, title: &str, attrs: &[&str]| Item {
            id: id.to_string(),
            title: title.to_string(),
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
        };
        Catalog::from_items(vec![
            mk("m1", "Iron Harbor", &["action"]),
            mk("m2", "Copper Dawn", &["action"]),
            mk("m3", "Quiet Season", &["drama"]),
        ])
        .unwrap()
    }

    fn target() -> AttributeGroup {
        AttributeGroup::new(vec!["action".to_string()]).unwrap()
    }

    fn transcript(turns: Vec<Turn>) -> Transcript {
        Transcript {
            cell_id: "cell".to_string(),
            user_spec: UserSpec {
                cell_id: "cell".to_string(),
                persona: Persona {
                    sentiment: "Trust".to_string(),
                    age_group: "Adults".to_string(),
                    description: "desc".to_string(),
                },
                target: target(),
                adjusted_preferences: vec!["thrilling action movie".to_string()],
            },
            turns,
            terminated_by: Termination::TurnCap,
            metadata: RunMetadata {
                config_digest: "d".to_string(),
                started_at: "t0".to_string(),
                finished_at: "t1".to_string(),
                error: None,
            },
        }
    }

    fn turn(index: u32, user: &str, crs_text: &str, recs: &[&str], conv: &[&str]) -> Turn {
        Turn {
            index,
            user_feeling: format!("feeling {index}"),
            user_text: user.to_string(),
            crs: Some(CrsTurn {
                response_text: crs_text.to_string(),
                recsys_items: recs.iter().map(|s| s.to_string()).collect(),
                conv_items: conv.iter().map(|s| s.to_string()).collect(),
                unresolved_mentions: 0,
            }),
        }
    }

    struct FixedParaphrase(String);
    impl ChatTransport for FixedParaphrase {
        fn complete(
            &self,
            _m: &str,
            _p: &str,
            _d: &DecodingConfig,
        ) -> Result<String, TransportError> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn probe_targets_the_first_surfacing_turn() {
        let t = transcript(vec![
            turn(1, "hello", "What do you like?", &[], &[]),
            turn(2, "something brisk", "Noted, thinking.", &[], &[]),
            turn(3, "any ideas yet?", "Try 'Iron Harbor'.", &["m1"], &["m1"]),
            turn(4, "tell me more", "It is fast.", &["m2"], &[]),
        ]);
        let gw = Gateway::live("m", Arc::new(FixedParaphrase("got any picks?".to_string())));
        let prompts = PromptSet::builtin();
        let pair = make_probe_pair(&t, &gw, &prompts, &DecodingConfig::default())
            .unwrap()
            .unwrap();
        assert_eq!(pair.turn_index, 3);
        assert_eq!(pair.u1, "any ideas yet?");
        assert_eq!(pair.u2, "got any picks?");
        // Prefix holds exactly the two earlier exchanges, four messages.
        assert_eq!(pair.prefix.len(), 4);
        assert_eq!(pair.prefix[0].text, "hello");
        assert_eq!(pair.prefix[3].text, "Noted, thinking.");
        // Feelings never enter the prefix.
        for m in &pair.prefix {
            assert!(!m.text.contains("feeling"));
        }
    }

    #[test]
    fn transcript_without_surfaced_items_has_no_probe() {
        let t = transcript(vec![turn(1, "hello", "What do you like?", &[], &[])]);
        let gw = Gateway::live("m", Arc::new(FixedParaphrase("x".to_string())));
        let prompts = PromptSet::builtin();
        let pair = make_probe_pair(&t, &gw, &prompts, &DecodingConfig::default()).unwrap();
        assert!(pair.is_none());
    }

    struct EchoBack;
    impl ChatTransport for EchoBack {
        fn complete(
            &self,
            _m: &str,
            prompt: &str,
            _d: &DecodingConfig,
        ) -> Result<String, TransportError> {
            // Parrot the quoted original back, defeating the paraphrase.
            let needle = "Message: ";
            let start = prompt.find(needle).map(|i| i + needle.len()).unwrap_or(0);
            Ok(prompt[start..].lines().next().unwrap_or("").to_string())
        }
    }

    #[test]
    fn parroting_paraphraser_errors_after_one_retry() {
        let t = transcript(vec![turn(1, "any ideas yet?", "Sure.", &["m1"], &[])]);
        let gw = Gateway::live("m", Arc::new(EchoBack));
        let prompts = PromptSet::builtin();
        let err = make_probe_pair(&t, &gw, &prompts, &DecodingConfig::default()).unwrap_err();
        assert!(matches!(err, ReliabilityError::ParaphraseIdentical));
        // Two gateway calls: the original attempt and the nudged retry.
        assert_eq!(gw.provider_calls(), 2);
    }

    #[test]
    fn identical_sides_are_consistent() {
        let pair = ProbePair {
            cell_id: "cell".to_string(),
            prefix: vec![],
            turn_index: 1,
            u1: "show me action".to_string(),
            u2: "got any action?".to_string(),
        };
        let adapter = ScriptedCrs::from_records(vec![ScriptRecord {
            turn: 1,
            message: "Try 'Iron Harbor'.".to_string(),
            items: vec![],
            mentioned: None,
        }]);
        let out = probe_pair(&pair, &adapter, &catalog(), &target(), 10).unwrap();
        assert!(out.action_consistent);
        assert!(out.rec_consistent);
        assert_eq!(out.diverse, None);
        assert_eq!(out.items1, out.items2);
    }

    /// Adapter that answers differently depending on the utterance text.
    struct WordSensitive;
    impl CrsAdapter for WordSensitive {
        fn name(&self) -> &str {
            "word-sensitive"
        }
        fn step(
            &self,
            req: &crate::adapter::CrsRequest,
        ) -> Result<crate::adapter::CrsResponse, AdapterError> {
            let last = req.conversation.last().unwrap();
            let (msg, mentioned) = if last.text.contains("brisk") {
                ("Try 'Iron Harbor'.", vec!["m1".to_string()])
            } else if last.text.contains("drama") {
                ("Try 'Quiet Season'.", vec!["m3".to_string()])
            } else {
                ("Try 'Copper Dawn'.", vec!["m2".to_string()])
            };
            Ok(crate::adapter::CrsResponse {
                message: msg.to_string(),
                recommendations: vec![],
                mentioned_items: Some(mentioned),
            })
        }
    }

    #[test]
    fn inconsistent_pairs_split_into_diverse_and_sensitive() {
        // Both sides aligned with the target but different: diverse.
        let pair = ProbePair {
            cell_id: "cell".to_string(),
            prefix: vec![],
            turn_index: 1,
            u1: "something brisk".to_string(),
            u2: "something energetic".to_string(),
        };
        let out = probe_pair(&pair, &WordSensitive, &catalog(), &target(), 10).unwrap();
        assert!(out.action_consistent);
        assert!(!out.rec_consistent);
        assert_eq!(out.diverse, Some(true));

        // One side off-target: sensitive.
        let pair = ProbePair {
            u2: "maybe a drama".to_string(),
            ..pair
        };
        let out = probe_pair(&pair, &WordSensitive, &catalog(), &target(), 10).unwrap();
        assert_eq!(out.diverse, Some(false));
    }

    #[test]
    fn falls_back_to_ranked_items_only_when_text_is_silent() {
        struct RankedOnly;
        impl CrsAdapter for RankedOnly {
            fn name(&self) -> &str {
                "ranked"
            }
            fn step(
                &self,
                req: &crate::adapter::CrsRequest,
            ) -> Result<crate::adapter::CrsResponse, AdapterError> {
                let last = &req.conversation.last().unwrap().text;
                let recs = if last.contains("brisk") {
                    vec!["m1".to_string(), "m2".to_string(), "m3".to_string()]
                } else {
                    vec!["m2".to_string(), "m1".to_string(), "m3".to_string()]
                };
                Ok(crate::adapter::CrsResponse {
                    message: "Here are some options.".to_string(),
                    recommendations: recs,
                    mentioned_items: None,
                })
            }
        }
        let pair = ProbePair {
            cell_id: "cell".to_string(),
            prefix: vec![],
            turn_index: 1,
            u1: "something brisk".to_string(),
            u2: "something energetic".to_string(),
        };
        // Depth 3 sees identical unordered sets.
        let out = probe_pair(&pair, &RankedOnly, &catalog(), &target(), 3).unwrap();
        assert!(out.rec_consistent);
        // Depth 2 sees {m1,m2} both ways too; depth 1 differs.
        let out = probe_pair(&pair, &RankedOnly, &catalog(), &target(), 1).unwrap();
        assert!(!out.rec_consistent);
        assert_eq!(out.diverse, Some(true));
    }

    #[test]
    fn aggregate_matches_hand_computed_example() {
        let mk = |items1: &[&str], items2: &[&str], diverse: Option<bool>| {
            let i1: BTreeSet<String> = items1.iter().map(|s| s.to_string()).collect();
            let i2: BTreeSet<String> = items2.iter().map(|s| s.to_string()).collect();
            let both = !i1.is_empty() && !i2.is_empty();
            ProbeOutcome {
                cell_id: "c".to_string(),
                u1: "a".to_string(),
                u2: "b".to_string(),
                action_consistent: i1.is_empty() == i2.is_empty(),
                rec_consistent: both && i1 == i2,
                items1: i1,
                items2: i2,
                diverse,
            }
        };
        // Two consistent, one diverse, one sensitive.
        let outcomes = vec![
            mk(&["m1"], &["m1"], None),
            mk(&["m2"], &["m2"], None),
            mk(&["m1"], &["m2"], Some(true)),
            mk(&["m1"], &["m3"], Some(false)),
        ];
        let rates = aggregate_reliability(&outcomes).unwrap();
        assert_eq!(rates.probes, 4);
        assert!((rates.action_consistency - 1.0).abs() < 1e-12);
        assert!((rates.rec_consistency - 0.5).abs() < 1e-12);
        assert!((rates.inconsistency - 0.5).abs() < 1e-12);
        assert!((rates.diversity - 0.5).abs() < 1e-12);
        assert!((rates.sensitivity - 0.5).abs() < 1e-12);
        assert_eq!(rates.both_recommended, 4);
        assert_eq!(rates.inconsistent_pairs, 2);
    }

    #[test]
    fn empty_outcome_set_is_an_error() {
        assert!(matches!(
            aggregate_reliability(&[]),
            Err(ReliabilityError::NoOutcomes)
        ));
    }

    proptest! {
        /// Diversity and sensitivity always partition the inconsistent pairs.
        #[test]
        fn diversity_and_sensitivity_partition(flags in proptest::collection::vec(0u8..3, 1..40)) {
            let outcomes: Vec<ProbeOutcome> = flags
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let (i2, diverse): (&[&str], Option<bool>) = match f {
                        0 => (&["m1"], None),          // consistent
                        1 => (&["m2"], Some(true)),    // diverse
                        _ => (&["m3"], Some(false)),   // sensitive
                    };
                    ProbeOutcome {
                        cell_id: format!("c{i}"),
                        u1: "a".to_string(),
                        u2: "b".to_string(),
                        items1: ["m1"].iter().map(|s| s.to_string()).collect(),
                        items2: i2.iter().map(|s| s.to_string()).collect(),
                        action_consistent: true,
                        rec_consistent: *f == 0,
                        diverse,
                    }
                })
                .collect();
            let rates = aggregate_reliability(&outcomes).unwrap();
            prop_assert!((rates.diversity + rates.sensitivity - 1.0).abs() < 1e-12
                || rates.inconsistent_pairs == 0);
            if rates.inconsistent_pairs == 0 {
                prop_assert_eq!(rates.diversity, 0.0);
                prop_assert_eq!(rates.sensitivity, 0.0);
            }
            prop_assert!((rates.rec_consistency + rates.inconsistency - 1.0).abs() < 1e-12);
        }
    }
}
