//! Computational metrics and composite ability scores.
//!
//! Everything here is a pure function over transcripts, probe rates, and
//! scorecards. Rates live in [0,1]; composite scores live on a 0 to 5
//! scale. A metric whose denominator is empty is not zero and not an error:
//! it is [`Computed::NotApplicable`] with a reason, and the distinction is
//! preserved all the way into reports. Degenerate inputs that indicate a
//! misconfigured run (an empty transcript set, a target no catalog item
//! matches) are hard errors instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{matches_preference, Catalog};
use crate::session::{accepted_items, first_success_turn, Perspective, Termination, Transcript};

/// A metric value or the reason it does not exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Computed {
    Value(f64),
    NotApplicable { not_applicable: String },
}

impl Computed {
    pub fn na(reason: impl Into<String>) -> Self {
        Computed::NotApplicable {
            not_applicable: reason.into(),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Computed::Value(v) => Some(*v),
            Computed::NotApplicable { .. } => None,
        }
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            Computed::Value(_) => None,
            Computed::NotApplicable { not_applicable } => Some(not_applicable),
        }
    }

    pub fn map(&self, f: impl FnOnce(f64) -> f64) -> Computed {
        match self {
            Computed::Value(v) => Computed::Value(f(*v)),
            other => other.clone(),
        }
    }

    /// Combines two values; the first missing side wins the reason.
    pub fn zip(&self, other: &Computed, f: impl FnOnce(f64, f64) -> f64) -> Computed {
        match (self, other) {
            (Computed::Value(a), Computed::Value(b)) => Computed::Value(f(*a, *b)),
            (Computed::NotApplicable { not_applicable }, _)
            | (_, Computed::NotApplicable { not_applicable }) => Computed::na(not_applicable),
        }
    }
}

impl From<f64> for Computed {
    fn from(v: f64) -> Self {
        Computed::Value(v)
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric over an empty transcript set")]
    EmptyTranscriptSet,
    #[error("no catalog item matches the target of cell '{cell_id}'")]
    NoMatchingItems { cell_id: String },
    #[error("coordination is undefined: ability '{ability}' has zero mean across cohorts")]
    ZeroMean { ability: &'static str },
}

fn require_nonempty(transcripts: &[&Transcript]) -> Result<(), MetricsError> {
    if transcripts.is_empty() {
        Err(MetricsError::EmptyTranscriptSet)
    } else {
        Ok(())
    }
}

/// Fraction of sessions the perspective counts as successful within the
/// first `k` turns.
pub fn success_rate_at(
    transcripts: &[&Transcript],
    catalog: &Catalog,
    perspective: Perspective,
    k: u32,
    module_success_depth: usize,
) -> Result<f64, MetricsError> {
    require_nonempty(transcripts)?;
    let hits = transcripts
        .iter()
        .filter(|t| {
            first_success_turn(t, perspective, catalog, module_success_depth)
                .is_some_and(|turn| turn <= k)
        })
        .count();
    Ok(hits as f64 / transcripts.len() as f64)
}

/// Mean first-success turn over sessions that succeeded at all; N/A when
/// none did.
pub fn average_turns(
    transcripts: &[&Transcript],
    catalog: &Catalog,
    perspective: Perspective,
    module_success_depth: usize,
) -> Result<Computed, MetricsError> {
    require_nonempty(transcripts)?;
    let turns: Vec<u32> = transcripts
        .iter()
        .filter_map(|t| first_success_turn(t, perspective, catalog, module_success_depth))
        .collect();
    if turns.is_empty() {
        return Ok(Computed::na(format!(
            "no successful session from the {} perspective",
            perspective.label()
        )));
    }
    Ok(Computed::Value(
        turns.iter().map(|&t| t as f64).sum::<f64>() / turns.len() as f64,
    ))
}

/// Fraction of sessions the user accepted.
pub fn acceptance_rate(transcripts: &[&Transcript]) -> Result<f64, MetricsError> {
    require_nonempty(transcripts)?;
    let accepted = transcripts
        .iter()
        .filter(|t| t.terminated_by == Termination::Accepted)
        .count();
    Ok(accepted as f64 / transcripts.len() as f64)
}

/// Recall@k averaged over recommendation events. An event is a turn whose
/// ranked list is non-empty; its recall is the share of all target-matching
/// catalog items found in the top k. A target matching nothing in the
/// catalog is a configuration error.
pub fn recall_at(
    transcripts: &[&Transcript],
    catalog: &Catalog,
    k: usize,
) -> Result<Computed, MetricsError> {
    require_nonempty(transcripts)?;
    let mut event_recalls: Vec<f64> = Vec::new();
    for t in transcripts {
        let relevant = catalog.target_matching(&t.user_spec.target).len();
        if relevant == 0 {
            return Err(MetricsError::NoMatchingItems {
                cell_id: t.cell_id.clone(),
            });
        }
        for turn in &t.turns {
            let Some(crs) = &turn.crs else { continue };
            if crs.recsys_items.is_empty() {
                continue;
            }
            let hits = crs
                .recsys_items
                .iter()
                .take(k)
                .filter(|id| {
                    catalog
                        .get(id)
                        .is_some_and(|item| matches_preference(item, &t.user_spec.target))
                })
                .count();
            event_recalls.push(hits as f64 / relevant as f64);
        }
    }
    if event_recalls.is_empty() {
        return Ok(Computed::na("no recommendation events"));
    }
    Ok(Computed::Value(
        event_recalls.iter().sum::<f64>() / event_recalls.len() as f64,
    ))
}

/// Unresolved mentions over all mentions. N/A when nothing was mentioned.
pub fn nonexistent_ratio(transcripts: &[&Transcript]) -> Result<Computed, MetricsError> {
    require_nonempty(transcripts)?;
    let mut unresolved = 0u64;
    let mut total = 0u64;
    for t in transcripts {
        for turn in &t.turns {
            if let Some(crs) = &turn.crs {
                unresolved += crs.unresolved_mentions as u64;
                total += crs.conv_items.len() as u64 + crs.unresolved_mentions as u64;
            }
        }
    }
    if total == 0 {
        return Ok(Computed::na("no item mentions"));
    }
    Ok(Computed::Value(unresolved as f64 / total as f64))
}

/// Share of accepted sessions whose acceptance was won dishonestly: some
/// accepted item misses the stated preference, or nothing resolvable was
/// on the table at all. N/A when no session was accepted.
pub fn deceptive_ratio(
    transcripts: &[&Transcript],
    catalog: &Catalog,
) -> Result<Computed, MetricsError> {
    require_nonempty(transcripts)?;
    let accepted: Vec<_> = transcripts
        .iter()
        .filter(|t| t.terminated_by == Termination::Accepted)
        .collect();
    if accepted.is_empty() {
        return Ok(Computed::na("no accepted sessions"));
    }
    let deceptive = accepted
        .iter()
        .filter(|t| {
            let items = accepted_items(t);
            items.is_empty()
                || items.iter().any(|id| {
                    catalog
                        .get(id)
                        .map_or(true, |item| !matches_preference(item, &t.user_spec.target))
                })
        })
        .count();
    Ok(Computed::Value(deceptive as f64 / accepted.len() as f64))
}

/// Mean CRS reply length in words across a transcript; None when the
/// session had no CRS reply at all.
pub fn average_response_words(transcript: &Transcript) -> Option<f64> {
    let lengths: Vec<usize> = transcript
        .turns
        .iter()
        .filter_map(|t| t.crs.as_ref())
        .map(|crs| crs.response_text.split_whitespace().count())
        .collect();
    if lengths.is_empty() {
        return None;
    }
    Some(lengths.iter().sum::<usize>() as f64 / lengths.len() as f64)
}

// Composite scores, each on the 0 to 5 scale.

pub fn quality_score(acceptance_rate: f64) -> f64 {
    5.0 * acceptance_rate
}

/// Reliability discounts by inconsistency weighted by how often that
/// inconsistency actually loses the target. A recommender with zero
/// inconsistency scores a full 5.0 regardless of the sensitivity estimate.
pub fn reliability_score(inconsistency: f64, sensitivity: f64) -> f64 {
    if inconsistency == 0.0 {
        return 5.0;
    }
    5.0 * (1.0 - inconsistency * sensitivity)
}

pub fn sincerity_score(deceptive_ratio: f64, nonexistent_ratio: f64) -> f64 {
    5.0 * (1.0 - (deceptive_ratio + nonexistent_ratio) / 2.0)
}

pub fn identity_score(deceptive_ratio: f64) -> f64 {
    5.0 * (1.0 - deceptive_ratio)
}

/// Mean of the two judged criteria and the two derived 0-5 scores.
pub fn cooperation_score(manner: f64, sincerity: f64, quality: f64, relevance: f64) -> f64 {
    (manner + sincerity + quality + relevance) / 4.0
}

/// Raw rates feeding the composite scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRates {
    pub acceptance: Computed,
    pub inconsistency: Computed,
    pub sensitivity: Computed,
    pub deceptive: Computed,
    pub nonexistent: Computed,
}

/// Mean judged rubric scores on the conversation level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricMeans {
    pub relevance: Computed,
    pub quality: Computed,
    pub manner: Computed,
    pub human_like: Computed,
    pub explanation: Computed,
    pub social_awareness: Computed,
}

/// The six abilities, 0 to 5 each, plus the sincerity sub-score feeding
/// cooperation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeScores {
    pub quality: Computed,
    pub reliability: Computed,
    pub sincerity: Computed,
    pub cooperation: Computed,
    pub social_awareness: Computed,
    pub identity: Computed,
}

pub fn composite_scores(rates: &RawRates, rubric: &RubricMeans) -> CompositeScores {
    let quality = rates.acceptance.map(quality_score);
    let reliability = rates
        .inconsistency
        .zip(&rates.sensitivity, reliability_score);
    let sincerity = rates.deceptive.zip(&rates.nonexistent, sincerity_score);
    let identity = rates.deceptive.map(identity_score);
    // Four-way zip written out: the first missing part carries its reason.
    let cooperation = match (
        rubric.manner.value(),
        sincerity.value(),
        rubric.quality.value(),
        rubric.relevance.value(),
    ) {
        (Some(m), Some(s), Some(q), Some(r)) => Computed::Value(cooperation_score(m, s, q, r)),
        _ => {
            let reason = rubric
                .manner
                .reason()
                .or(sincerity.reason())
                .or(rubric.quality.reason())
                .or(rubric.relevance.reason())
                .unwrap_or("cooperation inputs unavailable");
            Computed::na(reason)
        }
    };
    CompositeScores {
        quality,
        reliability,
        sincerity,
        cooperation,
        social_awareness: rubric.social_awareness.clone(),
        identity,
    }
}

/// Per-cohort ability vector used for the coordination spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbilityVector {
    pub quality: f64,
    pub reliability: f64,
    pub identity: f64,
    pub cooperation: f64,
    pub social_awareness: f64,
}

impl AbilityVector {
    fn get(&self, ability: &'static str) -> f64 {
        match ability {
            "quality" => self.quality,
            "reliability" => self.reliability,
            "identity" => self.identity,
            "cooperation" => self.cooperation,
            "social_awareness" => self.social_awareness,
            _ => unreachable!("unknown ability"),
        }
    }
}

pub const COORDINATED_ABILITIES: [&str; 5] = [
    "quality",
    "reliability",
    "identity",
    "cooperation",
    "social_awareness",
];

/// Coordination penalizes abilities that swing across persona cohorts:
/// 5 minus the mean relative spread (max-min over mean) of the five
/// abilities. Identical cohorts score exactly 5. Needs at least two
/// cohorts; an ability with zero mean has no relative spread and is a
/// hard error naming the ability.
pub fn coordination_score(cohorts: &[AbilityVector]) -> Result<Computed, MetricsError> {
    if cohorts.len() < 2 {
        return Ok(Computed::na("fewer than two persona cohorts"));
    }
    let mut spread_sum = 0.0;
    for ability in COORDINATED_ABILITIES {
        let values: Vec<f64> = cohorts.iter().map(|c| c.get(ability)).collect();
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        let min = values.iter().cloned().fold(f64::MAX, f64::min);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        if max == min {
            continue; // zero spread contributes zero, even at zero mean
        }
        if mean == 0.0 {
            return Err(MetricsError::ZeroMean { ability });
        }
        spread_sum += (max - min) / mean;
    }
    Ok(Computed::Value(5.0 - spread_sum / 5.0))
}
