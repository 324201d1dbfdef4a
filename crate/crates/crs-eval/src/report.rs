//! Report assembly: folds transcripts, probe outcomes, and scorecards
//! into one serializable evaluation report.
//!
//! Building a report is pure given its inputs and a clock, so the same run
//! directory always yields byte-identical JSON under a fixed clock. Errored
//! sessions are excluded from every metric but stay visible in the counts;
//! judge failures likewise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::judge::{Scorecard, RUBRIC_CRITERIA, SOCIAL_CRITERION};
use crate::metrics::{
    acceptance_rate, average_response_words, average_turns, composite_scores, coordination_score,
    deceptive_ratio, nonexistent_ratio, recall_at, sincerity_score, success_rate_at,
    AbilityVector, CompositeScores, Computed, MetricsError, RawRates, RubricMeans,
};
use crate::reliability::{aggregate_reliability, ProbeOutcome, ReliabilityRates};
use crate::session::{Clock, Perspective, Termination, Transcript};

pub const REPORT_SCHEMA_VERSION: &str = "1";

pub const RECALL_CUTOFFS: [usize; 4] = [1, 10, 25, 50];
pub const SUCCESS_CUTOFFS: [u32; 3] = [3, 5, 10];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no usable transcripts: every session errored or the run directory is empty")]
    NoUsableTranscripts,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("write {path}: {detail}")]
    Io { path: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub transcripts: usize,
    pub errored_transcripts: usize,
    pub scorecards: usize,
    pub judge_failures: usize,
    pub probe_outcomes: usize,
}

/// Success metrics for one perspective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveSuccess {
    pub sr: BTreeMap<String, f64>,
    pub average_turns: Computed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputationalMetrics {
    pub module: PerspectiveSuccess,
    pub conversation: PerspectiveSuccess,
    pub user: PerspectiveSuccess,
    pub recall: BTreeMap<String, Computed>,
    pub acceptance_rate: f64,
    pub nonexistent_ratio: Computed,
    pub deceptive_ratio: Computed,
}

/// One judge failure: which session and which parse stage label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeFailure {
    pub cell_id: String,
    pub label: String,
}

/// One breakdown row: a slice of the run keyed by a persona dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRow {
    pub kind: String,
    pub key: String,
    pub n: usize,
    pub metrics: BTreeMap<String, Computed>,
}

/// Reply length against the judged overall score, one point per judged
/// session. Downstream plots read this to check for verbosity bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthPoint {
    pub cell_id: String,
    pub avg_response_words: f64,
    pub overall_performance: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: String,
    pub config_digest: String,
    pub generated_at: String,
    pub counts: ReportCounts,
    pub computational: ComputationalMetrics,
    pub reliability: Option<ReliabilityRates>,
    pub rubric_means: RubricMeans,
    pub abilities: CompositeScores,
    pub coordination: Computed,
    pub persuasiveness: Computed,
    pub human_likeness: Computed,
    pub overall_performance_mean: Computed,
    pub user_satisfaction_mean: Computed,
    pub breakdown: Vec<CohortRow>,
    pub length_bias: Vec<LengthPoint>,
    pub judge_failures: Vec<JudgeFailure>,
}

pub struct ReportInputs<'a> {
    pub transcripts: &'a [Transcript],
    pub scorecards: &'a [Scorecard],
    pub probe_outcomes: &'a [ProbeOutcome],
    pub judge_failures: &'a [JudgeFailure],
    pub catalog: &'a Catalog,
    pub config_digest: &'a str,
    pub module_success_depth: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

fn rubric_mean(cards: &[&Scorecard], criterion: &str) -> Computed {
    match mean(
        cards
            .iter()
            .filter_map(|c| c.rubric_score(criterion))
            .map(f64::from),
    ) {
        Some(v) => Computed::Value(v),
        None => Computed::na("no judged transcripts"),
    }
}

fn social_mean(cards: &[&Scorecard]) -> Computed {
    let scores: Vec<f64> = cards
        .iter()
        .filter_map(|c| c.social_awareness.as_ref())
        .map(|s| f64::from(s.score))
        .collect();
    if cards.is_empty() {
        return Computed::na("no judged transcripts");
    }
    if scores.is_empty() {
        return Computed::na("social awareness judging disabled");
    }
    Computed::Value(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn rubric_means(cards: &[&Scorecard]) -> RubricMeans {
    RubricMeans {
        relevance: rubric_mean(cards, RUBRIC_CRITERIA[0]),
        quality: rubric_mean(cards, RUBRIC_CRITERIA[1]),
        manner: rubric_mean(cards, RUBRIC_CRITERIA[2]),
        human_like: rubric_mean(cards, RUBRIC_CRITERIA[3]),
        explanation: rubric_mean(cards, RUBRIC_CRITERIA[4]),
        social_awareness: social_mean(cards),
    }
}

fn perspective_success(
    transcripts: &[&Transcript],
    catalog: &Catalog,
    perspective: Perspective,
    depth: usize,
) -> Result<PerspectiveSuccess, MetricsError> {
    let mut sr = BTreeMap::new();
    for k in SUCCESS_CUTOFFS {
        sr.insert(
            format!("sr@{k}"),
            success_rate_at(transcripts, catalog, perspective, k, depth)?,
        );
    }
    Ok(PerspectiveSuccess {
        sr,
        average_turns: average_turns(transcripts, catalog, perspective, depth)?,
    })
}

/// The ability vector of one persona cohort, or the reason it is
/// incomplete.
fn cohort_abilities(
    key: &str,
    transcripts: &[&Transcript],
    cards: &[&Scorecard],
    probes: &[&ProbeOutcome],
    catalog: &Catalog,
) -> Result<Result<AbilityVector, String>, MetricsError> {
    let acceptance = acceptance_rate(transcripts)?;
    let quality = 5.0 * acceptance;

    let deceptive = deceptive_ratio(transcripts, catalog)?;
    let Some(deceptive) = deceptive.value() else {
        return Ok(Err(format!("cohort {key}: no accepted sessions")));
    };
    let identity = 5.0 * (1.0 - deceptive);

    let nonexistent = nonexistent_ratio(transcripts)?;
    let Some(nonexistent) = nonexistent.value() else {
        return Ok(Err(format!("cohort {key}: no item mentions")));
    };
    let sincerity = sincerity_score(deceptive, nonexistent);

    let probes_owned: Vec<ProbeOutcome> = probes.iter().map(|p| (*p).clone()).collect();
    let Ok(rates) = aggregate_reliability(&probes_owned) else {
        return Ok(Err(format!("cohort {key}: no probe outcomes")));
    };
    let reliability = crate::metrics::reliability_score(rates.inconsistency, rates.sensitivity);

    let means = rubric_means(cards);
    let (Some(manner), Some(rubric_quality), Some(relevance)) = (
        means.manner.value(),
        means.quality.value(),
        means.relevance.value(),
    ) else {
        return Ok(Err(format!("cohort {key}: no judged transcripts")));
    };
    let Some(social) = means.social_awareness.value() else {
        return Ok(Err(format!("cohort {key}: no social awareness scores")));
    };
    let cooperation =
        crate::metrics::cooperation_score(manner, sincerity, rubric_quality, relevance);

    Ok(Ok(AbilityVector {
        quality,
        reliability,
        identity,
        cooperation,
        social_awareness: social,
    }))
}

fn breakdown_metrics(
    transcripts: &[&Transcript],
    catalog: &Catalog,
    depth: usize,
) -> Result<BTreeMap<String, Computed>, MetricsError> {
    let mut m = BTreeMap::new();
    m.insert(
        "acceptance_rate".to_string(),
        Computed::Value(acceptance_rate(transcripts)?),
    );
    for (label, perspective) in [
        ("module", Perspective::Module),
        ("conversation", Perspective::Conversation),
        ("user", Perspective::User),
    ] {
        m.insert(
            format!("{label}.sr@10"),
            Computed::Value(success_rate_at(transcripts, catalog, perspective, 10, depth)?),
        );
    }
    m.insert(
        "deceptive_ratio".to_string(),
        deceptive_ratio(transcripts, catalog)?,
    );
    m.insert(
        "nonexistent_ratio".to_string(),
        nonexistent_ratio(transcripts)?,
    );
    Ok(m)
}

pub fn build_report(inputs: &ReportInputs, clock: &dyn Clock) -> Result<EvalReport, ReportError> {
    let errored = inputs
        .transcripts
        .iter()
        .filter(|t| t.terminated_by == Termination::Error)
        .count();
    let usable: Vec<&Transcript> = inputs
        .transcripts
        .iter()
        .filter(|t| t.terminated_by != Termination::Error)
        .collect();
    if usable.is_empty() {
        return Err(ReportError::NoUsableTranscripts);
    }
    let depth = inputs.module_success_depth;
    let catalog = inputs.catalog;

    let mut recall = BTreeMap::new();
    for k in RECALL_CUTOFFS {
        recall.insert(format!("recall@{k}"), recall_at(&usable, catalog, k)?);
    }
    let computational = ComputationalMetrics {
        module: perspective_success(&usable, catalog, Perspective::Module, depth)?,
        conversation: perspective_success(&usable, catalog, Perspective::Conversation, depth)?,
        user: perspective_success(&usable, catalog, Perspective::User, depth)?,
        recall,
        acceptance_rate: acceptance_rate(&usable)?,
        nonexistent_ratio: nonexistent_ratio(&usable)?,
        deceptive_ratio: deceptive_ratio(&usable, catalog)?,
    };

    let reliability = if inputs.probe_outcomes.is_empty() {
        None
    } else {
        // Non-empty input cannot hit the empty-set error.
        Some(aggregate_reliability(inputs.probe_outcomes).expect("outcomes are non-empty"))
    };

    let cards: Vec<&Scorecard> = inputs.scorecards.iter().collect();
    let means = rubric_means(&cards);

    let rates = RawRates {
        acceptance: Computed::Value(computational.acceptance_rate),
        inconsistency: match &reliability {
            Some(r) => Computed::Value(r.inconsistency),
            None => Computed::na("no probe outcomes"),
        },
        sensitivity: match &reliability {
            Some(r) => Computed::Value(r.sensitivity),
            None => Computed::na("no probe outcomes"),
        },
        deceptive: computational.deceptive_ratio.clone(),
        nonexistent: computational.nonexistent_ratio.clone(),
    };
    let abilities = composite_scores(&rates, &means);

    // Coordination compares persona cohorts: one cohort per
    // sentiment/age pair present in the run.
    let mut by_cohort: BTreeMap<String, Vec<&Transcript>> = BTreeMap::new();
    for t in &usable {
        let key = format!(
            "{}/{}",
            t.user_spec.persona.sentiment, t.user_spec.persona.age_group
        );
        by_cohort.entry(key).or_default().push(t);
    }
    let card_by_cell: BTreeMap<&str, &Scorecard> = inputs
        .scorecards
        .iter()
        .map(|c| (c.cell_id.as_str(), c))
        .collect();
    let cohort_of_cell: BTreeMap<&str, String> = usable
        .iter()
        .map(|t| {
            (
                t.cell_id.as_str(),
                format!(
                    "{}/{}",
                    t.user_spec.persona.sentiment, t.user_spec.persona.age_group
                ),
            )
        })
        .collect();
    let coordination = if by_cohort.len() < 2 {
        Computed::na("fewer than two persona cohorts")
    } else {
        let mut vectors = Vec::new();
        let mut missing: Option<String> = None;
        for (key, cohort_transcripts) in &by_cohort {
            let cohort_cards: Vec<&Scorecard> = cohort_transcripts
                .iter()
                .filter_map(|t| card_by_cell.get(t.cell_id.as_str()).copied())
                .collect();
            let cohort_probes: Vec<&ProbeOutcome> = inputs
                .probe_outcomes
                .iter()
                .filter(|p| cohort_of_cell.get(p.cell_id.as_str()) == Some(key))
                .collect();
            match cohort_abilities(key, cohort_transcripts, &cohort_cards, &cohort_probes, catalog)?
            {
                Ok(vector) => vectors.push(vector),
                Err(reason) => {
                    missing.get_or_insert(reason);
                }
            }
        }
        match missing {
            Some(reason) => Computed::na(reason),
            None => coordination_score(&vectors)?,
        }
    };

    // Per-dimension breakdowns over the usable transcripts.
    let mut breakdown = Vec::new();
    for (kind, key_of) in [
        (
            "sentiment",
            Box::new(|t: &Transcript| t.user_spec.persona.sentiment.clone())
                as Box<dyn Fn(&Transcript) -> String>,
        ),
        (
            "age_group",
            Box::new(|t: &Transcript| t.user_spec.persona.age_group.clone()),
        ),
    ] {
        let mut by_key: BTreeMap<String, Vec<&Transcript>> = BTreeMap::new();
        for t in &usable {
            by_key.entry(key_of(t)).or_default().push(t);
        }
        for (key, group) in by_key {
            breakdown.push(CohortRow {
                kind: kind.to_string(),
                key,
                n: group.len(),
                metrics: breakdown_metrics(&group, catalog, depth)?,
            });
        }
    }

    let transcript_by_cell: BTreeMap<&str, &Transcript> =
        usable.iter().map(|t| (t.cell_id.as_str(), *t)).collect();
    let mut length_bias: Vec<LengthPoint> = inputs
        .scorecards
        .iter()
        .filter_map(|card| {
            let t = transcript_by_cell.get(card.cell_id.as_str())?;
            let words = average_response_words(t)?;
            Some(LengthPoint {
                cell_id: card.cell_id.clone(),
                avg_response_words: words,
                overall_performance: card.overall_performance.score,
            })
        })
        .collect();
    length_bias.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));

    let overall_mean = match mean(
        inputs
            .scorecards
            .iter()
            .map(|c| f64::from(c.overall_performance.score)),
    ) {
        Some(v) => Computed::Value(v),
        None => Computed::na("no judged transcripts"),
    };
    let satisfaction_mean = match mean(
        inputs
            .scorecards
            .iter()
            .map(|c| f64::from(c.user_satisfaction.score)),
    ) {
        Some(v) => Computed::Value(v),
        None => Computed::na("no judged transcripts"),
    };

    let mut judge_failures = inputs.judge_failures.to_vec();
    judge_failures.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));

    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        config_digest: inputs.config_digest.to_string(),
        generated_at: clock.now(),
        counts: ReportCounts {
            transcripts: inputs.transcripts.len(),
            errored_transcripts: errored,
            scorecards: inputs.scorecards.len(),
            judge_failures: inputs.judge_failures.len(),
            probe_outcomes: inputs.probe_outcomes.len(),
        },
        computational,
        reliability,
        rubric_means: means,
        abilities,
        coordination,
        persuasiveness: rubric_mean(&cards, "Explanation"),
        human_likeness: rubric_mean(&cards, "Human-like"),
        overall_performance_mean: overall_mean,
        user_satisfaction_mean: satisfaction_mean,
        breakdown,
        length_bias,
        judge_failures,
    })
}

pub fn write_report_json(report: &EvalReport, path: &std::path::Path) -> Result<(), ReportError> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json + "\n").map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

pub fn read_report(path: &std::path::Path) -> Result<EvalReport, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn csv_value(c: &Computed) -> (String, String) {
    match c {
        Computed::Value(v) => (format!("{v}"), String::new()),
        Computed::NotApplicable { not_applicable } => (String::new(), not_applicable.clone()),
    }
}

/// Flattens the report into `section,key,metric,value,note` rows. A row
/// with an empty value carries the not-applicable reason in `note`.
pub fn write_report_csv(report: &EvalReport, path: &std::path::Path) -> Result<(), ReportError> {
    let io_err = |e: csv::Error| ReportError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(["section", "key", "metric", "value", "note"])
        .map_err(io_err)?;
    let mut row = |section: &str, key: &str, metric: &str, value: String, note: String| {
        w.write_record([section, key, metric, &value, &note])
    };

    row(
        "computational",
        "",
        "acceptance_rate",
        format!("{}", report.computational.acceptance_rate),
        String::new(),
    )
    .map_err(io_err)?;
    for (label, p) in [
        ("module", &report.computational.module),
        ("conversation", &report.computational.conversation),
        ("user", &report.computational.user),
    ] {
        for (k, v) in &p.sr {
            row("computational", label, k, format!("{v}"), String::new()).map_err(io_err)?;
        }
        let (value, note) = csv_value(&p.average_turns);
        row("computational", label, "average_turns", value, note).map_err(io_err)?;
    }
    for (k, v) in &report.computational.recall {
        let (value, note) = csv_value(v);
        row("computational", "module", k, value, note).map_err(io_err)?;
    }
    for (metric, v) in [
        ("nonexistent_ratio", &report.computational.nonexistent_ratio),
        ("deceptive_ratio", &report.computational.deceptive_ratio),
    ] {
        let (value, note) = csv_value(v);
        row("computational", "", metric, value, note).map_err(io_err)?;
    }

    if let Some(r) = &report.reliability {
        for (metric, v) in [
            ("action_consistency", r.action_consistency),
            ("rec_consistency", r.rec_consistency),
            ("inconsistency", r.inconsistency),
            ("diversity", r.diversity),
            ("sensitivity", r.sensitivity),
        ] {
            row("reliability", "", metric, format!("{v}"), String::new()).map_err(io_err)?;
        }
        row(
            "reliability",
            "",
            "probes",
            format!("{}", r.probes),
            String::new(),
        )
        .map_err(io_err)?;
    }

    for (metric, v) in [
        (RUBRIC_CRITERIA[0], &report.rubric_means.relevance),
        (RUBRIC_CRITERIA[1], &report.rubric_means.quality),
        (RUBRIC_CRITERIA[2], &report.rubric_means.manner),
        (RUBRIC_CRITERIA[3], &report.rubric_means.human_like),
        (RUBRIC_CRITERIA[4], &report.rubric_means.explanation),
        (SOCIAL_CRITERION, &report.rubric_means.social_awareness),
    ] {
        let (value, note) = csv_value(v);
        row("rubric", "", metric, value, note).map_err(io_err)?;
    }

    for (metric, v) in [
        ("quality", &report.abilities.quality),
        ("reliability", &report.abilities.reliability),
        ("sincerity", &report.abilities.sincerity),
        ("cooperation", &report.abilities.cooperation),
        ("social_awareness", &report.abilities.social_awareness),
        ("identity", &report.abilities.identity),
        ("coordination", &report.coordination),
    ] {
        let (value, note) = csv_value(v);
        row("ability", "", metric, value, note).map_err(io_err)?;
    }

    for (metric, v) in [
        ("persuasiveness", &report.persuasiveness),
        ("human_likeness", &report.human_likeness),
        ("overall_performance_mean", &report.overall_performance_mean),
        ("user_satisfaction_mean", &report.user_satisfaction_mean),
    ] {
        let (value, note) = csv_value(v);
        row("judgement", "", metric, value, note).map_err(io_err)?;
    }

    for cohort in &report.breakdown {
        row(
            &cohort.kind,
            &cohort.key,
            "n",
            format!("{}", cohort.n),
            String::new(),
        )
        .map_err(io_err)?;
        for (metric, v) in &cohort.metrics {
            let (value, note) = csv_value(v);
            row(&cohort.kind, &cohort.key, metric, value, note).map_err(io_err)?;
        }
    }

    for point in &report.length_bias {
        row(
            "length_bias",
            &point.cell_id,
            "avg_response_words",
            format!("{}", point.avg_response_words),
            String::new(),
        )
        .map_err(io_err)?;
        row(
            "length_bias",
            &point.cell_id,
            "overall_performance",
            format!("{}", point.overall_performance),
            String::new(),
        )
        .map_err(io_err)?;
    }

    w.flush().map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok(())
}
