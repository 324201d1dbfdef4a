//! Python bindings for the evaluation harness. Thin by design: scalar
//! helpers cross as native types, structured data crosses as JSON text.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use crs_eval::catalog::{
    load_catalog, load_groups, load_lexicon, matches_preference, normalize_title,
    resolve_item_mentions, AttributeGroup, Catalog as CoreCatalog,
};
use crs_eval::cli::{
    clock_for, effective_judge_failures, read_json_dir, read_manifest, read_run_config,
    read_run_scorecards, read_run_transcripts, run_config_digest,
};
use crs_eval::gateway::DecodingConfig;
use crs_eval::metrics::{self, AbilityVector, Computed};
use crs_eval::persona::{enumerate_cohort as enumerate, load_sentiments, AGE_GROUPS};
use crs_eval::reliability::ProbeOutcome;
use crs_eval::report::{build_report, ReportInputs};
use crs_eval::simulator;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Item catalog backing mention resolution and preference checks.
#[pyclass(frozen)]
struct Catalog {
    inner: CoreCatalog,
}

#[pymethods]
impl Catalog {
    /// Loads a catalog from a JSONL file of items.
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_catalog(&path).map_err(value_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// (title, attributes) for an id, or None.
    fn item(&self, id: &str) -> Option<(String, Vec<String>)> {
        self.inner.get(id).map(|item| {
            (
                item.title.clone(),
                item.attributes.iter().cloned().collect(),
            )
        })
    }

    /// All attribute labels the catalog uses.
    fn vocabulary(&self) -> Vec<String> {
        self.inner.vocabulary().iter().cloned().collect()
    }

    /// Ids of items carrying every one of the given labels.
    fn matching(&self, labels: Vec<String>) -> PyResult<Vec<String>> {
        let group = AttributeGroup::new(labels).map_err(value_err)?;
        self.inner.validate_group(&group).map_err(value_err)?;
        Ok(self
            .inner
            .target_matching(&group)
            .into_iter()
            .map(|i| i.id.clone())
            .collect())
    }

    /// Whether the item matches all labels. Unknown ids never match.
    fn matches(&self, id: &str, labels: Vec<String>) -> PyResult<bool> {
        let group = AttributeGroup::new(labels).map_err(value_err)?;
        Ok(self
            .inner
            .get(id)
            .is_some_and(|item| matches_preference(item, &group)))
    }

    /// Item mentions found in free text: (span, resolved id or None,
    /// ambiguous) per mention.
    fn mentions(&self, text: &str) -> Vec<(String, Option<String>, bool)> {
        resolve_item_mentions(text, &self.inner)
            .into_iter()
            .map(|m| (m.span, m.item, m.ambiguous))
            .collect()
    }
}

/// True when the simulated user's message closes the session.
#[pyfunction]
fn detect_acceptance(text: &str) -> bool {
    simulator::detect_acceptance(text)
}

/// Canonical form a title is matched under.
#[pyfunction]
#[pyo3(name = "normalize_title")]
fn normalize_title_py(title: &str) -> String {
    normalize_title(title)
}

#[pyfunction]
fn quality_score(acceptance_rate: f64) -> f64 {
    metrics::quality_score(acceptance_rate)
}

#[pyfunction]
fn reliability_score(inconsistency: f64, sensitivity: f64) -> f64 {
    metrics::reliability_score(inconsistency, sensitivity)
}

#[pyfunction]
fn sincerity_score(deceptive_ratio: f64, nonexistent_ratio: f64) -> f64 {
    metrics::sincerity_score(deceptive_ratio, nonexistent_ratio)
}

#[pyfunction]
fn identity_score(deceptive_ratio: f64) -> f64 {
    metrics::identity_score(deceptive_ratio)
}

#[pyfunction]
fn cooperation_score(manner: f64, sincerity: f64, quality: f64, relevance: f64) -> f64 {
    metrics::cooperation_score(manner, sincerity, quality, relevance)
}

/// Cross-cohort coordination. Each cohort is (quality, reliability,
/// identity, cooperation, social_awareness). None when fewer than two
/// cohorts are given; ValueError when an ability has zero mean but
/// nonzero spread.
#[pyfunction]
fn coordination_score(cohorts: Vec<(f64, f64, f64, f64, f64)>) -> PyResult<Option<f64>> {
    let vectors: Vec<AbilityVector> = cohorts
        .into_iter()
        .map(|(q, r, i, c, s)| AbilityVector {
            quality: q,
            reliability: r,
            identity: i,
            cooperation: c,
            social_awareness: s,
        })
        .collect();
    match metrics::coordination_score(&vectors).map_err(value_err)? {
        Computed::Value(v) => Ok(Some(v)),
        Computed::NotApplicable { .. } => Ok(None),
    }
}

/// The full persona-by-target cohort as a JSON array of user specs.
/// Descriptions are the seed templates; a live run rewrites them.
#[pyfunction]
#[pyo3(signature = (sentiments, groups, lexicon, ages=None))]
fn enumerate_cohort(
    sentiments: PathBuf,
    groups: PathBuf,
    lexicon: PathBuf,
    ages: Option<Vec<String>>,
) -> PyResult<String> {
    let sentiments = load_sentiments(&sentiments).map_err(value_err)?;
    let groups = load_groups(&groups).map_err(value_err)?;
    let lexicon = load_lexicon(&lexicon).map_err(value_err)?;
    let ages = ages.unwrap_or_else(|| AGE_GROUPS.iter().map(|a| a.to_string()).collect());
    let specs = enumerate(&sentiments, &ages, &groups, &lexicon).map_err(value_err)?;
    serde_json::to_string(&specs).map_err(value_err)
}

/// Content digest a prompt is stored under in the fixture store.
#[pyfunction]
#[pyo3(signature = (model, prompt, temperature=0.0, seed=42, max_output_tokens=1024))]
fn request_digest(
    model: &str,
    prompt: &str,
    temperature: f64,
    seed: u64,
    max_output_tokens: u32,
) -> String {
    let decoding = DecodingConfig {
        temperature,
        seed,
        max_output_tokens,
    };
    crs_eval::gateway::request_digest(model, prompt, &decoding)
}

/// Folds a finished run directory into the report JSON, without writing
/// any files. `catalog` overrides the path recorded in the run config.
#[pyfunction]
#[pyo3(signature = (run_dir, catalog=None))]
fn run_report(run_dir: PathBuf, catalog: Option<PathBuf>) -> PyResult<String> {
    let config = read_run_config(&run_dir).map_err(value_err)?;
    let digest = run_config_digest(&config);
    let catalog_path = catalog.unwrap_or_else(|| PathBuf::from(&config.catalog));
    let catalog = load_catalog(&catalog_path).map_err(value_err)?;

    let transcripts = read_run_transcripts(&run_dir).map_err(value_err)?;
    let probes: Vec<ProbeOutcome> = read_json_dir(&run_dir.join("probes")).map_err(value_err)?;
    let scorecards = read_run_scorecards(&run_dir).map_err(value_err)?;
    let manifest = read_manifest(&run_dir).map_err(value_err)?;
    let judge_failures = effective_judge_failures(&manifest, &scorecards);

    let inputs = ReportInputs {
        transcripts: &transcripts,
        scorecards: &scorecards,
        probe_outcomes: &probes,
        judge_failures: &judge_failures,
        catalog: &catalog,
        config_digest: &digest,
        module_success_depth: config.module_success_depth,
    };
    let clock = clock_for(&config.mode);
    let report = build_report(&inputs, &*clock).map_err(value_err)?;
    serde_json::to_string(&report).map_err(value_err)
}

#[pymodule]
fn crs_eval_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Catalog>()?;
    m.add_function(wrap_pyfunction!(detect_acceptance, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_title_py, m)?)?;
    m.add_function(wrap_pyfunction!(quality_score, m)?)?;
    m.add_function(wrap_pyfunction!(reliability_score, m)?)?;
    m.add_function(wrap_pyfunction!(sincerity_score, m)?)?;
    m.add_function(wrap_pyfunction!(identity_score, m)?)?;
    m.add_function(wrap_pyfunction!(cooperation_score, m)?)?;
    m.add_function(wrap_pyfunction!(coordination_score, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(request_digest, m)?)?;
    m.add_function(wrap_pyfunction!(run_report, m)?)?;
    Ok(())
}
