//! Command-line entry points.
//!
//! A run directory is the unit of work every subcommand operates on:
//!
//! ```text
//! config.json                 the configuration the run was started with
//! cohort.jsonl                user specs that ran, one JSON object per line
//! transcripts/{cell}.json     one conversation per cohort cell
//! probes/{cell}.json          one reliability probe outcome per probed cell
//! scorecards/{cell}.scorecard.json
//! manifest.jsonl              append-only event log, one record per artifact
//! report.json / report.csv
//! ```
//!
//! `run` populates transcripts, `probe` and `judge` enrich them, `report`
//! folds everything into one document. All four accept the same gateway
//! flags; `probe` and `judge` default them from config.json so a recorded
//! run replays without repeating the setup.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::{CrsAdapter, HttpCrs, ScriptedCrs, SubprocessCrs};
use crate::catalog::{load_catalog, load_groups, load_lexicon};
use crate::gateway::{
    ChatTransport, DecodingConfig, FixtureStore, Gateway, GatewayMode, HttpTransport,
};
use crate::judge::{read_scorecard, write_scorecard, Judge, JudgeConfig, Scorecard};
use crate::persona::{enumerate_cohort, load_sentiments, persona_description, UserSpec, AGE_GROUPS};
use crate::prompts::PromptSet;
use crate::reliability::{aggregate_reliability, make_probe_pair, probe_pair, ProbeOutcome};
use crate::report::{build_report, write_report_csv, write_report_json, JudgeFailure, ReportInputs};
use crate::session::{
    read_transcript, run_conversation, write_transcript, Clock, FixedClock, SessionConfig,
    SystemClock, Termination, Transcript,
};
use crate::simulator::Simulator;

#[derive(Parser, Debug)]
#[command(name = "crs-eval", about = "Evaluation harness for conversational recommenders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate one conversation per cohort cell against an adapter.
    Run(RunArgs),
    /// Paraphrase-probe recorded transcripts for recommendation stability.
    Probe(ProbeArgs),
    /// Score recorded transcripts with the rubric judge.
    Judge(JudgeArgs),
    /// Fold transcripts, probes, and scorecards into report.json/report.csv.
    Report(ReportArgs),
    /// Fixture store maintenance.
    Fixtures {
        #[command(subcommand)]
        action: FixturesAction,
    },
}

#[derive(Subcommand, Debug)]
pub enum FixturesAction {
    /// Check every fixture file parses and matches its digest.
    Verify {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Item catalog, one JSON object per line.
    #[arg(long)]
    pub catalog: PathBuf,
    /// Attribute groups defining the cohort targets.
    #[arg(long)]
    pub groups: PathBuf,
    /// Adjusted preference phrases, one per catalog attribute.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Persona sentiments with descriptions.
    #[arg(long)]
    pub sentiments: PathBuf,
    /// Adapter spec: stub:PATH, subprocess:CMD [ARGS..], or an http(s) URL.
    #[arg(long)]
    pub adapter: String,
    /// Run directory to create or resume.
    #[arg(long)]
    pub out: PathBuf,
    /// Gateway mode: live, record, or replay.
    #[arg(long)]
    pub mode: String,
    /// Fixture directory, required for record and replay.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Model name sent to the provider and baked into fixture digests.
    #[arg(long, default_value = "default")]
    pub model: String,
    /// Directory overriding the built-in prompt templates.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub max_turns: u32,
    /// Ranked-list depth the module perspective inspects.
    #[arg(long, default_value_t = 10)]
    pub module_depth: usize,
    /// Run only the first N cohort cells.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Concurrent sessions.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Skip cells that already have a transcript from this configuration.
    #[arg(long)]
    pub resume: bool,
    /// Provider requests per minute.
    #[arg(long)]
    pub rate_limit: Option<u32>,
}

#[derive(Args, Debug, Clone)]
pub struct ProbeArgs {
    /// Run directory produced by `run`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub adapter: Option<String>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub rate_limit: Option<u32>,
}

#[derive(Args, Debug, Clone)]
pub struct JudgeArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Skip the social awareness pass.
    #[arg(long)]
    pub no_social: bool,
    #[arg(long)]
    pub rate_limit: Option<u32>,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Report JSON path, default {run}/report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report CSV path, default {run}/report.csv.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Everything that determines run semantics. Serialized to config.json;
/// its digest stamps transcripts so resume can tell stale artifacts from
/// current ones. Execution details (parallelism, rate limits) stay out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: String,
    pub mode: String,
    pub adapter: String,
    pub catalog: String,
    pub groups: String,
    pub lexicon: String,
    pub sentiments: String,
    pub prompts: Option<String>,
    pub fixtures: Option<String>,
    pub max_turns: u32,
    pub module_success_depth: usize,
    pub temperature: f64,
    pub seed: u64,
    pub max_output_tokens: u32,
    pub limit: Option<usize>,
}

pub fn run_config_digest(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifestRecord {
    Transcript {
        cell_id: String,
        config_digest: String,
        terminated_by: String,
    },
    Probe {
        cell_id: String,
        config_digest: String,
        rec_consistent: bool,
    },
    ProbeError {
        cell_id: String,
        config_digest: String,
        detail: String,
    },
    Judge {
        cell_id: String,
        config_digest: String,
    },
    JudgeError {
        cell_id: String,
        config_digest: String,
        label: String,
    },
}

pub fn append_manifest(run_dir: &Path, records: &[ManifestRecord]) -> Result<()> {
    use std::io::Write as _;
    let path = run_dir.join("manifest.jsonl");
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .with_context(|| format!("open {}", path.display()))?;
    for record in records {
        let line = serde_json::to_string(record)?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

pub fn read_manifest(run_dir: &Path) -> Result<Vec<ManifestRecord>> {
    let path = run_dir.join("manifest.jsonl");
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

/// Judge failures that still matter: the latest error per cell, dropped
/// once a later pass judged that cell successfully.
pub fn effective_judge_failures(
    records: &[ManifestRecord],
    scorecards: &[Scorecard],
) -> Vec<JudgeFailure> {
    let judged: BTreeSet<&str> = scorecards.iter().map(|c| c.cell_id.as_str()).collect();
    let mut latest: BTreeMap<&str, &str> = BTreeMap::new();
    for record in records {
        if let ManifestRecord::JudgeError { cell_id, label, .. } = record {
            latest.insert(cell_id, label);
        }
    }
    latest
        .into_iter()
        .filter(|(cell, _)| !judged.contains(cell))
        .map(|(cell, label)| JudgeFailure {
            cell_id: cell.to_string(),
            label: label.to_string(),
        })
        .collect()
}

fn build_adapter(spec: &str) -> Result<Box<dyn CrsAdapter>> {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(Box::new(HttpCrs::new(spec)?));
    }
    if let Some(path) = spec.strip_prefix("stub:") {
        return Ok(Box::new(ScriptedCrs::from_path(Path::new(path))?));
    }
    if let Some(command) = spec.strip_prefix("subprocess:") {
        let mut parts = command.split_whitespace();
        let program = parts.next().filter(|p| !p.is_empty()).with_context(|| {
            format!("adapter spec '{spec}' names no program to spawn")
        })?;
        let args: Vec<String> = parts.map(str::to_string).collect();
        return Ok(Box::new(SubprocessCrs::spawn(program, &args)?));
    }
    bail!("unknown adapter spec '{spec}': expected stub:PATH, subprocess:CMD, or an http(s) URL")
}

fn build_gateway(
    model: &str,
    mode_text: &str,
    fixtures: Option<&Path>,
    rate_limit: Option<u32>,
    transport_override: Option<Arc<dyn ChatTransport>>,
) -> Result<Gateway> {
    let mode: GatewayMode = mode_text.parse().map_err(|e: String| anyhow::anyhow!(e))?;
    let store = |required_by: &str| -> Result<FixtureStore> {
        let dir = fixtures
            .with_context(|| format!("--fixtures is required in {required_by} mode"))?;
        Ok(FixtureStore::open(dir)?)
    };
    let provider = |override_: Option<Arc<dyn ChatTransport>>| -> Result<Arc<dyn ChatTransport>> {
        match override_ {
            Some(t) => Ok(t),
            None => Ok(Arc::new(HttpTransport::from_env()?)),
        }
    };
    let gateway = match mode {
        GatewayMode::Live => Gateway::live(model, provider(transport_override)?),
        GatewayMode::Record => {
            Gateway::record(model, store("record")?, provider(transport_override)?)
        }
        GatewayMode::Replay => Gateway::replay(model, store("replay")?),
    };
    Ok(match rate_limit {
        Some(rpm) => gateway.with_rate_limit(rpm),
        None => gateway,
    })
}

fn load_prompts(dir: Option<&Path>) -> Result<PromptSet> {
    Ok(match dir {
        Some(d) => PromptSet::from_dir(d)?,
        None => PromptSet::builtin(),
    })
}

/// Replay must be deterministic end to end, so it gets a fixed clock.
pub fn clock_for(mode: &str) -> Box<dyn Clock> {
    if mode == "replay" {
        Box::new(FixedClock::default())
    } else {
        Box::new(SystemClock)
    }
}

fn termination_label(t: &Termination) -> String {
    serde_json::to_value(t)
        .expect("termination serializes")
        .as_str()
        .expect("termination is a string")
        .to_string()
}

fn path_text(path: &Path) -> String {
    path.display().to_string()
}

pub fn read_json_dir<T: DeserializeOwned>(dir: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let text = fs::read_to_string(&path)?;
        out.push(
            serde_json::from_str(&text).with_context(|| format!("parse {}", path.display()))?,
        );
    }
    Ok(out)
}

pub fn read_run_config(run_dir: &Path) -> Result<RunConfig> {
    let path = run_dir.join("config.json");
    let text = fs::read_to_string(&path).with_context(|| format!("read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parse {}", path.display()))
}

pub fn read_run_transcripts(run_dir: &Path) -> Result<Vec<Transcript>> {
    let mut transcripts: Vec<Transcript> = read_json_dir(&run_dir.join("transcripts"))?;
    transcripts.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    Ok(transcripts)
}

pub fn read_run_scorecards(run_dir: &Path) -> Result<Vec<Scorecard>> {
    let dir = run_dir.join("scorecards");
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.to_string_lossy().ends_with(".scorecard.json"))
        .collect();
    paths.sort();
    for path in paths {
        out.push(read_scorecard(&path).map_err(|e| anyhow::anyhow!(e))?);
    }
    Ok(out)
}

#[derive(Debug)]
pub struct RunSummary {
    pub cells: usize,
    pub ran: usize,
    pub resumed: usize,
    pub errored: usize,
    pub config_digest: String,
}

/// Simulates the cohort. `transport_override` lets callers supply the chat
/// provider directly; the binary passes None and reads the environment.
pub fn cmd_run(
    args: &RunArgs,
    transport_override: Option<Arc<dyn ChatTransport>>,
) -> Result<RunSummary> {
    let catalog = load_catalog(&args.catalog)?;
    let groups = load_groups(&args.groups)?;
    let lexicon = load_lexicon(&args.lexicon)?;
    let sentiments = load_sentiments(&args.sentiments)?;
    lexicon.validate_covers(catalog.vocabulary())?;
    for group in &groups {
        catalog.validate_group(group)?;
    }

    let config = RunConfig {
        model: args.model.clone(),
        mode: args.mode.clone(),
        adapter: args.adapter.clone(),
        catalog: path_text(&args.catalog),
        groups: path_text(&args.groups),
        lexicon: path_text(&args.lexicon),
        sentiments: path_text(&args.sentiments),
        prompts: args.prompts.as_deref().map(path_text),
        fixtures: args.fixtures.as_deref().map(path_text),
        max_turns: args.max_turns,
        module_success_depth: args.module_depth,
        temperature: DecodingConfig::default().temperature,
        seed: DecodingConfig::default().seed,
        max_output_tokens: DecodingConfig::default().max_output_tokens,
        limit: args.limit,
    };
    let digest = run_config_digest(&config);

    // Cheap local validation first; provider setup can spawn processes.
    let adapter = build_adapter(&args.adapter)?;
    let gateway = build_gateway(
        &args.model,
        &args.mode,
        args.fixtures.as_deref(),
        args.rate_limit,
        transport_override,
    )?;
    let prompts = load_prompts(args.prompts.as_deref())?;
    let decoding = DecodingConfig::default();
    let clock = clock_for(&args.mode);

    let ages: Vec<String> = AGE_GROUPS.iter().map(|a| a.to_string()).collect();
    let mut specs = enumerate_cohort(&sentiments, &ages, &groups, &lexicon)?;
    if let Some(limit) = args.limit {
        specs.truncate(limit);
    }

    // One paraphrase per distinct persona, shared by every cell using it.
    let pairs: BTreeSet<(String, String)> = specs
        .iter()
        .map(|s| (s.persona.sentiment.clone(), s.persona.age_group.clone()))
        .collect();
    let mut described: BTreeMap<(String, String), String> = BTreeMap::new();
    for (name, age) in pairs {
        let sentiment = sentiments
            .iter()
            .find(|s| s.name == name)
            .expect("cohort sentiment comes from the loaded list");
        let description = persona_description(&gateway, &prompts, &decoding, sentiment, &age)?;
        described.insert((name, age), description);
    }
    for spec in &mut specs {
        let key = (spec.persona.sentiment.clone(), spec.persona.age_group.clone());
        spec.persona.description = described[&key].clone();
    }

    fs::create_dir_all(&args.out)?;
    let transcripts_dir = args.out.join("transcripts");
    fs::create_dir_all(&transcripts_dir)?;
    fs::write(
        args.out.join("config.json"),
        serde_json::to_string_pretty(&config)? + "\n",
    )?;
    let cohort_lines: Vec<String> = specs
        .iter()
        .map(|s| serde_json::to_string(s).expect("spec serializes"))
        .collect();
    fs::write(args.out.join("cohort.jsonl"), cohort_lines.join("\n") + "\n")?;

    let mut resumed = 0usize;
    let mut pending: VecDeque<UserSpec> = VecDeque::new();
    for spec in specs.iter() {
        let path = transcripts_dir.join(format!("{}.json", spec.cell_id));
        let reusable = args.resume
            && read_transcript(&path).is_ok_and(|t| {
                t.metadata.config_digest == digest && t.terminated_by != Termination::Error
            });
        if reusable {
            resumed += 1;
        } else {
            pending.push_back(spec.clone());
        }
    }

    let simulator = Simulator::new(&gateway, &prompts, decoding);
    let session_config = SessionConfig {
        max_turns: args.max_turns,
        module_success_depth: args.module_depth,
    };

    let queue = Mutex::new(pending);
    let new_records: Mutex<Vec<ManifestRecord>> = Mutex::new(Vec::new());
    let write_failures: Mutex<Vec<String>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..args.parallel.max(1) {
            scope.spawn(|| loop {
                let spec = queue.lock().expect("queue lock").pop_front();
                let Some(spec) = spec else { break };
                let transcript = run_conversation(
                    &spec,
                    &simulator,
                    &*adapter,
                    &catalog,
                    &session_config,
                    &digest,
                    &*clock,
                );
                match write_transcript(&transcripts_dir, &transcript) {
                    Ok(_) => new_records.lock().expect("records lock").push(
                        ManifestRecord::Transcript {
                            cell_id: transcript.cell_id.clone(),
                            config_digest: digest.clone(),
                            terminated_by: termination_label(&transcript.terminated_by),
                        },
                    ),
                    Err(e) => write_failures
                        .lock()
                        .expect("failures lock")
                        .push(format!("{}: {e}", spec.cell_id)),
                }
            });
        }
    });
    let failures = write_failures.into_inner().expect("failures lock");
    if !failures.is_empty() {
        bail!("could not persist transcripts: {}", failures.join("; "));
    }
    let mut records = new_records.into_inner().expect("records lock");
    records.sort_by(|a, b| manifest_cell(a).cmp(manifest_cell(b)));
    let errored = records
        .iter()
        .filter(|r| matches!(r, ManifestRecord::Transcript { terminated_by, .. } if terminated_by == "error"))
        .count();
    let ran = records.len();
    append_manifest(&args.out, &records)?;

    for record in &records {
        if let ManifestRecord::Transcript {
            cell_id,
            terminated_by,
            ..
        } = record
        {
            if terminated_by == "error" {
                eprintln!("cell {cell_id} errored; transcript kept for inspection");
            }
        }
    }
    println!(
        "run: {} cells ({} simulated, {} resumed, {} errored), digest {}",
        specs.len(),
        ran,
        resumed,
        errored,
        digest
    );
    Ok(RunSummary {
        cells: specs.len(),
        ran,
        resumed,
        errored,
        config_digest: digest,
    })
}

fn manifest_cell(record: &ManifestRecord) -> &str {
    match record {
        ManifestRecord::Transcript { cell_id, .. }
        | ManifestRecord::Probe { cell_id, .. }
        | ManifestRecord::ProbeError { cell_id, .. }
        | ManifestRecord::Judge { cell_id, .. }
        | ManifestRecord::JudgeError { cell_id, .. } => cell_id,
    }
}

#[derive(Debug)]
pub struct ProbeSummary {
    pub probed: usize,
    pub skipped: usize,
    pub errors: usize,
}

pub fn cmd_probe(
    args: &ProbeArgs,
    transport_override: Option<Arc<dyn ChatTransport>>,
) -> Result<ProbeSummary> {
    let config = read_run_config(&args.run)?;
    let digest = run_config_digest(&config);
    let catalog_path = args
        .catalog
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.catalog));
    let catalog = load_catalog(&catalog_path)?;
    let mode = args.mode.clone().unwrap_or_else(|| config.mode.clone());
    let fixtures = args
        .fixtures
        .clone()
        .or_else(|| config.fixtures.clone().map(PathBuf::from));
    let model = args.model.clone().unwrap_or_else(|| config.model.clone());
    let prompts_dir = args
        .prompts
        .clone()
        .or_else(|| config.prompts.clone().map(PathBuf::from));
    let adapter_spec = args
        .adapter
        .clone()
        .unwrap_or_else(|| config.adapter.clone());

    let gateway = build_gateway(
        &model,
        &mode,
        fixtures.as_deref(),
        args.rate_limit,
        transport_override,
    )?;
    let prompts = load_prompts(prompts_dir.as_deref())?;
    let decoding = DecodingConfig {
        temperature: config.temperature,
        seed: config.seed,
        max_output_tokens: config.max_output_tokens,
    };
    let adapter = build_adapter(&adapter_spec)?;

    let transcripts = read_run_transcripts(&args.run)?;
    if transcripts.is_empty() {
        bail!("no transcripts in {}", args.run.display());
    }
    let probes_dir = args.run.join("probes");
    fs::create_dir_all(&probes_dir)?;

    let mut records = Vec::new();
    let mut probed = 0usize;
    let mut skipped = 0usize;
    let mut errors = 0usize;
    for transcript in &transcripts {
        let pair = match make_probe_pair(transcript, &gateway, &prompts, &decoding) {
            Ok(Some(pair)) => pair,
            Ok(None) => {
                skipped += 1;
                continue;
            }
            Err(e) => {
                errors += 1;
                eprintln!("probe {}: {e}", transcript.cell_id);
                records.push(ManifestRecord::ProbeError {
                    cell_id: transcript.cell_id.clone(),
                    config_digest: digest.clone(),
                    detail: e.to_string(),
                });
                continue;
            }
        };
        match probe_pair(
            &pair,
            &*adapter,
            &catalog,
            &transcript.user_spec.target,
            config.module_success_depth,
        ) {
            Ok(outcome) => {
                let path = probes_dir.join(format!("{}.json", transcript.cell_id));
                fs::write(&path, serde_json::to_string_pretty(&outcome)? + "\n")?;
                records.push(ManifestRecord::Probe {
                    cell_id: transcript.cell_id.clone(),
                    config_digest: digest.clone(),
                    rec_consistent: outcome.rec_consistent,
                });
                probed += 1;
            }
            Err(e) => {
                errors += 1;
                eprintln!("probe {}: {e}", transcript.cell_id);
                records.push(ManifestRecord::ProbeError {
                    cell_id: transcript.cell_id.clone(),
                    config_digest: digest.clone(),
                    detail: e.to_string(),
                });
            }
        }
    }
    append_manifest(&args.run, &records)?;
    let outcomes: Vec<ProbeOutcome> = read_json_dir(&probes_dir)?;
    if let Ok(rates) = aggregate_reliability(&outcomes) {
        println!(
            "probe: {} probed, {} without a probe point, {} errors; rec consistency {:.3}",
            probed, skipped, errors, rates.rec_consistency
        );
    } else {
        println!("probe: {probed} probed, {skipped} without a probe point, {errors} errors");
    }
    Ok(ProbeSummary {
        probed,
        skipped,
        errors,
    })
}

#[derive(Debug)]
pub struct JudgeSummary {
    pub judged: usize,
    pub failures: usize,
}

pub fn cmd_judge(
    args: &JudgeArgs,
    transport_override: Option<Arc<dyn ChatTransport>>,
) -> Result<JudgeSummary> {
    let config = read_run_config(&args.run)?;
    let digest = run_config_digest(&config);
    let mode = args.mode.clone().unwrap_or_else(|| config.mode.clone());
    let fixtures = args
        .fixtures
        .clone()
        .or_else(|| config.fixtures.clone().map(PathBuf::from));
    let model = args.model.clone().unwrap_or_else(|| config.model.clone());
    let prompts_dir = args
        .prompts
        .clone()
        .or_else(|| config.prompts.clone().map(PathBuf::from));

    let gateway = build_gateway(
        &model,
        &mode,
        fixtures.as_deref(),
        args.rate_limit,
        transport_override,
    )?;
    let prompts = load_prompts(prompts_dir.as_deref())?;
    let decoding = DecodingConfig {
        temperature: config.temperature,
        seed: config.seed,
        max_output_tokens: config.max_output_tokens,
    };
    let judge = Judge::new(
        &gateway,
        &prompts,
        decoding,
        JudgeConfig {
            social_awareness: !args.no_social,
        },
    );

    let transcripts = read_run_transcripts(&args.run)?;
    if transcripts.is_empty() {
        bail!("no transcripts in {}", args.run.display());
    }
    let scorecards_dir = args.run.join("scorecards");
    fs::create_dir_all(&scorecards_dir)?;

    let mut records = Vec::new();
    let mut judged = 0usize;
    let mut failures = 0usize;
    for transcript in &transcripts {
        if transcript.terminated_by == Termination::Error {
            continue; // partial sessions are kept for inspection, not scored
        }
        match judge.judge_transcript(transcript) {
            Ok(card) => {
                write_scorecard(&scorecards_dir, &card)?;
                records.push(ManifestRecord::Judge {
                    cell_id: transcript.cell_id.clone(),
                    config_digest: digest.clone(),
                });
                judged += 1;
            }
            Err(e) => {
                failures += 1;
                eprintln!("judge {}: {e}", transcript.cell_id);
                records.push(ManifestRecord::JudgeError {
                    cell_id: transcript.cell_id.clone(),
                    config_digest: digest.clone(),
                    label: e.label(),
                });
            }
        }
    }
    append_manifest(&args.run, &records)?;
    println!("judge: {judged} scored, {failures} failed");
    Ok(JudgeSummary { judged, failures })
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let config = read_run_config(&args.run)?;
    let digest = run_config_digest(&config);
    let catalog_path = args
        .catalog
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.catalog));
    let catalog = load_catalog(&catalog_path)?;

    let transcripts = read_run_transcripts(&args.run)?;
    if transcripts.is_empty() {
        bail!("no transcripts in {}", args.run.display());
    }
    let probes: Vec<ProbeOutcome> = read_json_dir(&args.run.join("probes"))?;
    let scorecards = read_run_scorecards(&args.run)?;
    let manifest = read_manifest(&args.run)?;
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
    let report = build_report(&inputs, &*clock)?;

    let json_path = args.out.clone().unwrap_or_else(|| args.run.join("report.json"));
    let csv_path = args.csv.clone().unwrap_or_else(|| args.run.join("report.csv"));
    write_report_json(&report, &json_path)?;
    write_report_csv(&report, &csv_path)?;

    println!("report: {}", json_path.display());
    for (name, value) in [
        ("quality", &report.abilities.quality),
        ("reliability", &report.abilities.reliability),
        ("cooperation", &report.abilities.cooperation),
        ("social awareness", &report.abilities.social_awareness),
        ("identity", &report.abilities.identity),
        ("coordination", &report.coordination),
    ] {
        match value.value() {
            Some(v) => println!("  {name}: {v:.3}"),
            None => println!("  {name}: n/a ({})", value.reason().unwrap_or("unknown")),
        }
    }
    Ok(())
}

pub fn cmd_fixtures_verify(dir: &Path) -> Result<usize> {
    let store = FixtureStore::open(dir)?;
    let issues = store.verify()?;
    for issue in &issues {
        eprintln!("{}: {}", issue.file, issue.detail);
    }
    println!("fixtures: {} files checked, {} issues", store.len()?, issues.len());
    Ok(issues.len())
}

/// Binary entry point. Returns the process exit code: 0 clean, 2 finished
/// with per-cell failures, 1 fatal.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let outcome: Result<i32> = match &cli.command {
        Command::Run(args) => cmd_run(args, None).map(|s| if s.errored > 0 { 2 } else { 0 }),
        Command::Probe(args) => cmd_probe(args, None).map(|s| if s.errors > 0 { 2 } else { 0 }),
        Command::Judge(args) => cmd_judge(args, None).map(|s| if s.failures > 0 { 2 } else { 0 }),
        Command::Report(args) => cmd_report(args).map(|_| 0),
        Command::Fixtures {
            action: FixturesAction::Verify { dir },
        } => cmd_fixtures_verify(dir).map(|issues| if issues > 0 { 1 } else { 0 }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
