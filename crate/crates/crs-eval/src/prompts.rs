//! Prompt templates with named slots.
//!
//! Templates ship as plain-text resource files under `prompts/` and are
//! embedded at compile time; a directory override swaps all of them at once.
//! Slot filling is exact string substitution of `{SLOT NAME}` markers, and a
//! template knows its slot list up front, so a missing or unexpected value is
//! an error instead of a silently half-filled prompt. Literal braces in the
//! template body (the JSON shape examples in the judge prompts) pass through
//! untouched because only declared markers are replaced.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template}: no value for slot {{{slot}}}")]
    MissingSlot { template: String, slot: String },
    #[error("template {template}: unknown slot {{{slot}}}")]
    UnknownSlot { template: String, slot: String },
    #[error("template {template}: text does not contain the {{{slot}}} marker")]
    MarkerAbsent { template: String, slot: String },
    #[error("failed to read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct Template {
    pub name: &'static str,
    text: String,
    slots: &'static [&'static str],
}

impl Template {
    fn new(name: &'static str, text: String, slots: &'static [&'static str]) -> Self {
        Self { name, text, slots }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn slots(&self) -> &'static [&'static str] {
        self.slots
    }

    /// Fills every declared slot. Values must cover the declared slots
    /// exactly: nothing missing, nothing extra.
    pub fn fill(&self, values: &[(&str, &str)]) -> Result<String, PromptError> {
        for (name, _) in values {
            if !self.slots.contains(name) {
                return Err(PromptError::UnknownSlot {
                    template: self.name.to_string(),
                    slot: name.to_string(),
                });
            }
        }
        let mut out = self.text.clone();
        for slot in self.slots {
            let value = values
                .iter()
                .find(|(name, _)| name == slot)
                .map(|(_, v)| *v)
                .ok_or_else(|| PromptError::MissingSlot {
                    template: self.name.to_string(),
                    slot: slot.to_string(),
                })?;
            out = out.replace(&format!("{{{slot}}}"), value);
        }
        Ok(out)
    }
}

/// The full set of templates one run works from.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub persona_paraphrase: Template,
    pub simulator_feeling: Template,
    pub simulator_response: Template,
    pub utterance_paraphrase: Template,
    pub judge_rubric: Template,
    pub judge_feelings: Template,
    pub judge_overall: Template,
    pub judge_social: Template,
    pub judge_repair: Template,
}

struct Spec {
    name: &'static str,
    file: &'static str,
    builtin: &'static str,
    slots: &'static [&'static str],
}

const SPECS: [Spec; 9] = [
    Spec {
        name: "persona_paraphrase",
        file: "persona_paraphrase.txt",
        builtin: include_str!("../prompts/persona_paraphrase.txt"),
        slots: &["SENTIMENTS", "SENTIMENT DESCRIPTION", "AGE GROUP"],
    },
    Spec {
        name: "simulator_feeling",
        file: "simulator_feeling.txt",
        builtin: include_str!("../prompts/simulator_feeling.txt"),
        slots: &["PROFILE", "ATTRIBUTE GROUP", "HISTORY"],
    },
    Spec {
        name: "simulator_response",
        file: "simulator_response.txt",
        builtin: include_str!("../prompts/simulator_response.txt"),
        slots: &["PROFILE", "ATTRIBUTE GROUP", "HISTORY", "FEELING"],
    },
    Spec {
        name: "utterance_paraphrase",
        file: "utterance_paraphrase.txt",
        builtin: include_str!("../prompts/utterance_paraphrase.txt"),
        slots: &["MESSAGE"],
    },
    Spec {
        name: "judge_rubric",
        file: "judge_rubric.txt",
        builtin: include_str!("../prompts/judge_rubric.txt"),
        slots: &["HISTORY"],
    },
    Spec {
        name: "judge_feelings",
        file: "judge_feelings.txt",
        builtin: include_str!("../prompts/judge_feelings.txt"),
        slots: &["FEELING"],
    },
    Spec {
        name: "judge_overall",
        file: "judge_overall.txt",
        builtin: include_str!("../prompts/judge_overall.txt"),
        slots: &["HISTORY", "OTHER SCORES", "SUMMERIZED FEELINGS"],
    },
    Spec {
        name: "judge_social",
        file: "judge_social.txt",
        builtin: include_str!("../prompts/judge_social.txt"),
        slots: &["HISTORY"],
    },
    Spec {
        name: "judge_repair",
        file: "judge_repair.txt",
        builtin: include_str!("../prompts/judge_repair.txt"),
        slots: &["REPLY"],
    },
];

impl PromptSet {
    /// The templates embedded at build time from `prompts/`.
    pub fn builtin() -> Self {
        Self::assemble(|spec| Ok(spec.builtin.to_string())).expect("builtin templates")
    }

    /// Loads every template from a directory using the canonical file names.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        Self::assemble(|spec| {
            let path = dir.join(spec.file);
            fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })
        })
    }

    fn assemble<F>(mut read: F) -> Result<Self, PromptError>
    where
        F: FnMut(&Spec) -> Result<String, PromptError>,
    {
        let mut texts = Vec::with_capacity(SPECS.len());
        for spec in &SPECS {
            let text = read(spec)?;
            for slot in spec.slots {
                if !text.contains(&format!("{{{slot}}}")) {
                    return Err(PromptError::MarkerAbsent {
                        template: spec.name.to_string(),
                        slot: slot.to_string(),
                    });
                }
            }
            texts.push(Template::new(spec.name, text, spec.slots));
        }
        let mut it = texts.into_iter();
        Ok(Self {
            persona_paraphrase: it.next().unwrap(),
            simulator_feeling: it.next().unwrap(),
            simulator_response: it.next().unwrap(),
            utterance_paraphrase: it.next().unwrap(),
            judge_rubric: it.next().unwrap(),
            judge_feelings: it.next().unwrap(),
            judge_overall: it.next().unwrap(),
            judge_social: it.next().unwrap(),
            judge_repair: it.next().unwrap(),
        })
    }
}
