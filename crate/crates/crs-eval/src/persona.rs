//! Persona cohort enumeration.
//!
//! A simulated user is one cell of the cross product sentiment x age group x
//! target attribute group. Enumeration is pure: given the same inputs it
//! yields the same specs in the same order (sentiment-major, then age, then
//! group), with a stable `cell_id` per cell, so run artifacts can be keyed
//! and resumed by id. The on-disk description starts as a fixed template
//! sentence; `persona_description` upgrades it to a model paraphrase, which
//! is the only impure step and is kept out of `enumerate_cohort`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{AdjustedLexicon, AttributeGroup, CatalogError};
use crate::gateway::{DecodingConfig, Gateway, GatewayError};
use crate::prompts::{PromptError, PromptSet};

pub const AGE_GROUPS: [&str; 4] = ["Adults", "Children", "Seniors", "Teens"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentiment {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub sentiment: String,
    pub age_group: String,
    /// Natural-language self description handed to the simulator prompts.
    pub description: String,
}

/// One cohort cell: who the simulated user is and what they are after.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub cell_id: String,
    pub persona: Persona,
    pub target: AttributeGroup,
    /// Adjusted preference phrases for the target labels, in label order.
    /// These, not the raw labels, are what prompts may carry.
    pub adjusted_preferences: Vec<String>,
}

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("duplicate sentiment name '{name}'")]
    DuplicateSentiment { name: String },
    #[error("duplicate age group '{name}'")]
    DuplicateAge { name: String },
    #[error("sentiment '{name}' has an empty description")]
    EmptyDescription { name: String },
    #[error("cell id '{id}' collides; names must be distinct after slugging")]
    CellIdCollision { id: String },
    #[error(transparent)]
    Lexicon(#[from] CatalogError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("paraphrase for sentiment '{sentiment}' and age '{age}' came back empty")]
    EmptyParaphrase { sentiment: String, age: String },
}

/// Loads `{"name": ..., "description": ...}` records, one JSON object per
/// line, skipping blank lines.
pub fn load_sentiments(path: &Path) -> Result<Vec<Sentiment>, PersonaError> {
    let text = fs::read_to_string(path).map_err(|source| PersonaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: Sentiment = serde_json::from_str(line).map_err(|e| PersonaError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        if s.description.trim().is_empty() {
            return Err(PersonaError::EmptyDescription { name: s.name });
        }
        if !seen.insert(s.name.clone()) {
            return Err(PersonaError::DuplicateSentiment { name: s.name });
        }
        out.push(s);
    }
    Ok(out)
}

/// The fixed template sentence used as a persona description before any
/// paraphrasing. Kept verbatim in sync with the paraphrase prompt.
pub fn persona_template(sentiment: &str, description: &str, age_group: &str) -> String {
    format!(
        "You are a person that are easy to be {sentiment}. This means that you are {description}. Also, you are a {age_group} person"
    )
}

fn slug(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_dash = true;
    for c in text.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
            last_dash = false;
        } else if !last_dash {
            out.push('-');
            last_dash = true;
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    out
}

pub fn cell_id(sentiment: &str, age_group: &str, group_index: usize) -> String {
    format!(
        "{}-{}-g{:02}",
        slug(sentiment),
        slug(age_group),
        group_index + 1
    )
}

/// Enumerates the whole cohort. Pure: no clock, no randomness, no model
/// calls. The order is sentiment-major, then age group, then target group,
/// matching the input orders.
pub fn enumerate_cohort(
    sentiments: &[Sentiment],
    age_groups: &[String],
    groups: &[AttributeGroup],
    lexicon: &AdjustedLexicon,
) -> Result<Vec<UserSpec>, PersonaError> {
    let mut seen_sentiments = BTreeSet::new();
    for s in sentiments {
        if !seen_sentiments.insert(s.name.as_str()) {
            return Err(PersonaError::DuplicateSentiment {
                name: s.name.clone(),
            });
        }
        if s.description.trim().is_empty() {
            return Err(PersonaError::EmptyDescription {
                name: s.name.clone(),
            });
        }
    }
    let mut seen_ages = BTreeSet::new();
    for a in age_groups {
        if !seen_ages.insert(a.as_str()) {
            return Err(PersonaError::DuplicateAge { name: a.clone() });
        }
    }

    let mut specs = Vec::with_capacity(sentiments.len() * age_groups.len() * groups.len());
    let mut ids = BTreeSet::new();
    for sentiment in sentiments {
        for age in age_groups {
            for (gi, group) in groups.iter().enumerate() {
                let id = cell_id(&sentiment.name, age, gi);
                if !ids.insert(id.clone()) {
                    return Err(PersonaError::CellIdCollision { id });
                }
                let adjusted = group
                    .labels
                    .iter()
                    .map(|label| lexicon.adjusted_phrase(label).map(str::to_string))
                    .collect::<Result<Vec<_>, _>>()?;
                specs.push(UserSpec {
                    cell_id: id,
                    persona: Persona {
                        sentiment: sentiment.name.clone(),
                        age_group: age.clone(),
                        description: persona_template(
                            &sentiment.name,
                            &sentiment.description,
                            age,
                        ),
                    },
                    target: group.clone(),
                    adjusted_preferences: adjusted,
                });
            }
        }
    }
    Ok(specs)
}

/// Asks the model to rewrite the template sentence into a first-person
/// persona description. One call per (sentiment, age) pair; callers cache.
pub fn persona_description(
    gateway: &Gateway,
    prompts: &PromptSet,
    decoding: &DecodingConfig,
    sentiment: &Sentiment,
    age_group: &str,
) -> Result<String, PersonaError> {
    let prompt = prompts.persona_paraphrase.fill(&[
        ("SENTIMENTS", sentiment.name.as_str()),
        ("SENTIMENT DESCRIPTION", sentiment.description.as_str()),
        ("AGE GROUP", age_group),
    ])?;
    let reply = gateway.complete(&prompt, decoding)?;
    let trimmed = reply.trim();
    if trimmed.is_empty() {
        return Err(PersonaError::EmptyParaphrase {
            sentiment: sentiment.name.clone(),
            age: age_group.to_string(),
        });
    }
    Ok(trimmed.to_string())
}
