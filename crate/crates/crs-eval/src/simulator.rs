//! Persona-conditioned user simulation.
//!
//! Every user turn is two model calls in a fixed order: first the simulator
//! writes a private feeling about the conversation so far, then it writes
//! the next visible message with that same-turn feeling in context. The
//! feeling never reaches the system under test; it exists for the simulator
//! itself and, later, for the judge.
//!
//! Acceptance is signaled in-band: a user message containing the `[END]`
//! marker (any case) ends the session as accepted.

use thiserror::Error;

use crate::adapter::{Role, WireMessage};
use crate::gateway::{DecodingConfig, Gateway, GatewayError};
use crate::persona::UserSpec;
use crate::prompts::{PromptError, PromptSet};

pub const ACCEPTANCE_MARKER: &str = "[END]";

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("simulator returned a blank {stage}")]
    Blank { stage: &'static str },
}

/// Renders the visible conversation the way the prompts expect it:
/// `Seeker:` for the simulated user, `Recommender:` for the system under
/// test, one line per message. Empty history renders as an empty string.
pub fn history_slot(history: &[WireMessage]) -> String {
    let mut out = String::new();
    for message in history {
        let speaker = match message.role {
            Role::User => "Seeker",
            Role::Assistant => "Recommender",
        };
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(speaker);
        out.push_str(": ");
        out.push_str(&message.text);
    }
    out
}

/// True when the user message signals acceptance.
pub fn detect_acceptance(text: &str) -> bool {
    text.to_lowercase().contains(&ACCEPTANCE_MARKER.to_lowercase())
}

pub struct Simulator<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptSet,
    decoding: DecodingConfig,
}

impl<'a> Simulator<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptSet, decoding: DecodingConfig) -> Self {
        Self {
            gateway,
            prompts,
            decoding,
        }
    }

    fn attribute_slot(spec: &UserSpec) -> String {
        spec.adjusted_preferences.join(", ")
    }

    /// First call of a turn: the private feeling.
    pub fn inner_monologue(
        &self,
        spec: &UserSpec,
        history: &[WireMessage],
    ) -> Result<String, SimulatorError> {
        let prompt = self.prompts.simulator_feeling.fill(&[
            ("PROFILE", spec.persona.description.as_str()),
            ("ATTRIBUTE GROUP", Self::attribute_slot(spec).as_str()),
            ("HISTORY", history_slot(history).as_str()),
        ])?;
        let reply = self.gateway.complete(&prompt, &self.decoding)?;
        let trimmed = reply.trim();
        if trimmed.is_empty() {
            return Err(SimulatorError::Blank { stage: "feeling" });
        }
        Ok(trimmed.to_string())
    }

    /// Second call of a turn: the visible message, conditioned on the
    /// feeling produced moments earlier.
    pub fn next_user_message(
        &self,
        spec: &UserSpec,
        history: &[WireMessage],
        feeling: &str,
    ) -> Result<String, SimulatorError> {
        let prompt = self.prompts.simulator_response.fill(&[
            ("PROFILE", spec.persona.description.as_str()),
            ("ATTRIBUTE GROUP", Self::attribute_slot(spec).as_str()),
            ("HISTORY", history_slot(history).as_str()),
            ("FEELING", feeling),
        ])?;
        let reply = self.gateway.complete(&prompt, &self.decoding)?;
        let trimmed = reply.trim();
        if trimmed.is_empty() {
            return Err(SimulatorError::Blank { stage: "message" });
        }
        Ok(trimmed.to_string())
    }
}
