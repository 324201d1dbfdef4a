//! Evaluation harness for conversational recommender systems (CRS).
//!
//! The harness drives a CRS through a narrow wire protocol with a
//! persona-conditioned LLM user simulator, replays paraphrased utterances to
//! probe recommendation reliability, scores finished transcripts with a
//! rubric-driven LLM judge, and folds computational metrics and judge scores
//! into six ability scores per system.
//!
//! Modules are layered roughly bottom-up: [`catalog`] and [`persona`] define
//! the static inputs, [`gateway`] wraps the LLM provider with record/replay
//! fixtures, [`adapter`] speaks to the system under test, [`simulator`] and
//! [`session`] produce transcripts, and [`reliability`], [`judge`],
//! [`metrics`] and [`report`] turn transcripts into scores.

pub mod adapter;
pub mod catalog;
pub mod cli;
pub mod gateway;
pub mod judge;
pub mod metrics;
pub mod persona;
pub mod prompts;
pub mod reliability;
pub mod report;
pub mod session;
pub mod simulator;
