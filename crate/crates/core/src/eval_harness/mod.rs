//! Forced-choice evaluation: prompting, querying, trial logging and every
//! analysis over the resulting logs.

pub mod agreement;
pub mod client;
pub mod ensemble;
pub mod prompt;
pub mod responders;
pub mod runner;
pub mod score;
pub mod stats;
pub mod vqa;

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use agreement::{human_also_wrong_fraction, same_wrong_fraction, wrong_set_iou, Answers};
pub use client::{ChatModel, ChatReply, ChatRequest, HttpChat, ModelEndpoint, QueryError, ScriptedChat};
pub use ensemble::{ensemble, ensemble_vote, EnsembleError, EnsembleReport, ModelVotes};
pub use prompt::{build_prompt, parse_letter, Prompt, PROMPT_VERSION};
pub use responders::{AlwaysLetter, ChatResponder, KeyReader, UniformGuesser};
pub use runner::{run_eval, EvalError, Responder, RunOptions};
pub use score::{score, score_model, score_pooled, Report, ScoreOptions, Stratum};
pub use stats::{kendall_tau_b, pearson};
pub use vqa::{vqascore_eval, HumanAggregation, VqaError, VqaItem, VqaReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    ParseFailure,
    TransportFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub pair_id: String,
    pub model: String,
    pub prompt_version: String,
    pub raw_response: String,
    pub parsed_letter: Option<char>,
    pub correct: bool,
    pub latency_ms: u64,
    /// Unix epoch milliseconds.
    pub ts: u64,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trial {
    /// Builds a trial from a raw response, parsing and scoring it.
    pub fn from_response(
        pair_id: &str,
        model: &str,
        raw: &str,
        valid: &[char],
        answer: char,
        latency_ms: u64,
    ) -> Self {
        let parsed = parse_letter(raw, valid);
        Self {
            pair_id: pair_id.to_string(),
            model: model.to_string(),
            prompt_version: PROMPT_VERSION.to_string(),
            raw_response: raw.to_string(),
            parsed_letter: parsed,
            correct: parsed == Some(answer),
            latency_ms,
            ts: now_ms(),
            status: if parsed.is_some() {
                TrialStatus::Ok
            } else {
                TrialStatus::ParseFailure
            },
            error: None,
        }
    }

    pub fn transport_failure(pair_id: &str, model: &str, err: &QueryError, latency_ms: u64) -> Self {
        Self {
            pair_id: pair_id.to_string(),
            model: model.to_string(),
            prompt_version: PROMPT_VERSION.to_string(),
            raw_response: String::new(),
            parsed_letter: None,
            correct: false,
            latency_ms,
            ts: now_ms(),
            status: TrialStatus::TransportFailure,
            error: Some(err.to_string()),
        }
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Keeps the last trial per `(model, pair_id)`; logs are append-only, so a
/// resumed run that retried an item supersedes the earlier record.
pub fn latest_trials(trials: &[Trial]) -> Vec<Trial> {
    let mut map = std::collections::BTreeMap::new();
    for t in trials {
        map.insert((t.model.clone(), t.pair_id.clone()), t.clone());
    }
    map.into_values().collect()
}
