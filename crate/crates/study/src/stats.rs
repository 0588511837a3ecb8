//! Human accuracy, pooled and per participant.

use std::collections::BTreeMap;

use forge_core::eval_harness::{score_model, score_pooled, Report, ScoreOptions, Stratum, Trial};
use forge_core::BenchmarkManifest;
use serde::{Deserialize, Serialize};

use crate::store::{Decision, VetDecision, HUMAN_PREFIX};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VetCounts {
    pub decisions: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanStats {
    /// Every participant pooled; each answer counts once, so the overall
    /// accuracy is the answer-weighted mean over participants.
    pub pooled: Report,
    pub participants: BTreeMap<String, Stratum>,
    pub answers: usize,
    pub vetting: VetCounts,
}

pub fn human_stats(trials: &[Trial], vets: &[VetDecision], manifest: &BenchmarkManifest, opts: &ScoreOptions) -> HumanStats {
    let humans: Vec<Trial> = trials.iter().filter(|t| t.model.starts_with(HUMAN_PREFIX)).cloned().collect();
    let mut participants = BTreeMap::new();
    for t in &humans {
        if !participants.contains_key(&t.model) {
            let r = score_model(&humans, manifest, &t.model, opts);
            participants.insert(t.model.clone(), r.overall);
        }
    }
    let participants = participants
        .into_iter()
        .map(|(m, s)| (m[HUMAN_PREFIX.len()..].to_string(), s))
        .collect();
    let mut pairs: Vec<&str> = vets.iter().map(|v| v.pair_id.as_str()).collect();
    pairs.sort_unstable();
    pairs.dedup();
    HumanStats {
        pooled: score_pooled(&humans, manifest, HUMAN_PREFIX, "human", opts),
        participants,
        answers: humans.len(),
        vetting: VetCounts {
            decisions: vets.len(),
            accepted: vets.iter().filter(|v| v.decision == Decision::Accept).count(),
            rejected: vets.iter().filter(|v| v.decision == Decision::Reject).count(),
            pairs: pairs.len(),
        },
    }
}
