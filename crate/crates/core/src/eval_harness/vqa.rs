//! VQAScore protocol: a judge's probability of answering "Yes" to whether a
//! frame pair matches a caption written from the first view alone.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::client::{ChatModel, ChatReply, ChatRequest, QueryError};
use super::stats::{kendall_tau_b, pearson};
use super::{latest_trials, Trial};
use crate::benchmark_build::BenchmarkManifest;

pub const CAPTION_PROMPT: &str = "Describe this image in one sentence.";

pub fn judge_question(caption: &str) -> String {
    format!("Does this video show {}? Please answer Yes or No.", caption.trim().trim_end_matches('.'))
}

#[derive(Debug, Error)]
pub enum VqaError {
    #[error("judge {0} returned no token probabilities; the VQAScore protocol needs per-token logprobs for the first answer token")]
    NoTokenProbabilities(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("cannot read {path}: {reason}")]
    Image { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaItem {
    pub pair_id: String,
    pub caption: String,
    pub yes_score_consistent: f64,
    pub yes_score_edited: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanAggregation {
    /// One point per item: the mean correctness across annotators.
    #[default]
    ItemMean,
    /// One point per human answer (0 or 1).
    PerTrial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaReport {
    pub judge: String,
    pub captioner: String,
    pub items: Vec<VqaItem>,
    pub pairwise_acc: f64,
    pub pearson_r: Option<f64>,
    pub kendall_tau: Option<f64>,
    pub correlated_points: usize,
    pub aggregation: HumanAggregation,
}

/// Probability mass on "Yes" among the first token's alternatives.
pub fn yes_probability(judge: &str, reply: &ChatReply) -> Result<f64, VqaError> {
    let alts = reply
        .first_token_logprobs
        .as_ref()
        .filter(|a| !a.is_empty())
        .ok_or_else(|| VqaError::NoTokenProbabilities(judge.to_string()))?;
    let p: f64 = alts
        .iter()
        .filter(|(tok, _)| tok.trim().eq_ignore_ascii_case("yes"))
        .map(|(_, lp)| lp.exp())
        .sum();
    Ok(p.clamp(0.0, 1.0))
}

fn read(root: &Path, rel: &str) -> Result<Vec<u8>, VqaError> {
    let p = root.join(rel);
    std::fs::read(&p).map_err(|e| VqaError::Image {
        path: p.display().to_string(),
        reason: e.to_string(),
    })
}

fn score_pair(judge: &dyn ChatModel, caption: &str, frames: Vec<Vec<u8>>) -> Result<f64, VqaError> {
    let reply = judge.chat(&ChatRequest {
        text: judge_question(caption),
        images: frames,
        top_logprobs: Some(20),
        max_tokens: Some(1),
        ..Default::default()
    })?;
    yes_probability(judge.name(), &reply)
}

/// Mean of `consistent > edited`, ties counting one half.
pub fn pairwise_accuracy(items: &[VqaItem]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items
        .iter()
        .map(|i| match i.yes_score_consistent.total_cmp(&i.yes_score_edited) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Equal => 0.5,
            std::cmp::Ordering::Less => 0.0,
        })
        .sum::<f64>()
        / items.len() as f64
}

/// `(edited score, human value)` points for the correlations.
pub fn correlation_points(
    items: &[VqaItem],
    human_trials: &[Trial],
    manifest: &BenchmarkManifest,
    agg: HumanAggregation,
) -> (Vec<f64>, Vec<f64>) {
    let mut outcomes: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let latest = latest_trials(human_trials);
    for t in &latest {
        if let Some(item) = manifest.item(&t.pair_id) {
            outcomes
                .entry(t.pair_id.as_str())
                .or_default()
                .push((t.parsed_letter == Some(item.answer_letter)) as u8 as f64);
        }
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for it in items {
        let Some(o) = outcomes.get(it.pair_id.as_str()) else { continue };
        match agg {
            HumanAggregation::ItemMean => {
                xs.push(it.yes_score_edited);
                ys.push(o.iter().sum::<f64>() / o.len() as f64);
            }
            HumanAggregation::PerTrial => {
                for &v in o {
                    xs.push(it.yes_score_edited);
                    ys.push(v);
                }
            }
        }
    }
    (xs, ys)
}

/// Runs the captioner on each unedited first view, scores the consistent and
/// edited pairs with that caption, and correlates edited scores with human
/// accuracy on the same items.
pub fn vqascore_eval(
    manifest: &BenchmarkManifest,
    root: &Path,
    judge: &dyn ChatModel,
    captioner: &dyn ChatModel,
    human_trials: &[Trial],
    agg: HumanAggregation,
) -> Result<VqaReport, VqaError> {
    let mut items = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let v1 = read(root, &item.view1_unlabeled)?;
        let v2 = read(root, &item.view2_original)?;
        let v2e = read(root, &item.view2)?;
        let caption = captioner
            .chat(&ChatRequest {
                text: CAPTION_PROMPT.to_string(),
                images: vec![v1.clone()],
                max_tokens: Some(64),
                ..Default::default()
            })?
            .text
            .trim()
            .to_string();
        let yes_score_consistent = score_pair(judge, &caption, vec![v1.clone(), v2])?;
        let yes_score_edited = score_pair(judge, &caption, vec![v1, v2e])?;
        items.push(VqaItem {
            pair_id: item.pair_id.clone(),
            caption,
            yes_score_consistent,
            yes_score_edited,
        });
    }
    let (xs, ys) = correlation_points(&items, human_trials, manifest, agg);
    Ok(VqaReport {
        judge: judge.name().to_string(),
        captioner: captioner.name().to_string(),
        pairwise_acc: pairwise_accuracy(&items),
        pearson_r: pearson(&xs, &ys),
        kendall_tau: kendall_tau_b(&xs, &ys),
        correlated_points: xs.len(),
        items,
        aggregation: agg,
    })
}
