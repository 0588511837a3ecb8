//! Accuracy-weighted voting across models.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::score::{score_model, ScoreOptions, Stratum};
use super::{latest_trials, Trial};
use crate::benchmark_build::BenchmarkManifest;

/// Relative slack under which two vote totals count as tied.
pub const TIE_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("no models to ensemble")]
    NoModels,
    #[error("baseline model {0} is not among the ensembled models")]
    UnknownBaseline(String),
    #[error("baseline model {0} has accuracy 0; weights are undefined")]
    ZeroBaseline(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelVotes {
    pub model: String,
    pub accuracy: f64,
    /// `None` is a parse or transport failure and casts no vote.
    pub letters: BTreeMap<String, Option<char>>,
}

/// Highest total wins; totals within [`TIE_REL_TOL`] of the maximum tie and
/// the alphabetically first of them is chosen.
pub fn weighted_vote(votes: &[(f64, Option<char>)]) -> Option<char> {
    let mut totals: BTreeMap<char, f64> = BTreeMap::new();
    for &(w, letter) in votes {
        if let Some(c) = letter {
            *totals.entry(c).or_default() += w;
        }
    }
    let max = totals.values().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    totals
        .into_iter()
        .find(|&(_, s)| s >= max - TIE_REL_TOL * max.abs())
        .map(|(c, _)| c)
}

pub fn ensemble_weights(models: &[ModelVotes], baseline: &str) -> Result<Vec<f64>, EnsembleError> {
    if models.is_empty() {
        return Err(EnsembleError::NoModels);
    }
    let base = models
        .iter()
        .find(|m| m.model == baseline)
        .ok_or_else(|| EnsembleError::UnknownBaseline(baseline.to_string()))?;
    if base.accuracy <= 0.0 {
        return Err(EnsembleError::ZeroBaseline(baseline.to_string()));
    }
    Ok(models.iter().map(|m| m.accuracy / base.accuracy).collect())
}

/// Per-item ensemble letter over `pair_ids`.
pub fn ensemble_vote(
    models: &[ModelVotes],
    baseline: &str,
    pair_ids: &[String],
) -> Result<BTreeMap<String, Option<char>>, EnsembleError> {
    let weights = ensemble_weights(models, baseline)?;
    Ok(vote_with_weights(models, &weights, pair_ids))
}

pub fn vote_with_weights(models: &[ModelVotes], weights: &[f64], pair_ids: &[String]) -> BTreeMap<String, Option<char>> {
    pair_ids
        .iter()
        .map(|id| {
            let votes: Vec<(f64, Option<char>)> = models
                .iter()
                .zip(weights)
                .map(|(m, &w)| (w, m.letters.get(id).copied().flatten()))
                .collect();
            (id.clone(), weighted_vote(&votes))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub models: Vec<String>,
    pub baseline: String,
    pub weights: BTreeMap<String, f64>,
    pub overall: Stratum,
    pub letters: BTreeMap<String, Option<char>>,
}

/// Ensembles `models` from a trial log; each model's weight is its accuracy
/// over the manifest divided by the baseline's.
pub fn ensemble(
    trials: &[Trial],
    manifest: &BenchmarkManifest,
    models: &[String],
    baseline: &str,
) -> Result<EnsembleReport, EnsembleError> {
    let latest = latest_trials(trials);
    let votes: Vec<ModelVotes> = models
        .iter()
        .map(|name| ModelVotes {
            model: name.clone(),
            accuracy: score_model(&latest, manifest, name, &ScoreOptions::default()).overall.accuracy,
            letters: latest
                .iter()
                .filter(|t| &t.model == name)
                .map(|t| (t.pair_id.clone(), t.parsed_letter))
                .collect(),
        })
        .collect();
    let weights = ensemble_weights(&votes, baseline)?;
    let ids: Vec<String> = manifest.items.iter().map(|i| i.pair_id.clone()).collect();
    let letters = vote_with_weights(&votes, &weights, &ids);
    let mut overall = Stratum::default();
    for item in &manifest.items {
        overall.n += 1;
        overall.correct += (letters[&item.pair_id] == Some(item.answer_letter)) as usize;
    }
    overall.accuracy = if overall.n == 0 {
        0.0
    } else {
        overall.correct as f64 / overall.n as f64
    };
    Ok(EnsembleReport {
        models: models.to_vec(),
        baseline: baseline.to_string(),
        weights: models.iter().cloned().zip(weights).collect(),
        overall,
        letters,
    })
}
