//! Accuracy reports, overall and per stratum.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{latest_trials, Trial, TrialStatus};
use crate::benchmark_build::{expected_random_accuracy, BenchmarkItem, BenchmarkManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Count items without a trial as incorrect instead of leaving them out.
    pub strict: bool,
    /// Object categories with fewer items are reported as `misc`.
    pub misc_min_items: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            strict: false,
            misc_min_items: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl Stratum {
    fn add(&mut self, correct: bool) {
        self.n += 1;
        self.correct += correct as usize;
    }

    fn finish(&mut self) {
        self.accuracy = if self.n == 0 {
            0.0
        } else {
            self.correct as f64 / self.n as f64
        };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub model: String,
    pub manifest_items: usize,
    pub overall: Stratum,
    pub parse_failures: usize,
    pub transport_failures: usize,
    /// Manifest items with no trial.
    pub missing: Vec<String>,
    /// Trials naming pairs that are not in the manifest.
    pub unknown: Vec<String>,
    pub prompt_versions: Vec<String>,
    pub expected_random_accuracy: f64,
    pub strata: BTreeMap<String, BTreeMap<String, Stratum>>,
}

pub fn label_bucket(num_labels: usize) -> &'static str {
    match num_labels {
        0..=4 => "1-4",
        5..=10 => "5-10",
        11..=15 => "11-15",
        16..=20 => "16-20",
        _ => "21-26",
    }
}

fn category_folding(manifest: &BenchmarkManifest, min_items: usize) -> BTreeMap<&str, &str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for i in &manifest.items {
        *counts.entry(i.object_category.as_str()).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(c, n)| (c, if n < min_items { "misc" } else { c }))
        .collect()
}

fn strata_keys<'a>(item: &'a BenchmarkItem, fold: &BTreeMap<&str, &'a str>) -> [(&'static str, String); 7] {
    [
        ("depth", item.depth_bin.as_str().to_string()),
        ("light", item.light_bin.as_str().to_string()),
        ("plausibility", item.plausibility.as_str().to_string()),
        ("num_labels", label_bucket(item.num_labels).to_string()),
        (
            "object_category",
            fold.get(item.object_category.as_str()).copied().unwrap_or("misc").to_string(),
        ),
        ("scene_category", item.scene_category.clone()),
        ("variant", item.variant.to_string()),
    ]
}

/// Scores every trial against the manifest answer. Items may carry several
/// trials (pooled respondents); each counts once.
fn report_over(model: &str, trials: &[Trial], manifest: &BenchmarkManifest, opts: &ScoreOptions) -> Report {
    let mut by_item: BTreeMap<&str, Vec<&Trial>> = BTreeMap::new();
    let mut unknown = BTreeSet::new();
    let mut versions = BTreeSet::new();
    for t in trials {
        versions.insert(t.prompt_version.clone());
        if manifest.item(&t.pair_id).is_some() {
            by_item.entry(t.pair_id.as_str()).or_default().push(t);
        } else {
            unknown.insert(t.pair_id.clone());
        }
    }
    let fold = category_folding(manifest, opts.misc_min_items);
    let mut overall = Stratum::default();
    let mut strata: BTreeMap<String, BTreeMap<String, Stratum>> = BTreeMap::new();
    let (mut parse_failures, mut transport_failures) = (0, 0);
    let mut missing = Vec::new();
    for item in &manifest.items {
        let outcomes: Vec<bool> = match by_item.get(item.pair_id.as_str()) {
            Some(ts) => ts
                .iter()
                .map(|t| {
                    match t.status {
                        TrialStatus::ParseFailure => parse_failures += 1,
                        TrialStatus::TransportFailure => transport_failures += 1,
                        TrialStatus::Ok => {}
                    }
                    t.parsed_letter == Some(item.answer_letter)
                })
                .collect(),
            None => {
                missing.push(item.pair_id.clone());
                if opts.strict {
                    vec![false]
                } else {
                    Vec::new()
                }
            }
        };
        let keys = strata_keys(item, &fold);
        for ok in outcomes {
            overall.add(ok);
            for (factor, value) in &keys {
                strata
                    .entry(factor.to_string())
                    .or_default()
                    .entry(value.clone())
                    .or_default()
                    .add(ok);
            }
        }
    }
    overall.finish();
    for s in strata.values_mut().flat_map(|m| m.values_mut()) {
        s.finish();
    }
    Report {
        model: model.to_string(),
        manifest_items: manifest.items.len(),
        overall,
        parse_failures,
        transport_failures,
        missing,
        unknown: unknown.into_iter().collect(),
        prompt_versions: versions.into_iter().collect(),
        expected_random_accuracy: expected_random_accuracy(&manifest.items),
        strata,
    }
}

/// One model; the latest trial per item counts.
pub fn score_model(trials: &[Trial], manifest: &BenchmarkManifest, model: &str, opts: &ScoreOptions) -> Report {
    let mine: Vec<Trial> = trials.iter().filter(|t| t.model == model).cloned().collect();
    report_over(model, &latest_trials(&mine), manifest, opts)
}

/// One report per model in the log, ordered by model name.
pub fn score(trials: &[Trial], manifest: &BenchmarkManifest, opts: &ScoreOptions) -> Vec<Report> {
    let models: BTreeSet<&str> = trials.iter().map(|t| t.model.as_str()).collect();
    models.into_iter().map(|m| score_model(trials, manifest, m, opts)).collect()
}

/// Every respondent whose model name starts with `prefix` pooled under `name`;
/// each respondent's latest trial per item counts once.
pub fn score_pooled(trials: &[Trial], manifest: &BenchmarkManifest, prefix: &str, name: &str, opts: &ScoreOptions) -> Report {
    let mine: Vec<Trial> = trials.iter().filter(|t| t.model.starts_with(prefix)).cloned().collect();
    report_over(name, &latest_trials(&mine), manifest, opts)
}
