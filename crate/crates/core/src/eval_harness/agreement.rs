//! Error overlap between respondents.

use std::collections::{BTreeMap, BTreeSet};

use super::{latest_trials, Trial};
use crate::benchmark_build::BenchmarkManifest;

/// One respondent's answers and wrong set over a manifest. Items without a
/// trial are in neither.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Answers {
    pub letters: BTreeMap<String, Option<char>>,
    pub wrong: BTreeSet<String>,
}

impl Answers {
    pub fn from_trials(trials: &[Trial], manifest: &BenchmarkManifest, model: &str) -> Self {
        let mut out = Self::default();
        for t in latest_trials(trials).into_iter().filter(|t| t.model == model) {
            let Some(item) = manifest.item(&t.pair_id) else { continue };
            if t.parsed_letter != Some(item.answer_letter) {
                out.wrong.insert(t.pair_id.clone());
            }
            out.letters.insert(t.pair_id, t.parsed_letter);
        }
        out
    }
}

/// |Wa ∩ Wb| / |Wa ∪ Wb|; two empty sets are identical and give 1.
pub fn wrong_set_iou(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Among items both got wrong, the fraction with the same parsed letter.
/// Failures to answer never match anything. `None` when nothing is shared.
pub fn same_wrong_fraction(a: &Answers, b: &Answers) -> Option<f64> {
    let common: Vec<&String> = a.wrong.intersection(&b.wrong).collect();
    if common.is_empty() {
        return None;
    }
    let same = common
        .iter()
        .filter(|id| {
            let (la, lb) = (a.letters.get(**id).copied().flatten(), b.letters.get(**id).copied().flatten());
            la.is_some() && la == lb
        })
        .count();
    Some(same as f64 / common.len() as f64)
}

/// Fraction of wrong human answers whose item the model also got wrong. Each
/// human answer counts, so items seen by several annotators weigh more; with
/// one annotator per item this is |Wh ∩ Wm| / |Wh|.
pub fn human_also_wrong_fraction(human_trials: &[Trial], manifest: &BenchmarkManifest, model_wrong: &BTreeSet<String>) -> Option<f64> {
    let mut wrong = 0usize;
    let mut shared = 0usize;
    for t in latest_trials(human_trials) {
        let Some(item) = manifest.item(&t.pair_id) else { continue };
        if t.parsed_letter != Some(item.answer_letter) {
            wrong += 1;
            shared += model_wrong.contains(&t.pair_id) as usize;
        }
    }
    (wrong > 0).then(|| shared as f64 / wrong as f64)
}
