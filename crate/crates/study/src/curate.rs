//! Curated subset from vetting decisions.
//!
//! The latest decision per pair wins. Accepted pairs are capped per scene,
//! keeping the pairs that collected the most decisions (then lowest pair id).
//! The output depends only on the decision log, the manifest and the cap.

use std::collections::BTreeMap;

use forge_core::BenchmarkManifest;
use serde::{Deserialize, Serialize};

use crate::store::{Decision, RejectReason, VetDecision};

pub const DEFAULT_PER_SCENE_CAP: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Exported,
    Rejected,
    SceneCap,
}

/// One row per vetted pair, describing its latest decision and fate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRow {
    pub pair_id: String,
    pub scene_id: String,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
    pub session_id: String,
    pub ts: u64,
    /// Decisions recorded for this pair across all sessions.
    pub decisions: usize,
    pub outcome: Outcome,
}

#[derive(Debug, Clone)]
pub struct Curated {
    pub manifest: BenchmarkManifest,
    pub sidecar: Vec<SidecarRow>,
}

/// `vets` must be in log order. Decisions naming pairs outside the manifest
/// are ignored.
pub fn export_curated(manifest: &BenchmarkManifest, vets: &[VetDecision], per_scene_cap: usize) -> Curated {
    let mut latest: BTreeMap<&str, (&VetDecision, usize)> = BTreeMap::new();
    for v in vets.iter().filter(|v| manifest.item(&v.pair_id).is_some()) {
        let e = latest.entry(v.pair_id.as_str()).or_insert((v, 0));
        e.0 = v;
        e.1 += 1;
    }

    let mut by_scene: BTreeMap<&str, Vec<(&str, usize)>> = BTreeMap::new();
    for (&id, &(v, n)) in &latest {
        if v.decision == Decision::Accept {
            let scene = manifest.item(id).expect("filtered above").scene_id.as_str();
            by_scene.entry(scene).or_default().push((id, n));
        }
    }
    let mut kept: Vec<&str> = Vec::new();
    for pairs in by_scene.values_mut() {
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        kept.extend(pairs.iter().take(per_scene_cap).map(|p| p.0));
    }
    kept.sort_unstable();

    let sidecar = latest
        .iter()
        .map(|(&id, &(v, n))| SidecarRow {
            pair_id: id.to_string(),
            scene_id: manifest.item(id).expect("filtered above").scene_id.clone(),
            decision: v.decision,
            reason: v.reason,
            note: v.note.clone(),
            session_id: v.session_id.clone(),
            ts: v.ts,
            decisions: n,
            outcome: match v.decision {
                Decision::Reject => Outcome::Rejected,
                Decision::Accept if kept.binary_search(&id).is_ok() => Outcome::Exported,
                Decision::Accept => Outcome::SceneCap,
            },
        })
        .collect();

    let items: Vec<_> = manifest
        .items
        .iter()
        .filter(|i| kept.binary_search(&i.pair_id.as_str()).is_ok())
        .cloned()
        .collect();
    let mut header = manifest.header.clone();
    header.item_count = items.len();
    Curated {
        manifest: BenchmarkManifest { header, items },
        sidecar,
    }
}
