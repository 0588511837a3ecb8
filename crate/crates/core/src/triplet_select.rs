//! Enumeration and filtering of (V1, V2, V3, O) candidates.
//!
//! A candidate passes when O is visible in all three frames, the visible
//! object sets of (V1, V2) and (V2, V3) overlap by at most `overlap_max`, O
//! covers `area_min..=area_max` of V2, and O's V3 pixels reprojected into V2
//! cover at least `proj_area_min` of O's V2 area.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{projected_area_fraction, set_iou};
use crate::scene_bundle::{instance_stats, InstanceId, InstanceStats, SceneBundle, ViewFrame};

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("unknown frame id {0}")]
    UnknownFrame(String),
    #[error("object {0} does not appear in any of the candidate frames")]
    UnknownObject(InstanceId),
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub overlap_max: f64,
    pub area_min: f64,
    pub area_max: f64,
    pub proj_area_min: f64,
    pub visibility_floor_px: u64,
    pub rng_seed: u64,
    /// Frame triples considered per scene after the seeded shuffle.
    pub max_triples: usize,
    /// Passing candidates kept per scene by [`sample_passing`]; `None` = unlimited.
    pub per_scene_cap: Option<usize>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            overlap_max: 0.75,
            area_min: 0.05,
            area_max: 0.10,
            proj_area_min: 0.40,
            visibility_floor_px: 100,
            rng_seed: 0,
            max_triples: 512,
            per_scene_cap: Some(2),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectError> {
        let bad = |m: &str| Err(SelectError::InvalidConfig(m.to_string()));
        if !(0.0 < self.area_min && self.area_min < self.area_max && self.area_max < 1.0) {
            return bad("require 0 < area_min < area_max < 1");
        }
        if !(0.0..=1.0).contains(&self.overlap_max) {
            return bad("require 0 <= overlap_max <= 1");
        }
        if self.proj_area_min.is_nan() || self.proj_area_min <= 0.0 {
            return bad("require proj_area_min > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    Visibility,
    OverlapV1V2,
    OverlapV2V3,
    AreaMin,
    AreaMax,
    ProjectedArea,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reasons", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail(Vec<FailReason>),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

/// Values measured while checking a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaValues {
    /// O's pixel count in V1, V2, V3.
    pub object_px: [u64; 3],
    pub overlap_v1_v2: f64,
    pub overlap_v2_v3: f64,
    pub area_fraction_v2: f64,
    /// `None` when O is absent from V2.
    pub projected_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletCandidate {
    pub scene_id: String,
    pub v1_id: String,
    pub v2_id: String,
    pub v3_id: String,
    pub object_id: InstanceId,
    pub verdict: Verdict,
    pub criteria: Option<CriteriaValues>,
}

impl TripletCandidate {
    pub fn unchecked(scene_id: &str, frames: [&str; 3], object_id: InstanceId) -> Self {
        Self {
            scene_id: scene_id.to_string(),
            v1_id: frames[0].to_string(),
            v2_id: frames[1].to_string(),
            v3_id: frames[2].to_string(),
            object_id,
            verdict: Verdict::Fail(Vec::new()),
            criteria: None,
        }
    }
}

/// Per-frame instance statistics, computed once per bundle.
pub struct CandidateChecker<'a> {
    bundle: &'a SceneBundle,
    stats: BTreeMap<&'a str, BTreeMap<InstanceId, InstanceStats>>,
}

impl<'a> CandidateChecker<'a> {
    pub fn new(bundle: &'a SceneBundle) -> Self {
        let stats = bundle
            .frames
            .par_iter()
            .map(|f| (f.frame_id.as_str(), instance_stats(f)))
            .collect();
        Self { bundle, stats }
    }

    fn frame(&self, id: &str) -> Result<&'a ViewFrame, SelectError> {
        self.bundle
            .frame(id)
            .ok_or_else(|| SelectError::UnknownFrame(id.to_string()))
    }

    fn area(&self, frame: &str, id: InstanceId) -> u64 {
        self.stats[frame].get(&id).map_or(0, |s| s.area_px)
    }

    fn visible(&self, frame: &str, floor: u64) -> BTreeSet<InstanceId> {
        self.stats[frame]
            .iter()
            .filter(|(_, s)| s.area_px >= floor)
            .map(|(&id, _)| id)
            .collect()
    }

    /// Objects with at least one pixel in each of the three frames.
    pub fn shared_objects(&self, frames: [&str; 3]) -> Vec<InstanceId> {
        let [a, b, c] = frames.map(|f| &self.stats[f]);
        a.keys()
            .filter(|id| b.contains_key(id) && c.contains_key(id))
            .copied()
            .collect()
    }

    /// Evaluates every criterion; fail verdicts list all violations.
    pub fn check(
        &self,
        cand: &TripletCandidate,
        cfg: &SelectionConfig,
    ) -> Result<(Verdict, CriteriaValues), SelectError> {
        let v1 = self.frame(&cand.v1_id)?;
        let v2 = self.frame(&cand.v2_id)?;
        let v3 = self.frame(&cand.v3_id)?;
        let o = cand.object_id;
        let object_px = [v1, v2, v3].map(|f| self.area(&f.frame_id, o));
        if object_px.iter().all(|&a| a == 0) && !self.bundle.instance_table.contains_key(&o) {
            return Err(SelectError::UnknownObject(o));
        }
        let floor = cfg.visibility_floor_px;
        let vis2 = self.visible(&v2.frame_id, floor);
        let overlap_v1_v2 = set_iou(&self.visible(&v1.frame_id, floor), &vis2);
        let overlap_v2_v3 = set_iou(&vis2, &self.visible(&v3.frame_id, floor));
        let area_fraction_v2 = object_px[1] as f64 / v2.pixel_count() as f64;
        let projected_fraction = projected_area_fraction(o, v3, v2).ok();

        let mut reasons = Vec::new();
        if object_px.iter().any(|&a| a < floor.max(1)) {
            reasons.push(FailReason::Visibility);
        }
        if overlap_v1_v2 > cfg.overlap_max {
            reasons.push(FailReason::OverlapV1V2);
        }
        if overlap_v2_v3 > cfg.overlap_max {
            reasons.push(FailReason::OverlapV2V3);
        }
        if area_fraction_v2 < cfg.area_min {
            reasons.push(FailReason::AreaMin);
        }
        if area_fraction_v2 > cfg.area_max {
            reasons.push(FailReason::AreaMax);
        }
        if projected_fraction.is_none_or(|p| p < cfg.proj_area_min) {
            reasons.push(FailReason::ProjectedArea);
        }
        let verdict = if reasons.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Fail(reasons)
        };
        Ok((
            verdict,
            CriteriaValues {
                object_px,
                overlap_v1_v2,
                overlap_v2_v3,
                area_fraction_v2,
                projected_fraction,
            },
        ))
    }

    /// Ordered (frame triple, object) plan: ordered triples sorted by frame id,
    /// shuffled with the seed, capped, then objects ascending within a triple.
    pub fn plan(&self, cfg: &SelectionConfig) -> Vec<([&'a str; 3], InstanceId)> {
        let mut ids: Vec<&'a str> = self.bundle.frames.iter().map(|f| f.frame_id.as_str()).collect();
        ids.sort_unstable();
        let mut triples = Vec::new();
        for &a in &ids {
            for &b in &ids {
                for &c in &ids {
                    if a != b && b != c && a != c {
                        triples.push([a, b, c]);
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        triples.shuffle(&mut rng);
        triples.truncate(cfg.max_triples);
        triples
            .into_iter()
            .flat_map(|t| self.shared_objects(t).into_iter().map(move |o| (t, o)))
            .collect()
    }

    fn evaluate(&self, frames: [&str; 3], object: InstanceId, cfg: &SelectionConfig) -> TripletCandidate {
        let mut cand = TripletCandidate::unchecked(&self.bundle.scene_id, frames, object);
        let (verdict, values) = self.check(&cand, cfg).expect("planned ids exist");
        cand.verdict = verdict;
        cand.criteria = Some(values);
        cand
    }
}

pub fn check_candidate(
    bundle: &SceneBundle,
    cand: &TripletCandidate,
    cfg: &SelectionConfig,
) -> Result<Verdict, SelectError> {
    CandidateChecker::new(bundle).check(cand, cfg).map(|(v, _)| v)
}

/// Every planned candidate with its verdict, in deterministic plan order.
/// Checks fan out over the rayon pool; collection preserves order.
pub fn enumerate_candidates(bundle: &SceneBundle, cfg: &SelectionConfig) -> Vec<TripletCandidate> {
    let checker = CandidateChecker::new(bundle);
    checker
        .plan(cfg)
        .into_par_iter()
        .map(|(frames, o)| checker.evaluate(frames, o, cfg))
        .collect()
}

/// Lazily checked candidates in plan order.
pub fn candidate_stream<'a>(
    checker: &'a CandidateChecker<'a>,
    cfg: &'a SelectionConfig,
) -> impl Iterator<Item = TripletCandidate> + 'a {
    checker
        .plan(cfg)
        .into_iter()
        .map(move |(frames, o)| checker.evaluate(frames, o, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub candidates: Vec<TripletCandidate>,
    /// Fewer than the requested number were available.
    pub exhausted: bool,
}

/// The first `n` passing candidates of `bundle`, honoring `cfg.per_scene_cap`.
pub fn sample_passing(bundle: &SceneBundle, cfg: &SelectionConfig, n: usize) -> Sample {
    sample_passing_across(std::slice::from_ref(bundle), cfg, n)
}

/// Scenes are visited in order; each contributes at most `per_scene_cap`.
pub fn sample_passing_across(bundles: &[SceneBundle], cfg: &SelectionConfig, n: usize) -> Sample {
    let cap = cfg.per_scene_cap.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    for bundle in bundles {
        if out.len() >= n {
            break;
        }
        let checker = CandidateChecker::new(bundle);
        let want = cap.min(n - out.len());
        out.extend(
            candidate_stream(&checker, cfg)
                .filter(|c| c.verdict.passed())
                .take(want),
        );
    }
    Sample {
        exhausted: out.len() < n,
        candidates: out,
    }
}
