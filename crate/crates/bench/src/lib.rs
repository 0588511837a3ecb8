//! Shared fixtures for the benchmarks.

use forge_core::synth::{synth_corpus, SynthConfig};
use forge_core::triplet_select::sample_passing_across;
use forge_core::{SceneBundle, SelectionConfig, TripletCandidate};

/// One passing candidate and its bundle at the given resolution.
pub fn scene_with_candidate(width: u32, height: u32) -> (SceneBundle, TripletCandidate) {
    let bundles = synth_corpus(
        4,
        &SynthConfig {
            width,
            height,
            seed: 0,
            ..Default::default()
        },
    );
    let sel = SelectionConfig {
        per_scene_cap: Some(1),
        ..Default::default()
    };
    let cand = sample_passing_across(&bundles, &sel, 1)
        .candidates
        .pop()
        .expect("the synthetic corpus has a passing candidate");
    let bundle = bundles.into_iter().find(|b| b.scene_id == cand.scene_id).unwrap();
    (bundle, cand)
}
