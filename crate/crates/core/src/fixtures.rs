//! Small hand-built manifests for tests and demos.

use crate::benchmark_build::{
    tertile_bins, BenchmarkItem, BenchmarkManifest, BinEdges, DepthBin, LightBin, ManifestHeader, Plausibility,
};
use crate::compositor::Variant;

/// Manifest with one item per `(answer_letter, num_labels)`, ids `p00000…`.
pub fn manifest_of(spec: &[(char, usize)]) -> BenchmarkManifest {
    let depths: Vec<f64> = (0..spec.len()).map(|i| 1.0 + ((i * 7) % 11) as f64 * 0.5).collect();
    let lights: Vec<f64> = (0..spec.len()).map(|i| 20.0 + ((i * 5) % 13) as f64 * 15.0).collect();
    let (dt, lt) = (tertile_bins(&depths), tertile_bins(&lights));
    let items = spec
        .iter()
        .enumerate()
        .map(|(i, &(answer, n))| {
            let id = format!("p{i:05}");
            BenchmarkItem {
                pair_id: id.clone(),
                scene_id: format!("scene{}", i % 3),
                view1: format!("{id}/view1_labeled.png"),
                view2: format!("{id}/view2.png"),
                view1_unlabeled: format!("{id}/view1.png"),
                view2_original: format!("{id}/view2_original.png"),
                answer_letter: answer,
                num_labels: n,
                answer_object: 1,
                depth_m: depths[i],
                depth_bin: [DepthBin::Close, DepthBin::Medium, DepthBin::Far][dt.bins[i] as usize],
                brightness: lights[i],
                light_bin: [LightBin::Dark, LightBin::Medium, LightBin::Bright][lt.bins[i] as usize],
                plausibility: if i % 4 == 0 { Plausibility::Implausible } else { Plausibility::Plausible },
                roll_deg: if i % 4 == 0 { 12.0 } else { 1.0 },
                object_category: if i % 2 == 0 { "chair" } else { "lamp" }.to_string(),
                scene_category: "kitchen".to_string(),
                variant: Variant::Inconsistent,
                expansion: 0.05,
                treatment: None,
            }
        })
        .collect::<Vec<_>>();
    BenchmarkManifest {
        header: ManifestHeader {
            format_version: 1,
            item_count: items.len(),
            bin_edges: BinEdges {
                depth: dt.edges,
                light: lt.edges,
            },
            config: serde_json::Value::Null,
            skipped: Vec::new(),
            scene_categories: None,
        },
        items,
    }
}

/// `n` items with 3 to 12 labels each and answers spread over the letters.
pub fn manifest_n(n: usize) -> BenchmarkManifest {
    let spec: Vec<(char, usize)> = (0..n)
        .map(|i| {
            let labels = 3 + i % 10;
            ((b'A' + ((i * 7) % labels) as u8) as char, labels)
        })
        .collect();
    manifest_of(&spec)
}
