//! End-to-end generation: candidate → edited pair → labels → files on disk.
//!
//! A pairs directory looks like
//!
//! ```text
//! <root>/keys.jsonl
//! <root>/<pair_id>/view1.png           unlabeled V1
//! <root>/<pair_id>/view1_labeled.png
//! <root>/<pair_id>/view2.png           edited V2′
//! <root>/<pair_id>/view2_original.png
//! <root>/<pair_id>/meta.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::ImageEncoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark_build::{
    build_manifest, categorize_scenes, object_depth, pair_brightness, plausibility, BenchmarkManifest, BuildError,
    BuildOptions, PairFiles, PairMeta, SceneCategories, SceneSample,
};
use crate::eval_harness::ChatModel;
use crate::compositor::{make_pair, CompositeError, EditRecipe, EditedPair, PasteCount, Variant};
use crate::inpaint::{InpaintBackend, InpaintParams};
use crate::jsonl::{self, JsonlError};
use crate::labeling::{label_view, render_labels, AnswerKey, LabelAssignment, LabelConfig, LabelError, LabelStyle};
use crate::raster::RgbImage;
use crate::scene_bundle::SceneBundle;
use crate::triplet_select::{sample_passing_across, SelectionConfig, TripletCandidate};

pub const KEYS_FILE: &str = "keys.jsonl";
pub const META_FILE: &str = "meta.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Log(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("no bundle for scene {0}")]
    UnknownScene(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub variant: Variant,
    pub expansion: f64,
    pub backend: InpaintBackend,
    pub inpaint: InpaintParams,
    pub labels: LabelConfig,
    pub rng_seed: u64,
    pub treatment: Option<String>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Inconsistent,
            expansion: 0.05,
            backend: InpaintBackend::Native,
            inpaint: InpaintParams::default(),
            labels: LabelConfig::default(),
            rng_seed: 0,
            treatment: None,
        }
    }
}

impl GenerateConfig {
    pub fn recipe(&self, candidate: &TripletCandidate) -> EditRecipe {
        EditRecipe {
            candidate: candidate.clone(),
            variant: self.variant,
            expansion: self.expansion,
            backend: self.backend.clone(),
            rng_seed: self.rng_seed,
            inpaint: self.inpaint.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// Per-pair wall time by stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub select_ms: f64,
    pub inpaint_ms: f64,
    pub paste_ms: f64,
    pub label_ms: f64,
    pub metadata_ms: f64,
    pub encode_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.select_ms + self.inpaint_ms + self.paste_ms + self.label_ms + self.metadata_ms + self.encode_ms
    }

    fn add(&mut self, o: &StageTimings) {
        self.select_ms += o.select_ms;
        self.inpaint_ms += o.inpaint_ms;
        self.paste_ms += o.paste_ms;
        self.label_ms += o.label_ms;
        self.metadata_ms += o.metadata_ms;
        self.encode_ms += o.encode_ms;
    }

    fn scaled(&self, k: f64) -> StageTimings {
        StageTimings {
            select_ms: self.select_ms * k,
            inpaint_ms: self.inpaint_ms * k,
            paste_ms: self.paste_ms * k,
            label_ms: self.label_ms * k,
            metadata_ms: self.metadata_ms * k,
            encode_ms: self.encode_ms * k,
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub struct GeneratedPair {
    pub edited: EditedPair,
    pub view2_original: RgbImage,
    pub assignment: LabelAssignment,
    pub view1_labeled: RgbImage,
    pub key: AnswerKey,
    pub meta: PairMeta,
    pub timings: StageTimings,
}

pub fn pair_files(pair_id: &str) -> PairFiles {
    PairFiles {
        view1_labeled: format!("{pair_id}/view1_labeled.png"),
        view2_edited: format!("{pair_id}/view2.png"),
        view1: format!("{pair_id}/view1.png"),
        view2_original: format!("{pair_id}/view2_original.png"),
    }
}

/// Edits, labels and annotates one candidate. Nothing is written.
pub fn generate_pair(bundle: &SceneBundle, candidate: &TripletCandidate, cfg: &GenerateConfig) -> Result<GeneratedPair, PipelineError> {
    let recipe = cfg.recipe(candidate);
    let t = Instant::now();
    let edited = make_pair(bundle, &recipe)?;
    let edit_time = t.elapsed();

    let frame = |id: &str| {
        bundle.frame(id).ok_or_else(|| CompositeError::UnknownFrame(id.to_string()))
    };
    let (v1, v2, v3) = (frame(&candidate.v1_id)?, frame(&candidate.v2_id)?, frame(&candidate.v3_id)?);

    let t = Instant::now();
    let assignment = label_view(v1, candidate.object_id, &cfg.labels)?;
    let (view1_labeled, _) = render_labels(&v1.rgb, &assignment, &LabelStyle::default());
    let key = AnswerKey::new(&edited.pair_id, &assignment, bundle);
    let label_time = t.elapsed();

    let t = Instant::now();
    let roll = plausibility(&v2.camera, &v3.camera);
    let meta = PairMeta {
        pair_id: edited.pair_id.clone(),
        scene_id: bundle.scene_id.clone(),
        frames: [candidate.v1_id.clone(), candidate.v2_id.clone(), candidate.v3_id.clone()],
        answer_object: candidate.object_id,
        object_category: bundle.category(candidate.object_id).to_string(),
        variant: cfg.variant,
        expansion: cfg.expansion,
        rng_seed: cfg.rng_seed,
        treatment: cfg.treatment.clone(),
        files: pair_files(&edited.pair_id),
        depth_m: object_depth(v1, candidate.object_id).ok(),
        brightness: pair_brightness(&v1.rgb, &edited.view2_edited).ok(),
        roll_deg: Some(roll.roll_deg),
        roll_degenerate: roll.degenerate,
        scene_category: None,
        detail: serde_json::json!({
            "answer_region": edited.answer_region,
            "inpaint_region_bbox": edited.inpaint_region.bbox(),
            "paste_transform": edited.paste_transform,
            "extras": edited.extras,
            "criteria": edited.criteria,
            "recipe": recipe,
            "labels": assignment.entries,
        }),
    };
    let metadata_time = t.elapsed();

    let timings = StageTimings {
        inpaint_ms: ms(edited.inpaint_time),
        paste_ms: ms(edit_time.saturating_sub(edited.inpaint_time)),
        label_ms: ms(label_time),
        metadata_ms: ms(metadata_time),
        ..Default::default()
    };
    Ok(GeneratedPair {
        view2_original: v2.rgb.clone(),
        edited,
        assignment,
        view1_labeled,
        key,
        meta,
        timings,
    })
}

/// PNG with fast deflate; the adaptive filter keeps files reasonably small.
pub fn encode_png_fast(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Fast, FilterType::Adaptive)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .expect("in-memory PNG encoding");
    out
}

/// The four PNGs of a pair, in [`PairFiles`] order.
pub fn encode_pair(gp: &GeneratedPair) -> [Vec<u8>; 4] {
    [
        encode_png_fast(&gp.view1_labeled),
        encode_png_fast(&gp.edited.view2_edited),
        encode_png_fast(&gp.edited.view1),
        encode_png_fast(&gp.view2_original),
    ]
}

/// Writes the pair directory (images and meta.json); the key is returned to
/// the caller, who owns `keys.jsonl`.
pub fn write_pair(root: &Path, gp: &GeneratedPair, pngs: &[Vec<u8>; 4]) -> Result<(), PipelineError> {
    let dir = root.join(&gp.meta.pair_id);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let f = &gp.meta.files;
    for (rel, bytes) in [&f.view1_labeled, &f.view2_edited, &f.view1, &f.view2_original].into_iter().zip(pngs) {
        let p = root.join(rel);
        fs::write(&p, bytes).map_err(io_err(&p))?;
    }
    let p = dir.join(META_FILE);
    fs::write(&p, serde_json::to_vec_pretty(&gp.meta).expect("meta serializes")).map_err(io_err(&p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub scene_id: String,
    pub frames: [String; 3],
    pub object_id: u16,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub workers: usize,
    pub requested: usize,
    pub written: Vec<String>,
    pub failures: Vec<Failure>,
    pub wall_s: f64,
    /// `None` when nothing was produced.
    pub pairs_per_sec: Option<f64>,
    pub stage_totals_ms: StageTimings,
    pub stage_mean_ms: StageTimings,
}

/// Where generated pairs go: a pairs directory, or nowhere (encode only).
#[derive(Debug, Clone)]
pub enum Sink {
    Dir(PathBuf),
    Discard,
}

/// Generates one pair per candidate on `workers` threads. Keys are written
/// once, sorted by pair id, after every worker is done.
pub fn generate_all(
    bundles: &[SceneBundle],
    candidates: &[TripletCandidate],
    cfg: &GenerateConfig,
    sink: &Sink,
    workers: usize,
    select_time: Duration,
) -> Result<RunSummary, PipelineError> {
    let by_scene: BTreeMap<&str, &SceneBundle> = bundles.iter().map(|b| (b.scene_id.as_str(), b)).collect();
    if let Sink::Dir(root) = sink {
        fs::create_dir_all(root).map_err(io_err(root))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let start = Instant::now();
    let results: Vec<Result<(AnswerKey, StageTimings), (usize, String)>> = pool.install(|| {
        candidates
            .par_iter()
            .enumerate()
            .map(|(k, cand)| {
                let bundle = by_scene
                    .get(cand.scene_id.as_str())
                    .ok_or_else(|| (k, PipelineError::UnknownScene(cand.scene_id.clone()).to_string()))?;
                let mut gp = generate_pair(bundle, cand, cfg).map_err(|e| (k, e.to_string()))?;
                let t = Instant::now();
                let pngs = encode_pair(&gp);
                if let Sink::Dir(root) = sink {
                    write_pair(root, &gp, &pngs).map_err(|e| (k, e.to_string()))?;
                }
                gp.timings.encode_ms = ms(t.elapsed());
                Ok((gp.key, gp.timings))
            })
            .collect()
    });
    let wall = start.elapsed() + select_time;

    let mut keys = Vec::new();
    let mut failures = Vec::new();
    let mut totals = StageTimings::default();
    for r in results {
        match r {
            Ok((key, t)) => {
                totals.add(&t);
                keys.push(key);
            }
            Err((k, reason)) => {
                let c = &candidates[k];
                failures.push(Failure {
                    scene_id: c.scene_id.clone(),
                    frames: [c.v1_id.clone(), c.v2_id.clone(), c.v3_id.clone()],
                    object_id: c.object_id,
                    reason,
                });
            }
        }
    }
    keys.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    keys.dedup_by(|a, b| a.pair_id == b.pair_id);
    if let Sink::Dir(root) = sink {
        jsonl::write_all(&root.join(KEYS_FILE), &keys)?;
    }
    let n = keys.len();
    totals.select_ms = ms(select_time);
    Ok(RunSummary {
        workers: workers.max(1),
        requested: candidates.len(),
        written: keys.into_iter().map(|k| k.pair_id).collect(),
        failures,
        wall_s: wall.as_secs_f64(),
        pairs_per_sec: (n > 0).then(|| n as f64 / wall.as_secs_f64()),
        stage_mean_ms: if n > 0 { totals.scaled(1.0 / n as f64) } else { StageTimings::default() },
        stage_totals_ms: totals,
    })
}

/// Selects `n` passing candidates across `bundles` and generates them.
pub fn run(
    bundles: &[SceneBundle],
    selection: &SelectionConfig,
    cfg: &GenerateConfig,
    n: usize,
    sink: &Sink,
    workers: usize,
) -> Result<RunSummary, PipelineError> {
    let t = Instant::now();
    let sample = sample_passing_across(bundles, selection, n);
    let select_time = t.elapsed();
    generate_all(bundles, &sample.candidates, cfg, sink, workers, select_time)
}

/// Reads every `<pair_id>/meta.json` under `root` plus the keys file.
pub fn read_pairs_dir(root: &Path, keys_path: Option<&Path>) -> Result<(Vec<PairMeta>, BTreeMap<String, AnswerKey>), PipelineError> {
    let mut metas = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META_FILE).is_file())
        .collect();
    entries.sort();
    for dir in entries {
        let p = dir.join(META_FILE);
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        metas.push(serde_json::from_slice::<PairMeta>(&bytes).map_err(|e| PipelineError::Format {
            path: p.display().to_string(),
            reason: e.to_string(),
        })?);
    }
    let default_keys = root.join(KEYS_FILE);
    let keys: Vec<AnswerKey> = jsonl::read_all(keys_path.unwrap_or(&default_keys))?;
    Ok((metas, keys.into_iter().map(|k| (k.pair_id.clone(), k)).collect()))
}

/// `scene_ids` are in the same order as the samples `cats` was built from.
pub fn apply_scene_categories(metas: &mut [PairMeta], scene_ids: &[String], cats: &SceneCategories) {
    let by_scene: BTreeMap<&str, &str> = scene_ids
        .iter()
        .map(String::as_str)
        .zip(cats.categories.iter().map(String::as_str))
        .collect();
    for m in metas {
        m.scene_category = by_scene.get(m.scene_id.as_str()).map(|c| c.to_string());
    }
}

/// One sample per scene for categorization: the unedited views of the
/// scene's first pair.
pub fn scene_samples(root: &Path, metas: &[PairMeta]) -> Result<Vec<SceneSample>, PipelineError> {
    let mut first: BTreeMap<&str, &PairMeta> = BTreeMap::new();
    for m in metas {
        first.entry(m.scene_id.as_str()).or_insert(m);
    }
    first
        .into_iter()
        .map(|(scene, m)| {
            let mut images = Vec::new();
            for rel in [&m.files.view1, &m.files.view2_original] {
                let p = root.join(rel);
                images.push(fs::read(&p).map_err(io_err(&p))?);
            }
            Ok(SceneSample {
                scene_id: scene.to_string(),
                images,
            })
        })
        .collect()
}

/// Manifest for a pairs directory; with a `labeler`, scenes are categorized
/// first.
pub fn build_manifest_dir(
    root: &Path,
    keys_path: Option<&Path>,
    opts: &BuildOptions,
    labeler: Option<&dyn ChatModel>,
) -> Result<BenchmarkManifest, PipelineError> {
    let (mut metas, keys) = read_pairs_dir(root, keys_path)?;
    let mut categories = None;
    if let Some(model) = labeler {
        let samples = scene_samples(root, &metas)?;
        let cats = categorize_scenes(&samples, model);
        let ids: Vec<String> = samples.into_iter().map(|s| s.scene_id).collect();
        apply_scene_categories(&mut metas, &ids, &cats);
        categories = Some(cats);
    }
    let mut manifest = build_manifest(&metas, &keys, opts)?;
    manifest.header.scene_categories = categories.map(|c| c.provenance);
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub width: u32,
    pub height: u32,
    pub available_cores: usize,
    pub runs: Vec<RunSummary>,
    /// Last run's pairs/sec over the first run's.
    pub scaling: Option<f64>,
}

/// Generates the same candidates once per worker count, discarding output
/// after PNG encoding.
pub fn measure_throughput(
    bundles: &[SceneBundle],
    candidates: &[TripletCandidate],
    cfg: &GenerateConfig,
    worker_counts: &[usize],
) -> Result<ThroughputReport, PipelineError> {
    let mut runs = Vec::new();
    for &w in worker_counts {
        runs.push(generate_all(bundles, candidates, cfg, &Sink::Discard, w, Duration::ZERO)?);
    }
    let rate = |r: Option<&RunSummary>| r.and_then(|r| r.pairs_per_sec);
    let (w, h) = bundles
        .first()
        .and_then(|b| b.frames.first())
        .map(|f| (f.rgb.width(), f.rgb.height()))
        .unwrap_or((0, 0));
    Ok(ThroughputReport {
        width: w,
        height: h,
        available_cores: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        scaling: rate(runs.first()).zip(rate(runs.last())).map(|(a, b)| b / a),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Treatment {
    pub name: String,
    pub variant: Variant,
    pub expansion: f64,
}

pub const EXPANSION_SWEEP_PCT: [u32; 7] = [0, 5, 10, 25, 50, 75, 100];
pub const SELF_PASTE_COUNTS: [PasteCount; 5] = [
    PasteCount::N(1),
    PasteCount::N(3),
    PasteCount::N(5),
    PasteCount::N(10),
    PasteCount::All,
];

pub fn expansion_treatments() -> Vec<Treatment> {
    EXPANSION_SWEEP_PCT
        .iter()
        .map(|&pct| Treatment {
            name: format!("expansion_{pct:03}"),
            variant: Variant::ExpansionSweep,
            expansion: pct as f64 / 100.0,
        })
        .collect()
}

pub fn self_paste_treatments(expansion: f64) -> Vec<Treatment> {
    SELF_PASTE_COUNTS
        .iter()
        .map(|&count| Treatment {
            name: match count {
                PasteCount::N(k) => format!("multi_self_paste_{k}"),
                PasteCount::All => "multi_self_paste_all".to_string(),
            },
            variant: Variant::MultiSelfPaste(count),
            expansion,
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TreatmentOutcome {
    pub treatment: Treatment,
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub manifest_items: usize,
}

/// Generates one pairs directory and manifest per treatment under `root`,
/// all from the same candidates.
pub fn run_treatments(
    bundles: &[SceneBundle],
    candidates: &[TripletCandidate],
    base: &GenerateConfig,
    treatments: &[Treatment],
    root: &Path,
    workers: usize,
) -> Result<Vec<TreatmentOutcome>, PipelineError> {
    let mut out = Vec::new();
    for t in treatments {
        let cfg = GenerateConfig {
            variant: t.variant,
            expansion: t.expansion,
            treatment: Some(t.name.clone()),
            ..base.clone()
        };
        let dir = root.join(&t.name);
        let summary = generate_all(bundles, candidates, &cfg, &Sink::Dir(dir.clone()), workers, Duration::ZERO)?;
        let opts = BuildOptions {
            allow_partial: true,
            config: serde_json::to_value(&cfg).expect("config serializes"),
        };
        let manifest = build_manifest_dir(&dir, None, &opts, None)?;
        manifest.save(&dir.join(MANIFEST_FILE)).map_err(io_err(&dir))?;
        out.push(TreatmentOutcome {
            treatment: t.clone(),
            dir,
            manifest_items: manifest.items.len(),
            summary,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval_harness::{ChatReply, ChatRequest, ScriptedChat};
    use crate::synth::{synth_corpus, SynthConfig};

    fn small() -> (Vec<SceneBundle>, SelectionConfig) {
        let cfg = SynthConfig {
            width: 256,
            height: 192,
            seed: 5,
            ..Default::default()
        };
        (
            synth_corpus(2, &cfg),
            SelectionConfig {
                per_scene_cap: Some(2),
                ..Default::default()
            },
        )
    }

    #[test]
    fn run_writes_pairs_and_keys() {
        let (bundles, sel) = small();
        let dir = tempfile::tempdir().unwrap();
        let summary = run(&bundles, &sel, &GenerateConfig::default(), 3, &Sink::Dir(dir.path().into()), 2).unwrap();
        assert!(!summary.written.is_empty(), "{:?}", summary.failures);
        let (metas, keys) = read_pairs_dir(dir.path(), None).unwrap();
        assert_eq!(metas.len(), summary.written.len());
        assert_eq!(keys.len(), metas.len());
        for m in &metas {
            for rel in [&m.files.view1, &m.files.view1_labeled, &m.files.view2_edited, &m.files.view2_original] {
                let img = image::open(dir.path().join(rel)).unwrap();
                assert_eq!((img.width(), img.height()), (256, 192));
            }
            assert!(m.depth_m.is_some() && m.brightness.is_some() && m.roll_deg.is_some());
        }
        assert!(summary.pairs_per_sec.unwrap() > 0.0);
        let manifest = build_manifest_dir(dir.path(), None, &BuildOptions::default(), None).unwrap();
        assert_eq!(manifest.items.len(), metas.len());
        assert!(manifest.items.iter().all(|i| i.scene_category == crate::benchmark_build::UNCATEGORIZED));

        let labeler = ScriptedChat::new("cap", |req: &ChatRequest| {
            let text = if req.images.is_empty() {
                (1..=10).map(|k| format!("{k}. Living Room")).collect::<Vec<_>>().join("\n")
            } else {
                "a room".to_string()
            };
            Ok(ChatReply { text, first_token_logprobs: None })
        });
        let manifest = build_manifest_dir(dir.path(), None, &BuildOptions::default(), Some(&labeler)).unwrap();
        assert!(manifest.items.iter().all(|i| i.scene_category == "living_room"));
        assert_eq!(manifest.header.scene_categories.as_ref().unwrap().model, "cap");
    }

    #[test]
    fn generation_is_deterministic() {
        let (bundles, sel) = small();
        let cands = sample_passing_across(&bundles, &sel, 1).candidates;
        let bundle = bundles.iter().find(|b| b.scene_id == cands[0].scene_id).unwrap();
        let a = generate_pair(bundle, &cands[0], &GenerateConfig::default()).unwrap();
        let b = generate_pair(bundle, &cands[0], &GenerateConfig::default()).unwrap();
        assert_eq!(encode_pair(&a), encode_pair(&b));
        assert_eq!(a.meta, b.meta);
    }

    #[test]
    fn treatment_matrices() {
        let names: Vec<String> = expansion_treatments().into_iter().map(|t| t.name).collect();
        assert_eq!(names[0], "expansion_000");
        assert_eq!(names[6], "expansion_100");
        let sp = self_paste_treatments(0.05);
        assert_eq!(sp.len(), 5);
        assert_eq!(sp[4].variant.to_string(), "multi_self_paste:all");
    }
}
