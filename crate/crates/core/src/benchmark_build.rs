//! Analysis metadata and the benchmark manifest.
//!
//! The manifest is JSONL: one header record followed by one record per item,
//! ordered by `pair_id`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compositor::Variant;
use crate::eval_harness::client::{ChatModel, ChatRequest};
use crate::geometry::camera_roll;
use crate::labeling::AnswerKey;
use crate::raster::{luma, RgbImage};
use crate::scene_bundle::{CameraModel, InstanceId, ViewFrame};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const PLAUSIBLE_ROLL_DEG: f64 = 5.0;
pub const UNCATEGORIZED: &str = "uncategorized";

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("object {object_id} has no valid depth in frame {frame}")]
    NoValidDepth { frame: String, object_id: InstanceId },
    #[error("images differ in size: {0:?} vs {1:?}")]
    SizeMismatch((u32, u32), (u32, u32)),
    #[error("{} item(s) missing metadata: {}", .0.len(), describe_missing(.0))]
    MissingMetadata(Vec<(String, Vec<&'static str>)>),
    #[error("no answer key for pair {0}")]
    MissingKey(String),
    #[error("manifest has no header record")]
    NoHeader,
    #[error("manifest line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

fn describe_missing(list: &[(String, Vec<&'static str>)]) -> String {
    list.iter()
        .map(|(id, fields)| format!("{id} ({})", fields.join(", ")))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Median of the valid depths under the object's mask; the mean of the two
/// middle values when the count is even.
pub fn object_depth(v1: &ViewFrame, object_id: InstanceId) -> Result<f64, BuildError> {
    let mut depths: Vec<f64> = v1
        .instances
        .as_raw()
        .iter()
        .zip(v1.depth.as_slice())
        .filter(|(&id, &z)| id == object_id && z > 0.0 && z.is_finite())
        .map(|(_, &z)| z as f64)
        .collect();
    if depths.is_empty() {
        return Err(BuildError::NoValidDepth {
            frame: v1.frame_id.clone(),
            object_id,
        });
    }
    depths.sort_by(f64::total_cmp);
    let n = depths.len();
    Ok(if n % 2 == 1 {
        depths[n / 2]
    } else {
        (depths[n / 2 - 1] + depths[n / 2]) / 2.0
    })
}

/// Mean Rec. 709 luma over both images.
pub fn pair_brightness(v1: &RgbImage, v2: &RgbImage) -> Result<f64, BuildError> {
    if v1.dimensions() != v2.dimensions() {
        return Err(BuildError::SizeMismatch(v1.dimensions(), v2.dimensions()));
    }
    let total: f64 = v1.pixels().chain(v2.pixels()).map(|p| luma(p.0)).sum();
    let n = 2 * v1.width() as u64 * v1.height() as u64;
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tertiles {
    pub edges: (f64, f64),
    pub bins: Vec<u8>,
}

impl Tertiles {
    pub fn populations(&self) -> [usize; 3] {
        let mut p = [0; 3];
        for &b in &self.bins {
            p[b as usize] += 1;
        }
        p
    }
}

/// Equal-population split. Ties go by original index, so the split is exact
/// even for constant input. An empty bin reuses the previous edge.
pub fn tertile_bins(values: &[f64]) -> Tertiles {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let n0 = n.div_ceil(3);
    let n1 = (n - n0).div_ceil(2);
    let mut bins = vec![0u8; n];
    for (rank, &i) in order.iter().enumerate() {
        bins[i] = if rank < n0 {
            0
        } else if rank < n0 + n1 {
            1
        } else {
            2
        };
    }
    let e1 = if n0 > 0 { values[order[n0 - 1]] } else { f64::NAN };
    let e2 = if n1 > 0 { values[order[n0 + n1 - 1]] } else { e1 };
    Tertiles { edges: (e1, e2), bins }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthBin {
    Close,
    Medium,
    Far,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightBin {
    Dark,
    Medium,
    Bright,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plausibility {
    Plausible,
    Implausible,
}

impl DepthBin {
    fn from_index(i: u8) -> Self {
        [Self::Close, Self::Medium, Self::Far][i as usize]
    }
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Close => "close",
            Self::Medium => "medium",
            Self::Far => "far",
        }
    }
}

impl LightBin {
    fn from_index(i: u8) -> Self {
        [Self::Dark, Self::Medium, Self::Bright][i as usize]
    }
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dark => "dark",
            Self::Medium => "medium",
            Self::Bright => "bright",
        }
    }
}

impl Plausibility {
    pub fn from_roll(roll_deg: f64) -> Self {
        if roll_deg.abs() < PLAUSIBLE_ROLL_DEG {
            Self::Plausible
        } else {
            Self::Implausible
        }
    }
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Plausible => "plausible",
            Self::Implausible => "implausible",
        }
    }
}

impl fmt::Display for Plausibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityResult {
    pub roll_deg: f64,
    pub label: Plausibility,
    /// Gimbal lock at ±90° pitch; roll is 0 by convention and the label plausible.
    pub degenerate: bool,
}

pub fn plausibility(v2_cam: &CameraModel, v3_cam: &CameraModel) -> PlausibilityResult {
    let r = camera_roll(v2_cam, v3_cam);
    PlausibilityResult {
        roll_deg: r.roll_deg,
        label: if r.degenerate {
            Plausibility::Plausible
        } else {
            Plausibility::from_roll(r.roll_deg)
        },
        degenerate: r.degenerate,
    }
}

/// Expected accuracy of a uniform guesser: mean of 1/num_labels.
pub fn expected_random_accuracy(items: &[BenchmarkItem]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items.iter().map(|i| 1.0 / i.num_labels.max(1) as f64).sum::<f64>() / items.len() as f64
}

/// Per-pair metadata written next to the images at generation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub pair_id: String,
    pub scene_id: String,
    pub frames: [String; 3],
    pub answer_object: InstanceId,
    pub object_category: String,
    pub variant: Variant,
    pub expansion: f64,
    pub rng_seed: u64,
    /// Treatment directory name for sweep runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<String>,
    pub files: PairFiles,
    pub depth_m: Option<f64>,
    pub brightness: Option<f64>,
    pub roll_deg: Option<f64>,
    #[serde(default)]
    pub roll_degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_category: Option<String>,
    /// Everything else the generator recorded (regions, transforms, timings).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub detail: serde_json::Value,
}

/// Image paths relative to the pairs root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFiles {
    pub view1_labeled: String,
    pub view2_edited: String,
    pub view1: String,
    pub view2_original: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub pair_id: String,
    pub scene_id: String,
    pub view1: String,
    pub view2: String,
    pub view1_unlabeled: String,
    pub view2_original: String,
    pub answer_letter: char,
    pub num_labels: usize,
    pub answer_object: InstanceId,
    pub depth_m: f64,
    pub depth_bin: DepthBin,
    pub brightness: f64,
    pub light_bin: LightBin,
    pub plausibility: Plausibility,
    pub roll_deg: f64,
    pub object_category: String,
    pub scene_category: String,
    pub variant: Variant,
    pub expansion: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<String>,
}

impl BenchmarkItem {
    /// Letters shown on the labeled view, `A..` in order.
    pub fn valid_letters(&self) -> Vec<char> {
        (0..self.num_labels.min(26) as u8).map(|i| (b'A' + i) as char).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    pub depth: (f64, f64),
    pub light: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrompts {
    pub model: String,
    pub caption_prompt_sha256: String,
    pub batch_prompt_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format_version: u32,
    pub item_count: usize,
    pub bin_edges: BinEdges,
    pub config: serde_json::Value,
    /// Pairs left out under `allow_partial`.
    #[serde(default)]
    pub skipped: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_categories: Option<ScenePrompts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkManifest {
    pub header: ManifestHeader,
    pub items: Vec<BenchmarkItem>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Header(ManifestHeader),
    Item(Box<BenchmarkItem>),
}

impl BenchmarkManifest {
    pub fn item(&self, pair_id: &str) -> Option<&BenchmarkItem> {
        self.items
            .binary_search_by(|i| i.pair_id.as_str().cmp(pair_id))
            .ok()
            .map(|k| &self.items[k])
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Record::Header(self.header.clone())).expect("header serializes");
        out.push('\n');
        for item in &self.items {
            out.push_str(&serde_json::to_string(&Record::Item(Box::new(item.clone()))).expect("item serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, BuildError> {
        let mut header = None;
        let mut items = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line).map_err(|e| BuildError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
            match rec {
                Record::Header(h) => header = Some(h),
                Record::Item(item) => items.push(*item),
            }
        }
        let header = header.ok_or(BuildError::NoHeader)?;
        items.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        Ok(Self { header, items })
    }

    pub fn load(path: &Path) -> Result<Self, BuildError> {
        let text = std::fs::read_to_string(path).map_err(|e| BuildError::Parse {
            line: 0,
            reason: format!("{}: {e}", path.display()),
        })?;
        Self::from_jsonl(&text)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    pub allow_partial: bool,
    pub config: serde_json::Value,
}

fn missing_fields(meta: &PairMeta) -> Vec<&'static str> {
    let mut out = Vec::new();
    if meta.depth_m.is_none() {
        out.push("depth_m");
    }
    if meta.brightness.is_none() {
        out.push("brightness");
    }
    if meta.roll_deg.is_none() {
        out.push("roll_deg");
    }
    out
}

/// Joins pair metadata with answer keys, bins depth and brightness into
/// tertiles over the included items, and orders items by `pair_id`.
pub fn build_manifest(
    metas: &[PairMeta],
    keys: &BTreeMap<String, AnswerKey>,
    opts: &BuildOptions,
) -> Result<BenchmarkManifest, BuildError> {
    let mut sorted: Vec<&PairMeta> = metas.iter().collect();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));

    let mut missing = Vec::new();
    let mut complete = Vec::new();
    for m in sorted {
        let mut fields = missing_fields(m);
        if !keys.contains_key(&m.pair_id) {
            fields.push("answer_key");
        }
        if fields.is_empty() {
            complete.push(m);
        } else {
            missing.push((m.pair_id.clone(), fields));
        }
    }
    if !missing.is_empty() && !opts.allow_partial {
        return Err(BuildError::MissingMetadata(missing));
    }

    let depths: Vec<f64> = complete.iter().map(|m| m.depth_m.unwrap()).collect();
    let lights: Vec<f64> = complete.iter().map(|m| m.brightness.unwrap()).collect();
    let dt = tertile_bins(&depths);
    let lt = tertile_bins(&lights);

    let items = complete
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let key = &keys[&m.pair_id];
            let roll = m.roll_deg.unwrap();
            BenchmarkItem {
                pair_id: m.pair_id.clone(),
                scene_id: m.scene_id.clone(),
                view1: m.files.view1_labeled.clone(),
                view2: m.files.view2_edited.clone(),
                view1_unlabeled: m.files.view1.clone(),
                view2_original: m.files.view2_original.clone(),
                answer_letter: key.answer_letter,
                num_labels: key.num_labels,
                answer_object: m.answer_object,
                depth_m: depths[i],
                depth_bin: DepthBin::from_index(dt.bins[i]),
                brightness: lights[i],
                light_bin: LightBin::from_index(lt.bins[i]),
                plausibility: if m.roll_degenerate {
                    Plausibility::Plausible
                } else {
                    Plausibility::from_roll(roll)
                },
                roll_deg: roll,
                object_category: m.object_category.clone(),
                scene_category: m.scene_category.clone().unwrap_or_else(|| UNCATEGORIZED.to_string()),
                variant: m.variant,
                expansion: m.expansion,
                treatment: m.treatment.clone(),
            }
        })
        .collect::<Vec<_>>();

    Ok(BenchmarkManifest {
        header: ManifestHeader {
            format_version: MANIFEST_FORMAT_VERSION,
            item_count: items.len(),
            bin_edges: BinEdges {
                depth: dt.edges,
                light: lt.edges,
            },
            config: opts.config.clone(),
            skipped: missing.into_iter().map(|(id, _)| id).collect(),
            scene_categories: None,
        },
        items,
    })
}

pub const CAPTION_PROMPT: &str = "Describe the scene shown in these two photographs in one sentence. Mention the kind of place it is.";

pub fn batch_category_prompt(captions: &[String]) -> String {
    let mut s = String::from(
        "Below are numbered descriptions of indoor scenes. Assign each one a short scene category \
         such as kitchen, bedroom, office or bathroom, reusing the same category for similar scenes. \
         Answer with exactly one line per description, in the same order, formatted as `<number>: <category>`.\n\n",
    );
    for (i, c) in captions.iter().enumerate() {
        s.push_str(&format!("{}: {}\n", i + 1, c.trim().replace('\n', " ")));
    }
    s
}

/// Lowercase, non-alphanumerics collapsed to `_`.
pub fn normalize_category(raw: &str) -> String {
    let mut out = String::new();
    let mut gap = false;
    for c in raw.trim().chars().flat_map(char::to_lowercase) {
        if c.is_ascii_alphanumeric() {
            if gap && !out.is_empty() {
                out.push('_');
            }
            gap = false;
            out.push(c);
        } else {
            gap = true;
        }
    }
    if out.is_empty() {
        "misc".to_string()
    } else {
        out
    }
}

/// Reads `<number>: <category>` lines; unnumbered lines are taken in order.
fn parse_category_lines(text: &str, n: usize) -> Option<Vec<String>> {
    let mut numbered: BTreeMap<usize, String> = BTreeMap::new();
    let mut plain = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let line = line.trim_start_matches(['-', '*', ' ']);
        match line.split_once([':', '.', ')']) {
            Some((num, rest)) if num.trim().parse::<usize>().is_ok() => {
                numbered.insert(num.trim().parse().unwrap(), normalize_category(rest));
            }
            _ => plain.push(normalize_category(line)),
        }
    }
    if (1..=n).all(|i| numbered.contains_key(&i)) {
        return Some((1..=n).map(|i| numbered[&i].clone()).collect());
    }
    (plain.len() == n).then_some(plain)
}

fn sha256_hex(s: &str) -> String {
    Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct SceneSample {
    pub scene_id: String,
    /// PNG bytes of the unedited views.
    pub images: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneCategories {
    /// Same order as the input samples.
    pub categories: Vec<String>,
    pub captions: Vec<Option<String>>,
    pub provenance: ScenePrompts,
}

/// Captions each sample, then asks for all categories in one batch.
/// Any failure falls back to `uncategorized` for the affected samples.
pub fn categorize_scenes(samples: &[SceneSample], labeler: &dyn ChatModel) -> SceneCategories {
    let captions: Vec<Option<String>> = samples
        .iter()
        .map(|s| {
            labeler
                .chat(&ChatRequest {
                    text: CAPTION_PROMPT.to_string(),
                    images: s.images.clone(),
                    max_tokens: Some(96),
                    ..Default::default()
                })
                .ok()
                .map(|r| r.text.trim().to_string())
                .filter(|t| !t.is_empty())
        })
        .collect();
    let ok: Vec<(usize, String)> = captions
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.clone().map(|c| (i, c)))
        .collect();
    let batch_text: Vec<String> = ok.iter().map(|(_, c)| c.clone()).collect();
    let batch = batch_category_prompt(&batch_text);
    let mut categories = vec![UNCATEGORIZED.to_string(); samples.len()];
    if !ok.is_empty() {
        let reply = labeler.chat(&ChatRequest {
            text: batch.clone(),
            max_tokens: Some(16 * ok.len() as u32 + 64),
            ..Default::default()
        });
        if let Some(cats) = reply.ok().and_then(|r| parse_category_lines(&r.text, ok.len())) {
            for ((i, _), c) in ok.iter().zip(cats) {
                categories[*i] = c;
            }
        }
    }
    SceneCategories {
        categories,
        captions,
        provenance: ScenePrompts {
            model: labeler.name().to_string(),
            caption_prompt_sha256: sha256_hex(CAPTION_PROMPT),
            batch_prompt_sha256: sha256_hex(&batch_category_prompt(&[])),
        },
    }
}
