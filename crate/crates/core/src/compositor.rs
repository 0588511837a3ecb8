//! Building the edited view V2′.
//!
//! The answer object O is erased from V2 by inpainting its (expanded)
//! bounding box, a copy of O taken from another frame is scaled to fit O's
//! V2 bounding box and pasted at its centre, and finally every pixel of the
//! region that belongs to some other instance is copied back from V2 so that
//! occluders stay in front.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::PixelMask;
use crate::inpaint::{inpaint_with, InpaintBackend, InpaintError, InpaintParams};
use crate::labeling::{select_labelable, LabelConfig, LabelError};
use crate::raster::{round_half_up, Rect, RgbImage};
use crate::scene_bundle::{InstanceId, SceneBundle, ViewFrame};
use crate::triplet_select::{CriteriaValues, TripletCandidate};

#[derive(Debug, Error)]
pub enum CompositeError {
    #[error("object {object_id} does not appear in frame {frame}")]
    ObjectAbsent { frame: String, object_id: InstanceId },
    #[error("expanded box of object {object_id} has zero area")]
    DegenerateRegion { object_id: InstanceId },
    #[error("frame {0} not in bundle")]
    UnknownFrame(String),
    #[error("recipe is for scene {expected}, bundle is {found}")]
    SceneMismatch { expected: String, found: String },
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error(transparent)]
    Inpaint(#[from] InpaintError),
    #[error(transparent)]
    Label(#[from] LabelError),
}

/// How many extra objects a multi-object self-paste touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PasteCount {
    N(usize),
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// O re-inserted from V3.
    Inconsistent,
    /// O erased and re-inserted from V2 itself.
    SelfPaste,
    /// V2 unchanged.
    NoChange,
    /// Inconsistent edit plus self-pastes of other labelable objects.
    MultiSelfPaste(PasteCount),
    /// Inconsistent edit; the recipe's expansion is the swept treatment.
    ExpansionSweep,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Inconsistent => f.write_str("inconsistent"),
            Variant::SelfPaste => f.write_str("self_paste"),
            Variant::NoChange => f.write_str("no_change"),
            Variant::MultiSelfPaste(PasteCount::N(k)) => write!(f, "multi_self_paste:{k}"),
            Variant::MultiSelfPaste(PasteCount::All) => f.write_str("multi_self_paste:all"),
            Variant::ExpansionSweep => f.write_str("expansion_sweep"),
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inconsistent" => Ok(Variant::Inconsistent),
            "self_paste" => Ok(Variant::SelfPaste),
            "no_change" => Ok(Variant::NoChange),
            "expansion_sweep" => Ok(Variant::ExpansionSweep),
            "multi_self_paste:all" => Ok(Variant::MultiSelfPaste(PasteCount::All)),
            _ => {
                let k = s
                    .strip_prefix("multi_self_paste:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| format!("unknown variant {s:?}"))?;
                if k == 0 {
                    return Err("multi_self_paste needs k >= 1".into());
                }
                Ok(Variant::MultiSelfPaste(PasteCount::N(k)))
            }
        }
    }
}

impl Serialize for Variant {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_expansion() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecipe {
    pub candidate: TripletCandidate,
    pub variant: Variant,
    /// Fraction of the bbox width/height added on each side.
    #[serde(default = "default_expansion")]
    pub expansion: f64,
    #[serde(default)]
    pub backend: InpaintBackend,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub inpaint: InpaintParams,
    #[serde(default)]
    pub labels: LabelConfig,
}

impl EditRecipe {
    pub fn new(candidate: TripletCandidate, variant: Variant) -> Self {
        Self {
            candidate,
            variant,
            expansion: default_expansion(),
            backend: InpaintBackend::Native,
            rng_seed: 0,
            inpaint: InpaintParams::default(),
            labels: LabelConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), CompositeError> {
        if !(self.expansion >= 0.0 && self.expansion.is_finite()) {
            return Err(CompositeError::InvalidRecipe(format!("expansion must be >= 0, got {}", self.expansion)));
        }
        if self.variant == Variant::MultiSelfPaste(PasteCount::N(0)) {
            return Err(CompositeError::InvalidRecipe("multi_self_paste needs k >= 1".into()));
        }
        self.inpaint.validate()?;
        Ok(())
    }

    /// Stable identifier of the pair this recipe produces.
    pub fn pair_id(&self) -> String {
        let c = &self.candidate;
        let key = format!(
            "{}/{}/{}/{}/{}/{}/{}/{}",
            c.scene_id, c.v1_id, c.v2_id, c.v3_id, c.object_id, self.variant, self.expansion, self.rng_seed
        );
        let digest = Sha256::digest(key.as_bytes());
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        format!("p{hex}")
    }
}

/// Where and how a crop was pasted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PasteTransform {
    pub source_frame: String,
    pub src_bbox: Rect,
    pub target_bbox: Rect,
    pub scale: f64,
    pub dst_center: (f64, f64),
    /// Scaled crop size.
    pub extent: (u32, u32),
    /// Top-left of the scaled crop; may be negative near borders.
    pub origin: (i64, i64),
}

impl PasteTransform {
    /// Source pixel sampled for crop offset `(i, j)`.
    pub fn sample(&self, i: u32, j: u32) -> (u32, u32) {
        let pick = |k: u32, src: u32, ext: u32| {
            let v = ((f64::from(k) + 0.5) * f64::from(src) / f64::from(ext)).floor() as u32;
            v.min(src - 1)
        };
        (
            self.src_bbox.x + pick(i, self.src_bbox.w, self.extent.0),
            self.src_bbox.y + pick(j, self.src_bbox.h, self.extent.1),
        )
    }
}

/// A self-pasted non-answer object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraPaste {
    pub object_id: InstanceId,
    pub region: Rect,
    pub transform: PasteTransform,
}

#[derive(Debug, Clone)]
pub struct EditedPair {
    pub pair_id: String,
    pub scene_id: String,
    pub view1: RgbImage,
    pub view2_edited: RgbImage,
    pub answer_object: InstanceId,
    /// Union of every inpainted box.
    pub inpaint_region: PixelMask,
    /// The answer object's box; `None` for no_change.
    pub answer_region: Option<Rect>,
    pub paste_transform: Option<PasteTransform>,
    pub extras: Vec<ExtraPaste>,
    pub recipe: EditRecipe,
    pub criteria: Option<CriteriaValues>,
    /// Wall time spent inside the inpainter.
    pub inpaint_time: Duration,
}

pub fn object_bbox(frame: &ViewFrame, object_id: InstanceId) -> Option<Rect> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for (x, y, px) in frame.instances.enumerate_pixels() {
        if px[0] == object_id {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
    }
    (x0 != u32::MAX).then(|| Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
}

/// Grows `bbox` by `expansion` of its size on each side, rounded half-up,
/// then clamps to the image. `None` when the clamped box is empty.
pub fn expand_rect(bbox: Rect, expansion: f64, width: u32, height: u32) -> Option<Rect> {
    let grow = |start: u32, len: u32, limit: u32| {
        let new_len = round_half_up(f64::from(len) * (1.0 + 2.0 * expansion));
        let lead = (new_len - i64::from(len)).div_euclid(2);
        let a = (i64::from(start) - lead).clamp(0, i64::from(limit));
        let b = (i64::from(start) - lead + new_len).clamp(0, i64::from(limit));
        (a as u32, b.saturating_sub(a) as u32)
    };
    let (x, w) = grow(bbox.x, bbox.w, width);
    let (y, h) = grow(bbox.y, bbox.h, height);
    let r = Rect::new(x, y, w, h);
    (!r.is_empty()).then_some(r)
}

fn erase_in(
    base: &RgbImage,
    frame: &ViewFrame,
    object_id: InstanceId,
    expansion: f64,
    backend: &InpaintBackend,
    params: &InpaintParams,
) -> Result<(RgbImage, Rect, Rect), CompositeError> {
    let bbox = object_bbox(frame, object_id).ok_or_else(|| CompositeError::ObjectAbsent {
        frame: frame.frame_id.clone(),
        object_id,
    })?;
    let region =
        expand_rect(bbox, expansion, frame.width(), frame.height()).ok_or(CompositeError::DegenerateRegion { object_id })?;
    let mask = PixelMask::from_rect(frame.width(), frame.height(), region);
    let filled = inpaint_with(backend, base, &mask, params)?;
    Ok((filled, region, bbox))
}

/// Inpaints O's expanded bounding box in V2. Returns the filled raster and the region.
pub fn erase_object(
    v2: &ViewFrame,
    object_id: InstanceId,
    expansion: f64,
    backend: &InpaintBackend,
    params: &InpaintParams,
) -> Result<(RgbImage, PixelMask), CompositeError> {
    let (img, region, _) = erase_in(&v2.rgb, v2, object_id, expansion, backend, params)?;
    Ok((img, PixelMask::from_rect(v2.width(), v2.height(), region)))
}

/// Scales O's crop from `source` to fit inside `target_bbox` (aspect kept),
/// centres it there and composites only O's own pixels.
pub fn paste_object(
    base: &RgbImage,
    source: &ViewFrame,
    object_id: InstanceId,
    target_bbox: Rect,
) -> Result<(RgbImage, PixelMask, PasteTransform), CompositeError> {
    let src = object_bbox(source, object_id).ok_or_else(|| CompositeError::ObjectAbsent {
        frame: source.frame_id.clone(),
        object_id,
    })?;
    let scale = (f64::from(target_bbox.w) / f64::from(src.w)).min(f64::from(target_bbox.h) / f64::from(src.h));
    let extent = (
        round_half_up(f64::from(src.w) * scale).max(1) as u32,
        round_half_up(f64::from(src.h) * scale).max(1) as u32,
    );
    let dst_center = target_bbox.center();
    let origin = (
        round_half_up(dst_center.0 - f64::from(extent.0) / 2.0),
        round_half_up(dst_center.1 - f64::from(extent.1) / 2.0),
    );
    let t = PasteTransform {
        source_frame: source.frame_id.clone(),
        src_bbox: src,
        target_bbox,
        scale,
        dst_center,
        extent,
        origin,
    };
    let (w, h) = base.dimensions();
    let mut out = base.clone();
    let mut pasted = PixelMask::new(w, h);
    for j in 0..extent.1 {
        let dy = origin.1 + i64::from(j);
        if dy < 0 || dy >= i64::from(h) {
            continue;
        }
        for i in 0..extent.0 {
            let dx = origin.0 + i64::from(i);
            if dx < 0 || dx >= i64::from(w) {
                continue;
            }
            let (sx, sy) = t.sample(i, j);
            if source.instance_at(sx, sy) == object_id {
                out.put_pixel(dx as u32, dy as u32, *source.rgb.get_pixel(sx, sy));
                pasted.set(dx as u32, dy as u32, true);
            }
        }
    }
    Ok((out, pasted, t))
}

/// Copies back from V2 every pixel of `region` that belongs to an instance
/// other than background and `answer_object`.
pub fn restore_occluders(composited: &RgbImage, v2: &ViewFrame, answer_object: InstanceId, region: &PixelMask) -> RgbImage {
    let mut out = composited.clone();
    for (x, y) in region.iter() {
        let id = v2.instance_at(x, y);
        if id != 0 && id != answer_object {
            out.put_pixel(x, y, *v2.rgb.get_pixel(x, y));
        }
    }
    out
}

fn frame<'a>(bundle: &'a SceneBundle, id: &str) -> Result<&'a ViewFrame, CompositeError> {
    bundle.frame(id).ok_or_else(|| CompositeError::UnknownFrame(id.to_string()))
}

/// Objects self-pasted by a multi-object recipe: labelable in V1, present
/// in V2, never the answer; a seeded sample of `count` of them.
pub fn pick_extras(
    v1: &ViewFrame,
    v2: &ViewFrame,
    answer: InstanceId,
    count: PasteCount,
    labels: &LabelConfig,
    seed: u64,
) -> Result<Vec<InstanceId>, CompositeError> {
    let mut present = std::collections::BTreeSet::new();
    for px in v2.instances.pixels() {
        present.insert(px[0]);
    }
    let mut pool: Vec<InstanceId> = select_labelable(v1, answer, labels)?
        .into_iter()
        .filter(|&id| id != answer && present.contains(&id))
        .collect();
    pool.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    pool.shuffle(&mut rng);
    if let PasteCount::N(k) = count {
        pool.truncate(k);
    }
    Ok(pool)
}

pub fn make_pair(bundle: &SceneBundle, recipe: &EditRecipe) -> Result<EditedPair, CompositeError> {
    recipe.validate()?;
    let c = &recipe.candidate;
    if c.scene_id != bundle.scene_id {
        return Err(CompositeError::SceneMismatch {
            expected: c.scene_id.clone(),
            found: bundle.scene_id.clone(),
        });
    }
    let v1 = frame(bundle, &c.v1_id)?;
    let v2 = frame(bundle, &c.v2_id)?;
    let v3 = frame(bundle, &c.v3_id)?;
    let answer = c.object_id;
    let (w, h) = (v2.width(), v2.height());
    let params_for = |id: InstanceId| InpaintParams {
        rng_seed: recipe.rng_seed ^ (u64::from(id) << 32),
        ..recipe.inpaint.clone()
    };

    let mut pair = EditedPair {
        pair_id: recipe.pair_id(),
        scene_id: bundle.scene_id.clone(),
        view1: v1.rgb.clone(),
        view2_edited: v2.rgb.clone(),
        answer_object: answer,
        inpaint_region: PixelMask::new(w, h),
        answer_region: None,
        paste_transform: None,
        extras: Vec::new(),
        recipe: recipe.clone(),
        criteria: c.criteria.clone(),
        inpaint_time: Duration::ZERO,
    };
    if recipe.variant == Variant::NoChange {
        return Ok(pair);
    }

    let mut current = v2.rgb.clone();
    if let Variant::MultiSelfPaste(count) = recipe.variant {
        for id in pick_extras(v1, v2, answer, count, &recipe.labels, recipe.rng_seed)? {
            let t = Instant::now();
            let (erased, region, bbox) = erase_in(&current, v2, id, recipe.expansion, &recipe.backend, &params_for(id))?;
            pair.inpaint_time += t.elapsed();
            let (pasted, _, transform) = paste_object(&erased, v2, id, bbox)?;
            let mask = PixelMask::from_rect(w, h, region);
            current = restore_occluders(&pasted, v2, id, &mask);
            pair.inpaint_region = pair.inpaint_region.union(&mask);
            pair.extras.push(ExtraPaste {
                object_id: id,
                region,
                transform,
            });
        }
    }

    let source = if recipe.variant == Variant::SelfPaste { v2 } else { v3 };
    let t = Instant::now();
    let (erased, region, bbox) = erase_in(&current, v2, answer, recipe.expansion, &recipe.backend, &params_for(answer))?;
    pair.inpaint_time += t.elapsed();
    let (pasted, _, transform) = paste_object(&erased, source, answer, bbox)?;
    let mask = PixelMask::from_rect(w, h, region);
    pair.view2_edited = restore_occluders(&pasted, v2, answer, &mask);
    pair.inpaint_region = pair.inpaint_region.union(&mask);
    pair.answer_region = Some(region);
    pair.paste_transform = Some(transform);
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::DepthMap;
    use crate::raster::InstanceMap;
    use crate::scene_bundle::{CameraModel, InstanceInfo};
    use image::{Luma, Rgb};
    use nalgebra::Matrix4;
    use std::collections::BTreeMap;

    fn frame_with(id: &str, w: u32, h: u32, objects: &[(InstanceId, Rect, [u8; 3])]) -> ViewFrame {
        let mut rgb = RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 5 % 256) as u8, 60]));
        let mut inst = InstanceMap::new(w, h);
        for &(oid, r, col) in objects {
            for y in r.y..r.bottom() {
                for x in r.x..r.right() {
                    inst.put_pixel(x, y, Luma([oid]));
                    rgb.put_pixel(x, y, Rgb([col[0], col[1], (x + y) as u8]));
                }
            }
        }
        ViewFrame {
            frame_id: id.to_string(),
            rgb,
            depth: DepthMap::from_fn(w, h, |_, _| 2.0),
            instances: inst,
            camera: CameraModel {
                fx: 100.0,
                fy: 100.0,
                cx: w as f64 / 2.0,
                cy: h as f64 / 2.0,
                world_from_camera: Matrix4::identity(),
            },
        }
    }

    fn bundle(frames: Vec<ViewFrame>) -> SceneBundle {
        let mut instance_table = BTreeMap::new();
        for f in &frames {
            for px in f.instances.pixels() {
                if px[0] != 0 {
                    instance_table.insert(
                        px[0],
                        InstanceInfo {
                            category: "box".into(),
                            display_name: format!("box {}", px[0]),
                        },
                    );
                }
            }
        }
        SceneBundle {
            scene_id: "s".into(),
            frames,
            instance_table,
        }
    }

    #[test]
    fn expansion_zero_keeps_box() {
        let r = Rect::new(100, 100, 100, 50);
        assert_eq!(expand_rect(r, 0.0, 1024, 768), Some(r));
    }

    #[test]
    fn expansion_five_percent_rounds_half_up_and_centres() {
        let r = Rect::new(100, 100, 100, 50);
        // 110 wide (5 per side), 55 tall (2.5 -> lead of 2 above, 3 below)
        assert_eq!(expand_rect(r, 0.05, 1024, 768), Some(Rect::new(95, 98, 110, 55)));
    }

    #[test]
    fn expansion_clamps_at_corner() {
        let r = Rect::new(0, 0, 40, 30);
        assert_eq!(expand_rect(r, 0.5, 100, 100), Some(Rect::new(0, 0, 60, 45)));
        let r = Rect::new(80, 90, 20, 10);
        assert_eq!(expand_rect(r, 0.5, 100, 100), Some(Rect::new(70, 85, 30, 15)));
    }

    #[test]
    fn same_size_paste_is_pixel_exact() {
        let f = frame_with("a", 120, 90, &[(3, Rect::new(30, 20, 40, 25), [200, 10, 0])]);
        let base = RgbImage::from_pixel(120, 90, Rgb([0, 0, 0]));
        let (out, mask, t) = paste_object(&base, &f, 3, Rect::new(30, 20, 40, 25)).unwrap();
        assert_eq!(t.scale, 1.0);
        assert_eq!(t.origin, (30, 20));
        assert_eq!(mask.area(), 40 * 25);
        for (x, y) in mask.iter() {
            assert_eq!(out.get_pixel(x, y), f.rgb.get_pixel(x, y));
        }
    }

    #[test]
    fn fit_inside_halves_wide_source() {
        let f = frame_with("a", 400, 300, &[(3, Rect::new(10, 10, 200, 100), [9, 9, 9])]);
        let base = RgbImage::new(400, 300);
        let (_, mask, t) = paste_object(&base, &f, 3, Rect::new(150, 150, 100, 100)).unwrap();
        assert_eq!(t.scale, 0.5);
        assert_eq!(t.extent, (100, 50));
        assert_eq!(t.origin, (150, 175));
        assert_eq!(mask.bbox(), Some(Rect::new(150, 175, 100, 50)));
    }

    #[test]
    fn fit_inside_uses_min_ratio() {
        let f = frame_with("a", 300, 300, &[(3, Rect::new(5, 5, 10, 10), [9, 9, 9])]);
        let (_, _, t) = paste_object(&RgbImage::new(300, 300), &f, 3, Rect::new(100, 100, 100, 40)).unwrap();
        assert_eq!(t.scale, 4.0);
        assert_eq!(t.extent, (40, 40));
    }

    #[test]
    fn missing_source_object_is_an_error() {
        let f = frame_with("a", 50, 50, &[]);
        assert!(matches!(
            paste_object(&RgbImage::new(50, 50), &f, 3, Rect::new(0, 0, 5, 5)),
            Err(CompositeError::ObjectAbsent { .. })
        ));
    }

    #[test]
    fn occluder_strip_is_restored_exactly() {
        // occluder id 5 covers a 50×10 strip inside the region
        let f = frame_with(
            "v2",
            160,
            120,
            &[(3, Rect::new(40, 30, 60, 50), [200, 0, 0]), (5, Rect::new(45, 60, 50, 10), [0, 200, 0])],
        );
        let region = PixelMask::from_rect(160, 120, Rect::new(35, 25, 70, 60));
        let composited = RgbImage::from_pixel(160, 120, Rgb([1, 2, 3]));
        let out = restore_occluders(&composited, &f, 3, &region);
        let mut restored = 0;
        for (x, y, px) in out.enumerate_pixels() {
            if f.instance_at(x, y) == 5 {
                assert_eq!(px, f.rgb.get_pixel(x, y));
                restored += 1;
            } else {
                assert_eq!(px.0, [1, 2, 3]);
            }
        }
        assert_eq!(restored, 500);
        assert_eq!(restore_occluders(&out, &f, 3, &region), out);
    }

    fn three_frames() -> SceneBundle {
        let extras = |shift: u32| {
            vec![
                (3, Rect::new(60 + shift, 40, 50, 40), [220, 30, 30]),
                (4, Rect::new(10, 100, 40, 30), [30, 220, 30]),
                (5, Rect::new(130, 20, 30, 60), [30, 30, 220]),
                (6, Rect::new(100, 50, 20, 50), [200, 200, 30]),
                (7, Rect::new(170, 110, 25, 25), [90, 20, 160]),
            ]
        };
        bundle(vec![frame_with("v1", 200, 150, &extras(0)), frame_with("v2", 200, 150, &extras(5)), {
            // V3: O is taller and narrower
            let mut objs = extras(0);
            objs[0].1 = Rect::new(70, 30, 30, 70);
            frame_with("v3", 200, 150, &objs)
        }])
    }

    fn recipe(variant: Variant) -> EditRecipe {
        let mut r = EditRecipe::new(TripletCandidate::unchecked("s", ["v1", "v2", "v3"], 3), variant);
        r.labels.base_threshold_px = 300.0;
        r.labels.floor_px = 100.0;
        r
    }

    #[test]
    fn no_change_returns_v2() {
        let b = three_frames();
        let p = make_pair(&b, &recipe(Variant::NoChange)).unwrap();
        assert_eq!(p.view2_edited, b.frames[1].rgb);
        assert!(p.inpaint_region.is_empty());
    }

    #[test]
    fn self_paste_restores_object_pixels() {
        let b = three_frames();
        let p = make_pair(&b, &recipe(Variant::SelfPaste)).unwrap();
        let v2 = &b.frames[1];
        for (x, y, px) in v2.rgb.enumerate_pixels() {
            if v2.instance_at(x, y) != 0 || !p.inpaint_region.get(x, y) {
                assert_eq!(p.view2_edited.get_pixel(x, y), px, "({x},{y})");
            }
        }
    }

    #[test]
    fn inconsistent_paste_matches_transform_replay() {
        let b = three_frames();
        let p = make_pair(&b, &recipe(Variant::Inconsistent)).unwrap();
        let (v2, v3) = (&b.frames[1], &b.frames[2]);
        let t = p.paste_transform.clone().unwrap();
        assert_eq!(t.source_frame, "v3");
        let mut checked = 0;
        for j in 0..t.extent.1 {
            for i in 0..t.extent.0 {
                let (dx, dy) = ((t.origin.0 + i as i64) as u32, (t.origin.1 + j as i64) as u32);
                let (sx, sy) = t.sample(i, j);
                let occluded = !matches!(v2.instance_at(dx, dy), 0 | 3);
                if v3.instance_at(sx, sy) == 3 && !occluded {
                    assert_eq!(p.view2_edited.get_pixel(dx, dy), v3.rgb.get_pixel(sx, sy));
                    checked += 1;
                }
            }
        }
        assert!(checked > 500);
        for (x, y, px) in v2.rgb.enumerate_pixels() {
            if !p.inpaint_region.get(x, y) {
                assert_eq!(p.view2_edited.get_pixel(x, y), px);
            }
        }
    }

    #[test]
    fn multi_self_paste_outside_union_is_v2() {
        let b = three_frames();
        for count in [PasteCount::N(1), PasteCount::N(3), PasteCount::All] {
            let p = make_pair(&b, &recipe(Variant::MultiSelfPaste(count))).unwrap();
            let n = match count {
                PasteCount::N(k) => k,
                PasteCount::All => 4,
            };
            assert_eq!(p.extras.len(), n);
            assert!(p.extras.iter().all(|e| e.object_id != 3));
            let v2 = &b.frames[1];
            for (x, y, px) in v2.rgb.enumerate_pixels() {
                if !p.inpaint_region.get(x, y) {
                    assert_eq!(p.view2_edited.get_pixel(x, y), px);
                }
            }
        }
    }

    #[test]
    fn make_pair_is_deterministic() {
        let b = three_frames();
        let a = make_pair(&b, &recipe(Variant::MultiSelfPaste(PasteCount::N(2)))).unwrap();
        let c = make_pair(&b, &recipe(Variant::MultiSelfPaste(PasteCount::N(2)))).unwrap();
        assert_eq!(a.view2_edited, c.view2_edited);
        assert_eq!(a.pair_id, c.pair_id);
        assert_ne!(a.pair_id, make_pair(&b, &recipe(Variant::Inconsistent)).unwrap().pair_id);
    }

    #[test]
    fn variant_strings_round_trip() {
        for v in [
            Variant::Inconsistent,
            Variant::SelfPaste,
            Variant::NoChange,
            Variant::ExpansionSweep,
            Variant::MultiSelfPaste(PasteCount::N(10)),
            Variant::MultiSelfPaste(PasteCount::All),
        ] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(serde_json::from_str::<Variant>(&json).unwrap(), v);
        }
        assert!("multi_self_paste:0".parse::<Variant>().is_err());
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn negative_expansion_rejected() {
        let b = three_frames();
        let mut r = recipe(Variant::Inconsistent);
        r.expansion = -0.1;
        assert!(matches!(make_pair(&b, &r), Err(CompositeError::InvalidRecipe(_))));
    }
}
