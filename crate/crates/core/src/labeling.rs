//! Letter labels for the candidate objects in V1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{round_half_up, Rect, RgbImage};
use crate::scene_bundle::{InstanceId, SceneBundle, ViewFrame};

pub const REFERENCE_PIXELS: f64 = 1024.0 * 768.0;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("answer object {object_id} covers {area_px} px, below the {floor_px:.0} px floor")]
    Unlabelable { object_id: InstanceId, area_px: u64, floor_px: f64 },
    #[error("label config: {0}")]
    InvalidConfig(String),
    #[error("at most 26 objects can be lettered, got {0}")]
    TooMany(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    /// Area threshold at 1024×768; scaled by image area.
    pub base_threshold_px: f64,
    pub floor_px: f64,
    pub max_labels: usize,
    /// Relax the threshold while fewer than this many objects qualify.
    pub min_labels: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            base_threshold_px: 1000.0,
            floor_px: 300.0,
            max_labels: 26,
            min_labels: 5,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<(), LabelError> {
        if !(1..=26).contains(&self.max_labels) {
            return Err(LabelError::InvalidConfig("max_labels must be in 1..=26".into()));
        }
        if !(self.floor_px > 0.0 && self.floor_px <= self.base_threshold_px) {
            return Err(LabelError::InvalidConfig("need 0 < floor_px <= base_threshold_px".into()));
        }
        Ok(())
    }

    fn scale(width: u32, height: u32) -> f64 {
        f64::from(width) * f64::from(height) / REFERENCE_PIXELS
    }

    pub fn scaled_floor(&self, width: u32, height: u32) -> f64 {
        self.floor_px * Self::scale(width, height)
    }

    pub fn scaled_threshold(&self, width: u32, height: u32) -> f64 {
        self.base_threshold_px * Self::scale(width, height)
    }
}

/// Objects to label, largest first (ties by id), from per-object areas.
pub fn select_from_areas(
    areas: &BTreeMap<InstanceId, u64>,
    answer: InstanceId,
    width: u32,
    height: u32,
    cfg: &LabelConfig,
) -> Result<Vec<InstanceId>, LabelError> {
    cfg.validate()?;
    let floor = cfg.scaled_floor(width, height);
    let answer_area = areas.get(&answer).copied().unwrap_or(0);
    if (answer_area as f64) < floor {
        return Err(LabelError::Unlabelable {
            object_id: answer,
            area_px: answer_area,
            floor_px: floor,
        });
    }

    let mut threshold = cfg.scaled_threshold(width, height);
    let mut chosen: Vec<(InstanceId, u64)>;
    loop {
        let effective = threshold.max(floor);
        chosen = areas
            .iter()
            .filter(|&(&id, &a)| id != 0 && a as f64 >= effective)
            .map(|(&id, &a)| (id, a))
            .collect();
        if chosen.len() >= cfg.min_labels || effective <= floor {
            break;
        }
        threshold /= 2.0;
    }
    if !chosen.iter().any(|&(id, _)| id == answer) {
        chosen.push((answer, answer_area));
    }
    chosen.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    if chosen.len() > cfg.max_labels {
        let answer_rank = chosen.iter().position(|&(id, _)| id == answer).expect("answer kept");
        if answer_rank >= cfg.max_labels {
            let answer_entry = chosen.remove(answer_rank);
            chosen.truncate(cfg.max_labels - 1);
            chosen.push(answer_entry);
            chosen.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        } else {
            chosen.truncate(cfg.max_labels);
        }
    }
    Ok(chosen.into_iter().map(|(id, _)| id).collect())
}

/// Pixel count and centroid sums per instance in one pass.
pub fn instance_moments(frame: &ViewFrame) -> BTreeMap<InstanceId, (u64, (f64, f64))> {
    let mut acc: BTreeMap<InstanceId, (u64, u64, u64)> = BTreeMap::new();
    for (x, y, px) in frame.instances.enumerate_pixels() {
        let id = px[0];
        if id != 0 {
            let e = acc.entry(id).or_default();
            e.0 += 1;
            e.1 += u64::from(x);
            e.2 += u64::from(y);
        }
    }
    acc.into_iter()
        .map(|(id, (n, sx, sy))| (id, (n, (sx as f64 / n as f64, sy as f64 / n as f64))))
        .collect()
}

pub fn select_labelable(v1: &ViewFrame, answer: InstanceId, cfg: &LabelConfig) -> Result<Vec<InstanceId>, LabelError> {
    let areas = instance_moments(v1).into_iter().map(|(id, (n, _))| (id, n)).collect();
    select_from_areas(&areas, answer, v1.width(), v1.height(), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub letter: char,
    pub object_id: InstanceId,
    /// Rounded mask centroid.
    pub anchor: (u32, u32),
    pub area_px: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub entries: Vec<LabelEntry>,
    pub answer_letter: char,
}

impl LabelAssignment {
    pub fn letter_of(&self, object_id: InstanceId) -> Option<char> {
        self.entries.iter().find(|e| e.object_id == object_id).map(|e| e.letter)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One object to letter: id, mask centroid, area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelTarget {
    pub object_id: InstanceId,
    pub centroid: (f64, f64),
    pub area_px: u64,
}

/// Letters follow the raster order of the rounded centroids (row, then
/// column, then id). `answer` must be among `objects`.
pub fn assign_letters(objects: &[LabelTarget], answer: InstanceId) -> Result<LabelAssignment, LabelError> {
    if objects.len() > 26 {
        return Err(LabelError::TooMany(objects.len()));
    }
    let anchor = |c: (f64, f64)| (round_half_up(c.0).max(0) as u32, round_half_up(c.1).max(0) as u32);
    let mut sorted: Vec<_> = objects.iter().map(|o| (anchor(o.centroid), o)).collect();
    sorted.sort_by_key(|&((x, y), o)| (y, x, o.object_id));
    let entries: Vec<LabelEntry> = sorted
        .into_iter()
        .enumerate()
        .map(|(i, (anchor, o))| LabelEntry {
            letter: (b'A' + i as u8) as char,
            object_id: o.object_id,
            anchor,
            area_px: o.area_px,
        })
        .collect();
    let answer_letter = entries
        .iter()
        .find(|e| e.object_id == answer)
        .map(|e| e.letter)
        .ok_or(LabelError::Unlabelable {
            object_id: answer,
            area_px: 0,
            floor_px: 0.0,
        })?;
    Ok(LabelAssignment { entries, answer_letter })
}

/// Selection followed by lettering.
pub fn label_view(v1: &ViewFrame, answer: InstanceId, cfg: &LabelConfig) -> Result<LabelAssignment, LabelError> {
    let moments = instance_moments(v1);
    let areas = moments.iter().map(|(&id, &(n, _))| (id, n)).collect();
    let ids = select_from_areas(&areas, answer, v1.width(), v1.height(), cfg)?;
    let targets: Vec<LabelTarget> = ids
        .iter()
        .map(|id| {
            let (area_px, centroid) = moments[id];
            LabelTarget {
                object_id: *id,
                centroid,
                area_px,
            }
        })
        .collect();
    assign_letters(&targets, answer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelStyle {
    /// Glyph height as a fraction of image height.
    pub glyph_height: f64,
    pub fill: [u8; 3],
    pub background: [u8; 3],
}

impl Default for LabelStyle {
    fn default() -> Self {
        Self {
            glyph_height: 0.035,
            fill: [255, 255, 255],
            background: [0, 0, 0],
        }
    }
}

impl LabelStyle {
    /// Font scale factor: each font cell becomes a k×k block.
    pub fn cell(&self, image_height: u32) -> u32 {
        let glyph_px = round_half_up(self.glyph_height * f64::from(image_height)).max(8) as u32;
        glyph_px.div_ceil(GLYPH_ROWS as u32)
    }

    /// Tag size `(w, h)` for an image of the given height.
    pub fn tag_size(&self, image_height: u32) -> (u32, u32) {
        let k = self.cell(image_height);
        (k * (GLYPH_COLS as u32 + 2), k * (GLYPH_ROWS as u32 + 2))
    }
}

const GLYPH_COLS: usize = 5;
const GLYPH_ROWS: usize = 7;

/// 5×7 capitals, one byte per row, bit 4 = leftmost column.
const FONT: [[u8; GLYPH_ROWS]; 26] = [
    [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
    [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
    [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
    [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
    [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
    [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
    [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
    [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
    [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
    [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
    [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
    [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
    [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
    [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
    [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
    [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
    [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
    [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
    [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
    [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
    [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
    [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
    [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
    [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
    [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
];

fn glyph_bit(letter: char, col: usize, row: usize) -> bool {
    let idx = (letter as u8).wrapping_sub(b'A') as usize;
    idx < 26 && FONT[idx][row] & (0x10 >> col) != 0
}

/// Tag rectangles in assignment order.
///
/// A tag starts centred on its anchor and clamped into the image. If it
/// overlaps an earlier tag it is moved down one tag height at a time while it
/// fits, then up; if no free slot exists it stays at the clamped spot.
pub fn layout_tags(assignment: &LabelAssignment, width: u32, height: u32, style: &LabelStyle) -> Vec<Rect> {
    let (tw, th) = style.tag_size(height);
    let clamp = |v: i64, size: u32, extent: u32| v.clamp(0, i64::from(extent.saturating_sub(size))) as u32;
    let mut placed: Vec<Rect> = Vec::with_capacity(assignment.entries.len());
    for e in &assignment.entries {
        let x = clamp(i64::from(e.anchor.0) - i64::from(tw / 2), tw, width);
        let y0 = clamp(i64::from(e.anchor.1) - i64::from(th / 2), th, height);
        let free = |y: u32| {
            let r = Rect::new(x, y, tw, th);
            !placed.iter().any(|p| p.intersects(&r))
        };
        let mut chosen = None;
        let mut y = y0;
        while y + th <= height.max(th) {
            if free(y) {
                chosen = Some(y);
                break;
            }
            y += th;
        }
        if chosen.is_none() {
            let mut y = i64::from(y0) - i64::from(th);
            while y >= 0 {
                if free(y as u32) {
                    chosen = Some(y as u32);
                    break;
                }
                y -= i64::from(th);
            }
        }
        placed.push(Rect::new(x, chosen.unwrap_or(y0), tw, th));
    }
    placed
}

/// Draws the tags; returns the labeled image and the tag rectangles.
pub fn render_labels(rgb: &RgbImage, assignment: &LabelAssignment, style: &LabelStyle) -> (RgbImage, Vec<Rect>) {
    let (w, h) = rgb.dimensions();
    let mut out = rgb.clone();
    let tags = layout_tags(assignment, w, h, style);
    let k = style.cell(h);
    for (entry, tag) in assignment.entries.iter().zip(&tags) {
        for ty in tag.y..tag.bottom().min(h) {
            for tx in tag.x..tag.right().min(w) {
                let (gx, gy) = ((tx - tag.x) / k, (ty - tag.y) / k);
                let on = (1..=GLYPH_COLS as u32).contains(&gx)
                    && (1..=GLYPH_ROWS as u32).contains(&gy)
                    && glyph_bit(entry.letter, (gx - 1) as usize, (gy - 1) as usize);
                out.get_pixel_mut(tx, ty).0 = if on { style.fill } else { style.background };
            }
        }
    }
    (out, tags)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyLetter {
    pub letter: char,
    pub object_id: InstanceId,
    pub category: String,
}

/// Scoring ground truth for one pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub pair_id: String,
    pub answer_letter: char,
    pub letters: Vec<KeyLetter>,
    pub num_labels: usize,
}

impl AnswerKey {
    pub fn new(pair_id: &str, assignment: &LabelAssignment, bundle: &SceneBundle) -> Self {
        let letters = assignment
            .entries
            .iter()
            .map(|e| KeyLetter {
                letter: e.letter,
                object_id: e.object_id,
                category: bundle.category(e.object_id).to_string(),
            })
            .collect();
        Self {
            pair_id: pair_id.to_string(),
            answer_letter: assignment.answer_letter,
            letters,
            num_labels: assignment.entries.len(),
        }
    }

    /// Valid answer letters, `A` up to the last label.
    pub fn valid_letters(&self) -> impl Iterator<Item = char> {
        (0..self.num_labels as u8).map(|i| (b'A' + i) as char)
    }
}
