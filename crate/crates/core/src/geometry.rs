//! Projective math: cross-view mask reprojection, visible-object overlap,
//! projected-area fraction and relative camera roll.

use std::collections::BTreeSet;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{DepthMap, InstanceMap, Rect};
use crate::scene_bundle::{instance_stats, CameraModel, InstanceId, ViewFrame};

/// Pitch within this many degrees of ±90° is treated as gimbal lock.
pub const GIMBAL_EPS_DEG: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Dense binary mask over a `width × height` raster.
#[derive(Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for PixelMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PixelMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl PixelMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn from_instance(instances: &InstanceMap, id: InstanceId) -> Self {
        let (w, h) = instances.dimensions();
        Self {
            width: w,
            height: h,
            bits: instances.as_raw().iter().map(|&v| v == id).collect(),
        }
    }

    /// Mask of `rect` clipped to the raster.
    pub fn from_rect(width: u32, height: u32, rect: Rect) -> Self {
        let mut m = Self::new(width, height);
        for y in rect.y..rect.bottom().min(height) {
            for x in rect.x..rect.right().min(width) {
                m.set(x, y, true);
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bits[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        let i = self.index(x, y);
        self.bits[i] = on;
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    /// Set coordinates in raster order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    pub fn union(&self, other: &PixelMask) -> PixelMask {
        assert_eq!(self.dimensions(), other.dimensions());
        PixelMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn bbox(&self) -> Option<Rect> {
        let mut it = self.iter();
        let (x, y) = it.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (x, y, x, y);
        for (x, y) in it {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        Some(Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    /// Mean (x, y) of set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0u64);
        for (x, y) in self.iter() {
            sx += x as f64;
            sy += y as f64;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }
}

/// Rigid map from camera A's frame into camera B's: `X_b = R·X_a + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RelativePose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &RelativePose) -> RelativePose {
        RelativePose {
            rotation: next.rotation * self.rotation,
            translation: next.rotation * self.translation + next.translation,
        }
    }
}

pub fn relative_pose(cam_a: &CameraModel, cam_b: &CameraModel) -> RelativePose {
    let (ra, ta) = (cam_a.rotation(), cam_a.translation());
    let (rb, tb) = (cam_b.rotation(), cam_b.translation());
    let rb_t = rb.transpose();
    RelativePose {
        rotation: rb_t * ra,
        translation: rb_t * (ta - tb),
    }
}

/// Precomputed source→destination pixel transfer.
#[derive(Debug, Clone)]
pub struct Reprojector<'a> {
    src: &'a CameraModel,
    dst: &'a CameraModel,
    pose: RelativePose,
}

impl<'a> Reprojector<'a> {
    pub fn new(src: &'a CameraModel, dst: &'a CameraModel) -> Self {
        Self {
            src,
            dst,
            pose: relative_pose(src, dst),
        }
    }

    /// Continuous destination coordinates of source pixel (u, v) at depth z,
    /// or `None` when the point lands at or behind the destination camera.
    #[inline]
    pub fn transfer(&self, u: f64, v: f64, z: f64) -> Option<(f64, f64)> {
        let p = self.pose.apply(&self.src.backproject(u, v, z));
        self.dst.project(&p)
    }
}

/// Transfers every masked pixel with valid depth into the destination view.
///
/// Nearest-integer rounding, out-of-bounds points dropped, duplicates merged.
pub fn reproject_mask(
    mask: &PixelMask,
    depth: &DepthMap,
    cam_src: &CameraModel,
    cam_dst: &CameraModel,
    dst_dims: (u32, u32),
) -> PixelMask {
    assert_eq!(mask.dimensions(), depth.dimensions(), "mask must match source depth");
    let (dw, dh) = dst_dims;
    let mut out = PixelMask::new(dw, dh);
    let xfer = Reprojector::new(cam_src, cam_dst);
    for (u, v) in mask.iter() {
        let Some(z) = depth.valid(u, v) else { continue };
        let Some((x, y)) = xfer.transfer(u as f64, v as f64, z) else {
            continue;
        };
        let (xi, yi) = ((x + 0.5).floor(), (y + 0.5).floor());
        if xi >= 0.0 && yi >= 0.0 && xi < dw as f64 && yi < dh as f64 {
            out.set(xi as u32, yi as u32, true);
        }
    }
    out
}

/// area(O from `v3` reprojected into `v2`) / area(O in `v2`). Never clamped.
pub fn projected_area_fraction(
    object_id: InstanceId,
    v3: &ViewFrame,
    v2: &ViewFrame,
) -> Result<f64, GeometryError> {
    let target = PixelMask::from_instance(&v2.instances, object_id).area();
    if target == 0 {
        return Err(GeometryError::Degenerate(format!(
            "object {object_id} has zero area in frame {}",
            v2.frame_id
        )));
    }
    let src = PixelMask::from_instance(&v3.instances, object_id);
    let projected = reproject_mask(&src, &v3.depth, &v3.camera, &v2.camera, v2.rgb.dimensions());
    Ok(projected.area() as f64 / target as f64)
}

/// Instances with at least `min_area_px` pixels in `frame`.
pub fn visible_ids(frame: &ViewFrame, min_area_px: u64) -> BTreeSet<InstanceId> {
    instance_stats(frame)
        .into_iter()
        .filter(|(_, s)| s.area_px >= min_area_px)
        .map(|(id, _)| id)
        .collect()
}

/// IoU of two ID sets; 0 when both are empty.
pub fn set_iou<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// IoU of the visible-instance sets of two frames.
pub fn object_set_overlap(frame_a: &ViewFrame, frame_b: &ViewFrame, min_area_px: u64) -> f64 {
    set_iou(&visible_ids(frame_a, min_area_px), &visible_ids(frame_b, min_area_px))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollEstimate {
    pub roll_deg: f64,
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    /// Pitch at ±90°; roll is reported as 0 by convention.
    pub degenerate: bool,
}

/// Orientation of camera B seen from camera A, decomposed intrinsically as
/// yaw (about Y) · pitch (about X) · roll (about the Z viewing axis).
pub fn camera_roll(v_a: &CameraModel, v_b: &CameraModel) -> RollEstimate {
    // relative_pose maps A-points into B; B's axes expressed in A are its transpose.
    let m = relative_pose(v_a, v_b).rotation.transpose();
    let pitch = (-m[(1, 2)]).clamp(-1.0, 1.0).asin().to_degrees();
    if (pitch.abs() - 90.0).abs() <= GIMBAL_EPS_DEG {
        let yaw = (-m[(2, 0)]).atan2(m[(0, 0)]).to_degrees();
        return RollEstimate {
            roll_deg: 0.0,
            pitch_deg: pitch,
            yaw_deg: yaw,
            degenerate: true,
        };
    }
    RollEstimate {
        roll_deg: m[(1, 0)].atan2(m[(1, 1)]).to_degrees(),
        pitch_deg: pitch,
        yaw_deg: m[(0, 2)].atan2(m[(2, 2)]).to_degrees(),
        degenerate: false,
    }
}

pub fn camera_roll_deg(v_a: &CameraModel, v_b: &CameraModel) -> f64 {
    camera_roll(v_a, v_b).roll_deg
}
