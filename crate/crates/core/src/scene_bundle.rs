//! On-disk multi-view scene format.
//!
//! ```text
//! <scene_id>/manifest.json
//! <scene_id>/frames/<frame_id>.rgb.png    8-bit RGB
//! <scene_id>/frames/<frame_id>.inst.png   16-bit grayscale instance IDs, 0 = background
//! <scene_id>/frames/<frame_id>.depth.bin  planar depth, see below
//! ```
//!
//! Depth files are a little-endian 8-byte header (`b"FDPT"`, `u16` height,
//! `u16` width) followed by `height * width` row-major `f32` values in meters.
//! A value of 0 marks an invalid pixel.
//!
//! Cameras use +X right, +Y down, +Z forward. `world_from_camera` is stored as
//! 16 row-major floats.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, ImageReader};
use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{DepthMap, InstanceMap, Rect, RgbImage};

pub type InstanceId = u16;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FRAMES_DIR: &str = "frames";
pub const DEPTH_MAGIC: [u8; 4] = *b"FDPT";
const MANIFEST_VERSION: u32 = 1;
const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("frame {frame}: missing {field} asset at {}", path.display())]
    MissingAsset {
        frame: String,
        field: &'static str,
        path: PathBuf,
    },
    #[error("frame {frame}: {field} is {}x{}, expected {}x{}", found.0, found.1, expected.0, expected.1)]
    DimensionMismatch {
        frame: String,
        field: &'static str,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("frame {frame}: malformed camera field {field}: {reason}")]
    MalformedCamera {
        frame: String,
        field: &'static str,
        reason: String,
    },
    #[error("frame {frame}: instance map references id {id} absent from the instance table")]
    UnknownInstance { frame: String, id: InstanceId },
    #[error("frame {frame}: malformed {field} asset: {reason}")]
    MalformedAsset {
        frame: String,
        field: &'static str,
        reason: String,
    },
    #[error("scene has {0} frames; at least 3 are required")]
    TooFewFrames(usize),
    #[error("duplicate frame id {0}")]
    DuplicateFrame(String),
    #[error("malformed manifest {}: {source}", path.display())]
    Manifest {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to encode {}: {source}", path.display())]
    Encode {
        path: PathBuf,
        source: image::ImageError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_from_camera: Matrix4<f64>,
}

impl CameraModel {
    pub fn from_pose(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self {
            fx,
            fy,
            cx,
            cy,
            world_from_camera: m,
        }
    }

    /// Rotation block of `world_from_camera`.
    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_from_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn translation(&self) -> Vector3<f64> {
        self.world_from_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Lifts pixel (u, v) at planar depth z into the camera frame.
    #[inline]
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    /// Projects a camera-frame point; `None` at or behind the image plane.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.world_from_camera[(r, c)];
            }
        }
        out
    }

    /// Checks intrinsics and rigidity of the pose; the error names the field.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        for (name, v) in [("fx", self.fx), ("fy", self.fy)] {
            if !(v.is_finite() && v > 0.0) {
                return Err((name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !self.cx.is_finite() {
            return Err(("cx", "must be finite".into()));
        }
        if !self.cy.is_finite() {
            return Err(("cy", "must be finite".into()));
        }
        let m = &self.world_from_camera;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(("world_from_camera", "contains non-finite values".into()));
        }
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(("world_from_camera", format!("bottom row must be (0,0,0,1), got {bottom:?}")));
        }
        let r = self.rotation();
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
        if dev > ORTHONORMAL_TOL {
            return Err(("world_from_camera", format!("rotation block not orthonormal (deviation {dev:.3e})")));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(("world_from_camera", format!("rotation determinant is {det}, expected +1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewFrame {
    pub frame_id: String,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub instances: InstanceMap,
    pub camera: CameraModel,
}

impl ViewFrame {
    pub fn width(&self) -> u32 {
        self.rgb.width()
    }

    pub fn height(&self) -> u32 {
        self.rgb.height()
    }

    pub fn pixel_count(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    #[inline]
    pub fn instance_at(&self, x: u32, y: u32) -> InstanceId {
        self.instances.get_pixel(x, y).0[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub category: String,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub scene_id: String,
    pub frames: Vec<ViewFrame>,
    pub instance_table: BTreeMap<InstanceId, InstanceInfo>,
}

impl SceneBundle {
    pub fn frame(&self, frame_id: &str) -> Option<&ViewFrame> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    pub fn category(&self, id: InstanceId) -> &str {
        self.instance_table
            .get(&id)
            .map(|i| i.category.as_str())
            .unwrap_or("unknown")
    }

    /// Checks every bundle invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), BundleError> {
        if self.frames.len() < 3 {
            return Err(BundleError::TooFewFrames(self.frames.len()));
        }
        let mut seen = BTreeSet::new();
        for f in &self.frames {
            if !seen.insert(f.frame_id.as_str()) {
                return Err(BundleError::DuplicateFrame(f.frame_id.clone()));
            }
            validate_frame(f, &self.instance_table)?;
        }
        Ok(())
    }
}

fn validate_frame(
    f: &ViewFrame,
    table: &BTreeMap<InstanceId, InstanceInfo>,
) -> Result<(), BundleError> {
    f.camera
        .validate()
        .map_err(|(field, reason)| BundleError::MalformedCamera {
            frame: f.frame_id.clone(),
            field,
            reason,
        })?;
    let expected = f.rgb.dimensions();
    if f.depth.dimensions() != expected {
        return Err(BundleError::DimensionMismatch {
            frame: f.frame_id.clone(),
            field: "depth",
            expected,
            found: f.depth.dimensions(),
        });
    }
    if f.instances.dimensions() != expected {
        return Err(BundleError::DimensionMismatch {
            frame: f.frame_id.clone(),
            field: "instances",
            expected,
            found: f.instances.dimensions(),
        });
    }
    let mut present = BTreeSet::new();
    present.extend(f.instances.as_raw().iter().copied().filter(|&id| id != 0));
    if let Some(&id) = present.iter().find(|id| !table.contains_key(id)) {
        return Err(BundleError::UnknownInstance {
            frame: f.frame_id.clone(),
            id,
        });
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    format_version: u32,
    scene_id: String,
    frames: Vec<FrameEntry>,
    instance_table: BTreeMap<InstanceId, InstanceInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameEntry {
    frame_id: String,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    world_from_camera: Vec<f64>,
}

fn frame_paths(dir: &Path, frame_id: &str) -> [PathBuf; 3] {
    let frames = dir.join(FRAMES_DIR);
    [
        frames.join(format!("{frame_id}.rgb.png")),
        frames.join(format!("{frame_id}.inst.png")),
        frames.join(format!("{frame_id}.depth.bin")),
    ]
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads and fully validates the bundle rooted at `dir`.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<SceneBundle, BundleError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: ManifestFile =
        serde_json::from_str(&text).map_err(|source| BundleError::Manifest {
            path: manifest_path.clone(),
            source,
        })?;

    let mut frames = Vec::with_capacity(manifest.frames.len());
    for entry in &manifest.frames {
        frames.push(load_frame(dir, entry)?);
    }
    let bundle = SceneBundle {
        scene_id: manifest.scene_id,
        frames,
        instance_table: manifest.instance_table,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn load_frame(dir: &Path, entry: &FrameEntry) -> Result<ViewFrame, BundleError> {
    let frame = entry.frame_id.clone();
    if entry.world_from_camera.len() != 16 {
        return Err(BundleError::MalformedCamera {
            frame,
            field: "world_from_camera",
            reason: format!("expected 16 floats, got {}", entry.world_from_camera.len()),
        });
    }
    let camera = CameraModel {
        fx: entry.fx,
        fy: entry.fy,
        cx: entry.cx,
        cy: entry.cy,
        world_from_camera: Matrix4::from_row_slice(&entry.world_from_camera),
    };
    let [rgb_path, inst_path, depth_path] = frame_paths(dir, &frame);

    let rgb = match read_png(&frame, "rgb", &rgb_path)? {
        DynamicImage::ImageRgb8(img) => img,
        other => {
            return Err(BundleError::MalformedAsset {
                frame,
                field: "rgb",
                reason: format!("expected 8-bit RGB, got {:?}", other.color()),
            })
        }
    };
    let instances: InstanceMap = match read_png(&frame, "instances", &inst_path)? {
        DynamicImage::ImageLuma16(img) => img,
        other => {
            return Err(BundleError::MalformedAsset {
                frame,
                field: "instances",
                reason: format!("expected 16-bit grayscale, got {:?}", other.color()),
            })
        }
    };
    if !depth_path.exists() {
        return Err(BundleError::MissingAsset {
            frame,
            field: "depth",
            path: depth_path,
        });
    }
    let bytes = fs::read(&depth_path).map_err(io_err(&depth_path))?;
    let depth = decode_depth(&bytes).map_err(|reason| BundleError::MalformedAsset {
        frame: frame.clone(),
        field: "depth",
        reason,
    })?;
    Ok(ViewFrame {
        frame_id: frame,
        rgb,
        depth,
        instances,
        camera,
    })
}

fn read_png(frame: &str, field: &'static str, path: &Path) -> Result<DynamicImage, BundleError> {
    if !path.exists() {
        return Err(BundleError::MissingAsset {
            frame: frame.to_string(),
            field,
            path: path.to_path_buf(),
        });
    }
    let mut reader = ImageReader::open(path).map_err(io_err(path))?;
    reader.set_format(ImageFormat::Png);
    reader.decode().map_err(|e| BundleError::MalformedAsset {
        frame: frame.to_string(),
        field,
        reason: e.to_string(),
    })
}

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + depth.as_slice().len() * 4);
    out.extend_from_slice(&DEPTH_MAGIC);
    out.extend_from_slice(&(depth.height() as u16).to_le_bytes());
    out.extend_from_slice(&(depth.width() as u16).to_le_bytes());
    for v in depth.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap, String> {
    if bytes.len() < 8 {
        return Err(format!("file is {} bytes, shorter than the header", bytes.len()));
    }
    if bytes[..4] != DEPTH_MAGIC {
        return Err(format!("bad magic {:?}", &bytes[..4]));
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as u32;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as u32;
    let body = &bytes[8..];
    let expected = w as usize * h as usize * 4;
    if body.len() != expected {
        return Err(format!("payload is {} bytes, expected {expected} for {w}x{h}", body.len()));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(DepthMap::from_vec(w, h, data).expect("length checked above"))
}

/// Writes `bundle` under `dir` (the scene directory itself).
pub fn write_bundle(bundle: &SceneBundle, dir: impl AsRef<Path>) -> Result<(), BundleError> {
    let dir = dir.as_ref();
    let frames_dir = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;

    let manifest = ManifestFile {
        format_version: MANIFEST_VERSION,
        scene_id: bundle.scene_id.clone(),
        frames: bundle
            .frames
            .iter()
            .map(|f| FrameEntry {
                frame_id: f.frame_id.clone(),
                fx: f.camera.fx,
                fy: f.camera.fy,
                cx: f.camera.cx,
                cy: f.camera.cy,
                world_from_camera: f.camera.to_row_major().to_vec(),
            })
            .collect(),
        instance_table: bundle.instance_table.clone(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;

    for f in &bundle.frames {
        let [rgb_path, inst_path, depth_path] = frame_paths(dir, &f.frame_id);
        f.rgb
            .save_with_format(&rgb_path, ImageFormat::Png)
            .map_err(|source| image_write_err(&rgb_path, source))?;
        f.instances
            .save_with_format(&inst_path, ImageFormat::Png)
            .map_err(|source| image_write_err(&inst_path, source))?;
        let mut file = fs::File::create(&depth_path).map_err(io_err(&depth_path))?;
        file.write_all(&encode_depth(&f.depth))
            .map_err(io_err(&depth_path))?;
    }
    Ok(())
}

fn image_write_err(path: &Path, source: image::ImageError) -> BundleError {
    match source {
        image::ImageError::IoError(e) => BundleError::Io {
            path: path.to_path_buf(),
            source: e,
        },
        other => BundleError::Encode {
            path: path.to_path_buf(),
            source: other,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub area_px: u64,
    pub bbox: Rect,
}

/// Exact pixel count and tight bounding box of every nonzero instance.
pub fn instance_stats(frame: &ViewFrame) -> BTreeMap<InstanceId, InstanceStats> {
    // (area, min_x, min_y, max_x, max_y)
    let mut acc: BTreeMap<InstanceId, (u64, u32, u32, u32, u32)> = BTreeMap::new();
    let w = frame.width();
    for (i, &id) in frame.instances.as_raw().iter().enumerate() {
        if id == 0 {
            continue;
        }
        let (x, y) = (i as u32 % w, i as u32 / w);
        let e = acc.entry(id).or_insert((0, x, y, x, y));
        e.0 += 1;
        e.1 = e.1.min(x);
        e.2 = e.2.min(y);
        e.3 = e.3.max(x);
        e.4 = e.4.max(y);
    }
    acc.into_iter()
        .map(|(id, (area, x0, y0, x1, y1))| {
            (
                id,
                InstanceStats {
                    area_px: area,
                    bbox: Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
                },
            )
        })
        .collect()
}
