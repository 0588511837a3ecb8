//! Procedural posed scenes with analytic depth.
//!
//! A cylindrical room (floor, ceiling, wall) holds axis-aligned textured boxes
//! arranged around the origin. Cameras sit near the origin and pan across the
//! boxes, so neighbouring frames see shifted object sets. Every pixel is ray
//! cast, which gives exact planar depth and instance IDs.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use image::{Luma, Rgb};
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::raster::{DepthMap, InstanceMap, RgbImage};
use crate::scene_bundle::{CameraModel, InstanceId, InstanceInfo, SceneBundle, ViewFrame};

const FLOOR_Y: f64 = 1.5;
const CEILING_Y: f64 = -2.5;
const ROOM_RADIUS: f64 = 8.0;

const CATEGORIES: [&str; 8] = [
    "chair", "table", "cabinet", "lamp", "box", "sofa", "shelf", "plant",
];
const CLUTTER: [&str; 4] = ["book", "cup", "vase", "clock"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    /// Large objects placed on the main ring.
    pub objects: usize,
    /// Small objects placed closer to the cameras; they occlude and add labels.
    pub clutter: usize,
    /// Camera yaw step between consecutive frames, degrees.
    pub yaw_step_deg: f64,
    /// Per-frame camera roll drawn from ±this, degrees.
    pub max_roll_deg: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 1024,
            height: 768,
            frames: 4,
            objects: 10,
            clutter: 6,
            yaw_step_deg: 20.0,
            max_roll_deg: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SceneBox {
    id: InstanceId,
    min: Vector3<f64>,
    max: Vector3<f64>,
    color: [f64; 3],
    stripe: f64,
}

impl SceneBox {
    /// Slab test; returns (distance along ray, outward normal).
    fn hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        let mut axis = 0;
        for a in 0..3 {
            if d[a].abs() < 1e-12 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut near, mut far) = ((self.min[a] - o[a]) * inv, (self.max[a] - o[a]) * inv);
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            if near > t0 {
                t0 = near;
                axis = a;
            }
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        if t0 <= 1e-6 {
            return None;
        }
        let mut n = Vector3::zeros();
        n[axis] = -d[axis].signum();
        Some((t0, n))
    }
}

struct Room {
    boxes: Vec<SceneBox>,
    exposure: f64,
    wall_hue: [f64; 3],
}

struct Hit {
    t: f64,
    id: InstanceId,
    color: [f64; 3],
}

impl Room {
    fn trace(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Hit {
        let mut best: Option<Hit> = None;
        for b in &self.boxes {
            if let Some((t, n)) = b.hit(o, d) {
                if best.as_ref().is_none_or(|h| t < h.t) {
                    let p = o + d * t;
                    let light = Vector3::new(0.3, -0.8, -0.5).normalize();
                    let shade = 0.45 + 0.55 * n.dot(&light).max(0.0);
                    let stripe = 0.8 + 0.2 * ((p.x + p.y * 0.7 + p.z) * b.stripe).sin();
                    let k = shade * stripe;
                    best = Some(Hit {
                        t,
                        id: b.id,
                        color: [b.color[0] * k, b.color[1] * k, b.color[2] * k],
                    });
                }
            }
        }
        let mut consider = |t: f64, color: [f64; 3]| {
            if t > 1e-6 && best.as_ref().is_none_or(|h| t < h.t) {
                best = Some(Hit { t, id: 0, color });
            }
        };
        if d.y > 1e-12 {
            let t = (FLOOR_Y - o.y) / d.y;
            let p = o + d * t;
            let check = ((p.x * 2.0).floor() + (p.z * 2.0).floor()).rem_euclid(2.0);
            let g = 0.35 + 0.2 * check + 0.05 * (p.x * 5.0).sin();
            consider(t, [g * 0.9, g * 0.75, g * 0.6]);
        }
        if d.y < -1e-12 {
            let t = (CEILING_Y - o.y) / d.y;
            consider(t, [0.85, 0.85, 0.82]);
        }
        // Vertical cylinder x² + z² = R².
        let a = d.x * d.x + d.z * d.z;
        if a > 1e-12 {
            let b = 2.0 * (o.x * d.x + o.z * d.z);
            let c = o.x * o.x + o.z * o.z - ROOM_RADIUS * ROOM_RADIUS;
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let t = (-b + disc.sqrt()) / (2.0 * a);
                let p = o + d * t;
                let angle = p.z.atan2(p.x);
                let band = 0.75 + 0.25 * (angle * 24.0).sin().signum() * 0.5 + 0.1 * (p.y * 3.0).cos();
                consider(t, self.wall_hue.map(|h| h * band));
            }
        }
        best.expect("a closed room always produces a hit")
    }
}

fn orientation(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    *(Rotation3::from_axis_angle(&Vector3::y_axis(), yaw)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), pitch)
        * Rotation3::from_axis_angle(&Vector3::z_axis(), roll))
    .matrix()
}

/// Ray casts one view of the room from `camera`.
fn render(room: &Room, camera: &CameraModel, width: u32, height: u32, frame_id: String) -> ViewFrame {
    let rot = camera.rotation();
    let origin = camera.translation();
    let rows: Vec<Vec<(f32, InstanceId, [u8; 3])>> = (0..height)
        .into_par_iter()
        .map(|v| {
            (0..width)
                .map(|u| {
                    let dc = Vector3::new(
                        (u as f64 - camera.cx) / camera.fx,
                        (v as f64 - camera.cy) / camera.fy,
                        1.0,
                    );
                    let hit = room.trace(&origin, &(rot * dc));
                    // the camera-frame direction has unit z, so t is planar depth
                    let rgb = hit
                        .color
                        .map(|c| (c * room.exposure * 255.0).round().clamp(0.0, 255.0) as u8);
                    (hit.t as f32, hit.id, rgb)
                })
                .collect()
        })
        .collect();
    let mut rgb = RgbImage::new(width, height);
    let mut instances = InstanceMap::new(width, height);
    let mut depth = DepthMap::new(width, height);
    for (v, row) in rows.into_iter().enumerate() {
        for (u, (z, id, c)) in row.into_iter().enumerate() {
            rgb.put_pixel(u as u32, v as u32, Rgb(c));
            instances.put_pixel(u as u32, v as u32, Luma([id]));
            depth.set(u as u32, v as u32, z);
        }
    }
    ViewFrame {
        frame_id,
        rgb,
        depth,
        instances,
        camera: camera.clone(),
    }
}

/// Generates one scene bundle. Deterministic in `cfg`.
pub fn synth_scene(scene_id: &str, cfg: &SynthConfig) -> SceneBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let span = cfg.yaw_step_deg.to_radians() * (cfg.frames.max(1) - 1) as f64;
    let yaw0 = rng.random_range(0.0..2.0 * PI);
    // Objects cover the panned arc plus one field of view on either side.
    let arc = span + 1.4;
    let mut boxes = Vec::new();
    let mut table = BTreeMap::new();
    for k in 0..cfg.objects {
        let phi = yaw0 - 0.7 + arc * (k as f64 + 0.5) / cfg.objects.max(1) as f64;
        let r = rng.random_range(3.6..4.6);
        let half_w = rng.random_range(0.35..0.6);
        let half_d = rng.random_range(0.3..0.5);
        let h = rng.random_range(0.8..1.5);
        let c = Vector3::new(r * phi.sin(), FLOOR_Y - h / 2.0, r * phi.cos());
        let id = (k + 1) as InstanceId;
        boxes.push(SceneBox {
            id,
            min: Vector3::new(c.x - half_w, FLOOR_Y - h, c.z - half_d),
            max: Vector3::new(c.x + half_w, FLOOR_Y, c.z + half_d),
            color: [
                rng.random_range(0.25..0.95),
                rng.random_range(0.25..0.95),
                rng.random_range(0.25..0.95),
            ],
            stripe: rng.random_range(6.0..25.0),
        });
        let category = CATEGORIES[rng.random_range(0..CATEGORIES.len())];
        table.insert(
            id,
            InstanceInfo {
                category: category.to_string(),
                display_name: format!("{category} {id}"),
            },
        );
    }
    for k in 0..cfg.clutter {
        let phi = yaw0 - 0.5 + rng.random_range(0.0..arc - 0.4);
        let r = rng.random_range(2.2..3.0);
        let s = rng.random_range(0.12..0.22);
        let h = rng.random_range(0.2..0.45);
        let c = Vector3::new(r * phi.sin(), 0.0, r * phi.cos());
        let id = (cfg.objects + k + 1) as InstanceId;
        boxes.push(SceneBox {
            id,
            min: Vector3::new(c.x - s, FLOOR_Y - h, c.z - s),
            max: Vector3::new(c.x + s, FLOOR_Y, c.z + s),
            color: [
                rng.random_range(0.2..1.0),
                rng.random_range(0.2..1.0),
                rng.random_range(0.2..1.0),
            ],
            stripe: rng.random_range(20.0..40.0),
        });
        let category = CLUTTER[rng.random_range(0..CLUTTER.len())];
        table.insert(
            id,
            InstanceInfo {
                category: category.to_string(),
                display_name: format!("{category} {id}"),
            },
        );
    }
    let room = Room {
        boxes,
        exposure: rng.random_range(0.55..1.15),
        wall_hue: [
            rng.random_range(0.5..0.9),
            rng.random_range(0.5..0.9),
            rng.random_range(0.5..0.9),
        ],
    };

    let (w, h) = (cfg.width, cfg.height);
    let fx = 0.85 * w as f64;
    let mut frames = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        let yaw = yaw0 + cfg.yaw_step_deg.to_radians() * i as f64 + rng.random_range(-0.03..0.03);
        let pitch = -rng.random_range(0.12..0.22);
        let roll = rng.random_range(-cfg.max_roll_deg..=cfg.max_roll_deg).to_radians();
        let t = Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.15..0.15),
            rng.random_range(-0.3..0.3),
        );
        let camera = CameraModel::from_pose(
            fx,
            fx,
            w as f64 / 2.0 - 0.5,
            h as f64 / 2.0 - 0.5,
            orientation(yaw, pitch, roll),
            t,
        );
        frames.push(render(&room, &camera, w, h, format!("f{i:02}")));
    }
    SceneBundle {
        scene_id: scene_id.to_string(),
        frames,
        instance_table: table,
    }
}

/// A corpus of `n` scenes with seeds derived from `base.seed`.
pub fn synth_corpus(n: usize, base: &SynthConfig) -> Vec<SceneBundle> {
    (0..n)
        .map(|i| {
            let cfg = SynthConfig {
                seed: base.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64),
                ..base.clone()
            };
            synth_scene(&format!("scene{i:03}"), &cfg)
        })
        .collect()
}

/// Black frame at unit depth with an identity-pose camera and no instances.
pub fn blank_frame(frame_id: &str, width: u32, height: u32) -> ViewFrame {
    ViewFrame {
        frame_id: frame_id.to_string(),
        rgb: RgbImage::new(width, height),
        depth: DepthMap::from_fn(width, height, |_, _| 1.0),
        instances: InstanceMap::new(width, height),
        camera: CameraModel::from_pose(
            width as f64,
            width as f64,
            width as f64 / 2.0,
            height as f64 / 2.0,
            Matrix3::identity(),
            Vector3::zeros(),
        ),
    }
}
