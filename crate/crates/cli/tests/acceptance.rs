//! Acceptance suite. Every criterion is checked against an oracle written
//! here, independently of the library code it exercises, and reported as one
//! PASS/FAIL line. Criteria run one after another so timing measurements do
//! not compete for cores.
//!
//! A scaling shortfall on a machine with fewer than eight cores is reported
//! as FAIL but does not fail the test unless `FORGE_ACCEPTANCE_STRICT=1`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use forge_core::benchmark_build::{expected_random_accuracy, tertile_bins};
use forge_core::compositor::{make_pair, PasteCount};
use forge_core::eval_harness::ensemble::{ensemble_vote, vote_with_weights, ModelVotes};
use forge_core::eval_harness::responders::UniformGuesser;
use forge_core::eval_harness::runner::{run_eval, RunOptions};
use forge_core::eval_harness::stats::{kendall_tau_b, pearson};
use forge_core::eval_harness::score::Report;
use forge_core::fixtures::manifest_n;
use forge_core::geometry::{camera_roll_deg, reproject_mask, Reprojector};
use forge_core::inpaint::{inpaint_native, inpaint_native_traced, InpaintParams};
use forge_core::labeling::{label_view, select_from_areas, LabelConfig};
use forge_core::pipeline::{measure_throughput, GenerateConfig};
use forge_core::synth::{synth_corpus, synth_scene, SynthConfig};
use forge_core::triplet_select::{enumerate_candidates, sample_passing_across};
use forge_core::{
    BenchmarkManifest, CameraModel, DepthMap, InstanceId, PixelMask, Rect, SceneBundle, SelectionConfig, Variant,
    ViewFrame,
};
use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

/// Writes to the process stdout directly; libtest captures `println!` but
/// these lines belong in every run's output.
macro_rules! report {
    ($($arg:tt)*) => {{
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, $($arg)*);
        let _ = out.flush();
    }};
}

enum Outcome {
    Pass(String),
    Fail(String),
    /// Failed only because the host lacks the cores the criterion assumes.
    HardwareBound(String),
}

type Check = fn() -> Outcome;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within_budget(start: Instant, budget: Duration, mut out: Outcome) -> Outcome {
    let took = start.elapsed();
    if took > budget {
        let detail = match out {
            Outcome::Pass(d) | Outcome::Fail(d) | Outcome::HardwareBound(d) => d,
        };
        out = Outcome::Fail(format!("{detail}; took {took:.1?}, budget {budget:?}"));
    } else if let Outcome::Pass(d) = out {
        out = Outcome::Pass(format!("{d}; {took:.2?}"));
    }
    out
}

fn rotation(rng: &mut impl Rng, max_angle: f64) -> Matrix3<f64> {
    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0) + 1e-3,
    ));
    *Rotation3::from_axis_angle(&axis, rng.random_range(-max_angle..max_angle)).matrix()
}

/// World point of pixel (u, v) at planar depth z, then its pixel in `dst`.
fn closed_form(src: &CameraModel, dst: &CameraModel, u: f64, v: f64, z: f64) -> Option<(f64, f64)> {
    let ray = Vector3::new((u - src.cx) / src.fx, (v - src.cy) / src.fy, 1.0);
    let world = src.rotation() * (ray * z) + src.translation();
    let p = dst.rotation().transpose() * (world - dst.translation());
    (p.z > 1e-9).then(|| (dst.fx * p.x / p.z + dst.cx, dst.fy * p.y / p.z + dst.cy))
}

// ---------------------------------------------------------------- geometry

fn geometry() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_px = 0.0f64;
    let mut points = 0usize;

    // Rendered box scenes: depth comes from the ray caster, not from a formula
    // shared with the reprojector.
    for seed in 0..4 {
        let b = synth_scene(
            "g",
            &SynthConfig {
                width: 160,
                height: 120,
                frames: 3,
                seed,
                ..Default::default()
            },
        );
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            let (a, c) = (&b.frames[i], &b.frames[j]);
            let xfer = Reprojector::new(&a.camera, &c.camera);
            for _ in 0..500 {
                let (u, v) = (rng.random_range(0..a.width()), rng.random_range(0..a.height()));
                let Some(z) = a.depth.valid(u, v) else { continue };
                let got = xfer.transfer(u as f64, v as f64, z);
                let want = closed_form(&a.camera, &c.camera, u as f64, v as f64, z);
                match (got, want) {
                    (Some(g), Some(w)) => {
                        worst_px = worst_px.max((g.0 - w.0).abs().max((g.1 - w.1).abs()));
                        points += 1;
                    }
                    (None, None) => {}
                    _ => return Outcome::Fail(format!("visibility disagreement at ({u}, {v})")),
                }
            }
        }
    }
    // Random posed cameras with random depths.
    for _ in 0..2000 {
        let a = CameraModel::from_pose(300.0, 310.0, 160.0, 120.0, rotation(&mut rng, 3.0), Vector3::new(rng.random(), rng.random(), rng.random()));
        let c = CameraModel::from_pose(280.0, 280.0, 150.0, 110.0, rotation(&mut rng, 3.0), Vector3::new(rng.random(), rng.random(), rng.random()));
        let (u, v, z) = (rng.random_range(0.0..320.0), rng.random_range(0.0..240.0), rng.random_range(0.5..20.0));
        if let (Some(g), Some(w)) = (Reprojector::new(&a, &c).transfer(u, v, z), closed_form(&a, &c, u, v, z)) {
            // tolerance is in pixels; skip grazing points that land far off-image
            if w.0.abs() < 1e4 && w.1.abs() < 1e4 {
                worst_px = worst_px.max((g.0 - w.0).abs().max((g.1 - w.1).abs()));
                points += 1;
            }
        }
    }

    // Mask area under a forward move of dz toward a fronto-parallel plane at z.
    // Forward splatting leaves gaps when magnifying, so the mask is carried
    // from the near camera to the far one and the inverse ratio compared.
    let (w, h) = (320u32, 240u32);
    let far = CameraModel::from_pose(260.0, 260.0, 159.5, 119.5, Matrix3::identity(), Vector3::zeros());
    let mut worst_area = 0.0f64;
    for &(z, dz) in &[(4.0, 0.5), (4.0, 1.0), (5.0, 2.0), (3.0, 0.75), (6.0, 3.0)] {
        let near = CameraModel::from_pose(260.0, 260.0, 159.5, 119.5, Matrix3::identity(), Vector3::new(0.0, 0.0, dz));
        let mask = PixelMask::from_rect(w, h, Rect::new(60, 20, 200, 200));
        let depth = DepthMap::from_fn(w, h, |_, _| (z - dz) as f32);
        let out = reproject_mask(&mask, &depth, &near, &far, (w, h));
        let ratio = mask.area() as f64 / out.area() as f64;
        let expected = (z / (z - dz)).powi(2);
        worst_area = worst_area.max((ratio - expected).abs() / expected);
    }

    // Roll of a constructed relative rotation: yaw · pitch · roll.
    let mut worst_roll = 0.0f64;
    for _ in 0..1000 {
        let base = rotation(&mut rng, 3.0);
        let roll = rng.random_range(-179.0..179.0f64);
        let yaw = rng.random_range(-3.0..3.0);
        let pitch = rng.random_range(-1.4..1.4);
        let rel = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), pitch)
            * Rotation3::from_axis_angle(&Vector3::z_axis(), roll.to_radians());
        let a = CameraModel::from_pose(100.0, 100.0, 50.0, 50.0, base, Vector3::new(1.0, 2.0, 3.0));
        let b = CameraModel::from_pose(100.0, 100.0, 50.0, 50.0, base * rel.matrix(), Vector3::new(-1.0, 0.0, 2.0));
        worst_roll = worst_roll.max((camera_roll_deg(&a, &b) - roll).abs());
    }

    let out = check(
        worst_px <= 1e-6 && worst_area <= 0.02 && worst_roll <= 1e-9 && points > 5000,
        format!(
            "{points} points, max reprojection error {worst_px:.2e} px; max area-ratio error {:.2}%; max roll error {worst_roll:.2e} deg",
            worst_area * 100.0
        ),
    );
    within_budget(start, Duration::from_secs(10), out)
}

// ------------------------------------------------------- triplet selection

fn pixel_counts(f: &ViewFrame) -> BTreeMap<InstanceId, u64> {
    let mut m = BTreeMap::new();
    for y in 0..f.height() {
        for x in 0..f.width() {
            let id = f.instance_at(x, y);
            if id != 0 {
                *m.entry(id).or_insert(0) += 1;
            }
        }
    }
    m
}

fn oracle_projected_fraction(o: InstanceId, v3: &ViewFrame, v2: &ViewFrame) -> Option<f64> {
    let target = pixel_counts(v2).get(&o).copied().unwrap_or(0);
    if target == 0 {
        return None;
    }
    let mut hit = HashSet::new();
    for y in 0..v3.height() {
        for x in 0..v3.width() {
            if v3.instance_at(x, y) != o {
                continue;
            }
            let z = v3.depth.get(x, y) as f64;
            if !(z.is_finite() && z > 0.0) {
                continue;
            }
            if let Some((px, py)) = closed_form(&v3.camera, &v2.camera, x as f64, y as f64, z) {
                let (xi, yi) = ((px + 0.5).floor(), (py + 0.5).floor());
                if xi >= 0.0 && yi >= 0.0 && xi < v2.width() as f64 && yi < v2.height() as f64 {
                    hit.insert((xi as u32, yi as u32));
                }
            }
        }
    }
    Some(hit.len() as f64 / target as f64)
}

type Key = (String, String, String, InstanceId);

fn brute_force_pass_set(b: &SceneBundle, cfg: &SelectionConfig) -> BTreeSet<Key> {
    let counts: Vec<BTreeMap<InstanceId, u64>> = b.frames.iter().map(pixel_counts).collect();
    let visible = |k: usize| -> BTreeSet<InstanceId> {
        counts[k].iter().filter(|(_, &n)| n >= cfg.visibility_floor_px).map(|(&id, _)| id).collect()
    };
    let iou = |a: &BTreeSet<InstanceId>, c: &BTreeSet<InstanceId>| {
        let union = a.union(c).count();
        if union == 0 {
            0.0
        } else {
            a.intersection(c).count() as f64 / union as f64
        }
    };
    let mut ids: BTreeSet<InstanceId> = b.instance_table.keys().copied().collect();
    for c in &counts {
        ids.extend(c.keys());
    }
    let n = b.frames.len();
    let mut out = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if i == j || j == k || i == k {
                    continue;
                }
                let (v1, v2, v3) = (&b.frames[i], &b.frames[j], &b.frames[k]);
                for &o in &ids {
                    let px = [i, j, k].map(|f| counts[f].get(&o).copied().unwrap_or(0));
                    let visible_all = px.iter().all(|&a| a >= cfg.visibility_floor_px.max(1));
                    let ov12 = iou(&visible(i), &visible(j));
                    let ov23 = iou(&visible(j), &visible(k));
                    let frac = px[1] as f64 / v2.pixel_count() as f64;
                    let proj = oracle_projected_fraction(o, v3, v2);
                    if visible_all
                        && ov12 <= cfg.overlap_max
                        && ov23 <= cfg.overlap_max
                        && frac >= cfg.area_min
                        && frac <= cfg.area_max
                        && proj.is_some_and(|p| p >= cfg.proj_area_min)
                    {
                        out.insert((v1.frame_id.clone(), v2.frame_id.clone(), v3.frame_id.clone(), o));
                    }
                }
            }
        }
    }
    out
}

fn triplet_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let cfg = SelectionConfig {
        max_triples: usize::MAX,
        per_scene_cap: None,
        ..Default::default()
    };
    let (mut bundles, mut agree, mut passes) = (0, 0, 0);
    let mut first_mismatch = None;
    for s in 0..60u64 {
        let objects = rng.random_range(1..=6);
        let scfg = SynthConfig {
            width: rng.random_range(80..=128),
            height: rng.random_range(60..=96),
            frames: rng.random_range(3..=5),
            objects,
            clutter: rng.random_range(0..=(8 - objects).min(3)),
            yaw_step_deg: rng.random_range(8.0..40.0),
            max_roll_deg: 5.0,
            seed: 1000 + s,
        };
        let b = synth_scene(&format!("micro{s}"), &scfg);
        let got: BTreeSet<Key> = enumerate_candidates(&b, &cfg)
            .into_iter()
            .filter(|c| c.verdict.passed())
            .map(|c| (c.v1_id, c.v2_id, c.v3_id, c.object_id))
            .collect();
        let want = brute_force_pass_set(&b, &cfg);
        bundles += 1;
        passes += want.len();
        if got == want {
            agree += 1;
        } else if first_mismatch.is_none() {
            let extra: Vec<_> = got.symmetric_difference(&want).take(3).collect();
            first_mismatch = Some(format!("{}: {extra:?}", b.scene_id));
        }
    }
    let out = check(
        agree == bundles && passes > 0,
        format!(
            "{agree}/{bundles} micro-bundles agree, {passes} passing candidates{}",
            first_mismatch.map(|m| format!("; first mismatch {m}")).unwrap_or_default()
        ),
    );
    within_budget(start, Duration::from_secs(60), out)
}

// ------------------------------------------------------------- compositor

fn compositor_contracts() -> Outcome {
    let bundles = synth_corpus(
        3,
        &SynthConfig {
            width: 320,
            height: 240,
            seed: 4,
            ..Default::default()
        },
    );
    let sel = SelectionConfig {
        per_scene_cap: Some(2),
        ..Default::default()
    };
    let cands = sample_passing_across(&bundles, &sel, 6).candidates;
    if cands.is_empty() {
        return Outcome::Fail("no candidates in the corpus".into());
    }
    let variants = [
        (Variant::Inconsistent, 0.05),
        (Variant::SelfPaste, 0.05),
        (Variant::NoChange, 0.05),
        (Variant::MultiSelfPaste(PasteCount::N(3)), 0.05),
        (Variant::MultiSelfPaste(PasteCount::All), 0.05),
        (Variant::ExpansionSweep, 0.5),
    ];
    let (mut pairs, mut bad) = (0, Vec::new());
    for c in &cands {
        let bundle = bundles.iter().find(|b| b.scene_id == c.scene_id).unwrap();
        let v2 = bundle.frame(&c.v2_id).unwrap();
        for &(variant, expansion) in &variants {
            let recipe = GenerateConfig {
                variant,
                expansion,
                ..Default::default()
            }
            .recipe(c);
            let pair = match make_pair(bundle, &recipe) {
                Ok(p) => p,
                Err(e) => {
                    bad.push(format!("{variant}: {e}"));
                    continue;
                }
            };
            pairs += 1;
            let out = &pair.view2_edited;
            let mut violations = [0usize; 4];
            for y in 0..v2.height() {
                for x in 0..v2.width() {
                    let same = out.get_pixel(x, y) == v2.rgb.get_pixel(x, y);
                    let id = v2.instance_at(x, y);
                    let inside = pair.inpaint_region.get(x, y);
                    if !inside && !same {
                        violations[0] += 1;
                    }
                    if inside && id != 0 && id != c.object_id && !same {
                        violations[1] += 1;
                    }
                    if variant == Variant::SelfPaste && id == c.object_id && !same {
                        violations[2] += 1;
                    }
                    if variant == Variant::NoChange && !same {
                        violations[3] += 1;
                    }
                }
            }
            if variant == Variant::NoChange && !pair.inpaint_region.is_empty() {
                violations[3] += 1;
            }
            if violations.iter().any(|&v| v > 0) {
                bad.push(format!("{} {variant}: outside/occluder/self/no_change = {violations:?}", pair.pair_id));
            }
        }
    }
    check(
        bad.is_empty(),
        format!(
            "{pairs} pairs over {} candidates x {} variants{}",
            cands.len(),
            variants.len(),
            bad.first().map(|b| format!("; {} bad, first: {b}", bad.len())).unwrap_or_default()
        ),
    )
}

// ------------------------------------------------------------- inpainting

/// A 7x7 window with no hole pixel exists; otherwise the case is ill-posed.
fn has_clean_patch(hole: &PixelMask) -> bool {
    let (w, h) = hole.dimensions();
    (0..h.saturating_sub(6)).any(|y| (0..w.saturating_sub(6)).any(|x| (0..7).all(|j| (0..7).all(|i| !hole.get(x + i, y + j)))))
}

fn random_case(rng: &mut ChaCha8Rng, max_side: u32) -> (RgbImage, PixelMask) {
    loop {
        let case = random_case_once(rng, max_side);
        if has_clean_patch(&case.1) {
            return case;
        }
    }
}

fn random_case_once(rng: &mut ChaCha8Rng, max_side: u32) -> (RgbImage, PixelMask) {
    let (w, h) = (rng.random_range(12..=max_side), rng.random_range(12..=max_side));
    let (fx, fy, phase) = (rng.random_range(0.05..0.5), rng.random_range(0.05..0.5), rng.random_range(0.0..6.0));
    let noise = rng.random_range(0..40u8);
    let img = RgbImage::from_fn(w, h, |x, y| {
        let s = ((x as f64 * fx + phase).sin() * 0.5 + 0.5) * 180.0;
        let t = ((y as f64 * fy).cos() * 0.5 + 0.5) * 180.0;
        let n = if noise > 0 { (x * 31 + y * 17) as u8 % noise } else { 0 };
        Rgb([s as u8 + n, t as u8, ((s + t) / 2.0) as u8 + n / 2])
    });
    let mut hole = PixelMask::new(w, h);
    for _ in 0..rng.random_range(1..=3) {
        let rw = rng.random_range(1..=w / 2);
        let rh = rng.random_range(1..=h / 2);
        let (x0, y0) = (rng.random_range(0..=w - rw), rng.random_range(0..=h - rh));
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                hole.set(x, y, true);
            }
        }
    }
    if rng.random_bool(0.3) {
        for _ in 0..(w * h / 20) {
            hole.set(rng.random_range(0..w), rng.random_range(0..h), true);
        }
    }
    (img, hole)
}

fn inpainting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut failures = Vec::new();
    for case in 0..100 {
        let (img, hole) = random_case(&mut rng, 64);
        let params = InpaintParams {
            rng_seed: rng.random(),
            ..Default::default()
        };
        let a = match inpaint_native(&img, &hole, &params) {
            Ok(a) => a,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let b = inpaint_native(&img, &hole, &params).unwrap();
        if a.as_raw() != b.as_raw() {
            failures.push(format!("case {case}: runs differ"));
        }
        let leaked = (0..img.height())
            .flat_map(|y| (0..img.width()).map(move |x| (x, y)))
            .filter(|&(x, y)| !hole.get(x, y) && a.get_pixel(x, y) != img.get_pixel(x, y))
            .count();
        if leaked > 0 {
            failures.push(format!("case {case}: {leaked} pixels outside the hole changed"));
        }
    }
    let mut iterations = 0;
    for case in 0..10 {
        let (img, hole) = random_case(&mut rng, 96);
        let (_, trace) = inpaint_native_traced(&img, &hole, &InpaintParams::default()).unwrap();
        for level in &trace.levels {
            iterations += level.energies.len().saturating_sub(1);
            if let Some(k) = level.energies.windows(2).position(|e| e[1] > e[0]) {
                failures.push(format!(
                    "energy case {case}, level {}x{}: {} -> {} at iteration {}",
                    level.width,
                    level.height,
                    level.energies[k],
                    level.energies[k + 1],
                    k + 1
                ));
            }
        }
    }
    check(
        failures.is_empty() && iterations > 0,
        format!(
            "100 random cases bit-exact outside the hole and deterministic; energy monotone over {iterations} iterations on 10 cases{}",
            failures.first().map(|f| format!("; {} failures, first: {f}", failures.len())).unwrap_or_default()
        ),
    )
}

// --------------------------------------------------------------- labeling

/// Threshold halving until enough objects qualify, then force the answer
/// into a largest-first top 26.
fn label_oracle(areas: &[(InstanceId, u64)], answer: InstanceId, scale: f64, cfg: &LabelConfig) -> Option<Vec<InstanceId>> {
    let floor = cfg.floor_px * scale;
    let answer_area = areas.iter().find(|a| a.0 == answer).map_or(0, |a| a.1);
    if (answer_area as f64) < floor {
        return None;
    }
    let mut sorted = areas.to_vec();
    sorted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut t = cfg.base_threshold_px * scale;
    let eligible = loop {
        let eff = t.max(floor);
        let e: Vec<(InstanceId, u64)> = sorted.iter().copied().filter(|&(_, a)| a as f64 >= eff).collect();
        if e.len() >= cfg.min_labels || eff <= floor {
            break e;
        }
        t /= 2.0;
    };
    let mut top: Vec<(InstanceId, u64)> = eligible.iter().copied().take(cfg.max_labels).collect();
    if !top.iter().any(|e| e.0 == answer) {
        if top.len() == cfg.max_labels {
            top.pop();
        }
        top.push((answer, answer_area));
        top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    }
    Some(top.into_iter().map(|e| e.0).collect())
}

fn labeling() -> Outcome {
    let cfg = LabelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let dims = [(1024u32, 768u32), (640, 480), (320, 240), (2048, 1536)];
    let (mut mismatches, mut forced, mut rejected) = (Vec::new(), 0, 0);
    for case in 0..1000 {
        let (w, h) = dims[rng.random_range(0..dims.len())];
        let scale = (w * h) as f64 / (1024.0 * 768.0);
        let floor = cfg.floor_px * scale;
        let n = rng.random_range(1..=60u16);
        let pool: Vec<u64> = (0..5).map(|_| rng.random_range(0..40_000)).collect();
        let mut areas: Vec<(InstanceId, u64)> = (1..=n)
            .map(|id| {
                let a = if rng.random_bool(0.2) {
                    pool[rng.random_range(0..pool.len())]
                } else {
                    rng.random_range(0..(40_000.0 * scale) as u64 + 1)
                };
                (id, a)
            })
            .collect();
        let answer = rng.random_range(1..=n);
        if n > 30 && rng.random_bool(0.5) {
            // small but labelable answers exercise the force-include path
            areas[answer as usize - 1].1 = floor.ceil() as u64 + rng.random_range(0..50);
        }
        let map: BTreeMap<InstanceId, u64> = areas.iter().copied().collect();
        let got = select_from_areas(&map, answer, w, h, &cfg).ok();
        let want = label_oracle(&areas, answer, scale, &cfg);
        if let Some(ids) = &got {
            let answer_rank = {
                let mut s = areas.clone();
                s.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                s.iter().position(|e| e.0 == answer).unwrap()
            };
            forced += usize::from(answer_rank >= cfg.max_labels);
            let ok = ids.contains(&answer) && ids.len() <= 26 && ids.iter().all(|id| map[id] as f64 >= floor);
            if !ok {
                mismatches.push(format!("case {case}: invariant broken"));
            }
        } else {
            rejected += 1;
        }
        if got != want {
            mismatches.push(format!("case {case}: {got:?} vs {want:?}"));
        }
    }

    // The same invariants on rendered frames.
    let mut frames = 0;
    for b in synth_corpus(2, &SynthConfig { width: 320, height: 240, frames: 3, objects: 10, clutter: 20, seed: 9, ..Default::default() }) {
        for f in &b.frames {
            let floor = cfg.scaled_floor(f.width(), f.height());
            for (&id, &area) in &pixel_counts(f) {
                if (area as f64) < floor {
                    continue;
                }
                frames += 1;
                match label_view(f, id, &cfg) {
                    Ok(a) => {
                        let counts = pixel_counts(f);
                        let ok = a.letter_of(id).is_some()
                            && a.len() <= 26
                            && a.entries.iter().all(|e| counts[&e.object_id] as f64 >= floor);
                        if !ok {
                            mismatches.push(format!("{} object {id}: invariant broken", f.frame_id));
                        }
                    }
                    Err(e) => mismatches.push(format!("{} object {id}: {e}", f.frame_id)),
                }
            }
        }
    }
    check(
        mismatches.is_empty() && forced > 0,
        format!(
            "1000 area vectors match the sorting oracle ({forced} force-includes, {rejected} below floor); {frames} rendered answers labeled{}",
            mismatches.first().map(|m| format!("; {} mismatches, first: {m}", mismatches.len())).unwrap_or_default()
        ),
    )
}

// ------------------------------------------------------------- statistics

fn oracle_vote(weights: &[f64], letters: &[Option<char>]) -> Option<char> {
    let mut best: Option<(char, f64)> = None;
    let totals: Vec<(char, f64)> = ('A'..='Z')
        .filter_map(|c| {
            let votes: Vec<f64> = weights.iter().zip(letters).filter(|(_, l)| **l == Some(c)).map(|(w, _)| *w).collect();
            (!votes.is_empty()).then(|| (c, votes.iter().sum()))
        })
        .collect();
    let max = totals.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    for &(c, s) in &totals {
        if s >= max - 1e-9 * max.abs() && best.is_none() {
            best = Some((c, s));
        }
    }
    best.map(|b| b.0)
}

fn statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let mut problems = Vec::new();
    let alphabet = [Some('A'), Some('B'), Some('C'), None];

    // Every vote combination for 1..=5 models, packed into items of at most 20.
    let mut configs = 0;
    let mut items_checked = 0;
    for m in 1..=5usize {
        let combos: Vec<Vec<Option<char>>> = (0..alphabet.len().pow(m as u32))
            .map(|mut k| {
                (0..m)
                    .map(|_| {
                        let l = alphabet[k % alphabet.len()];
                        k /= alphabet.len();
                        l
                    })
                    .collect()
            })
            .collect();
        for chunk in combos.chunks(20) {
            for _ in 0..3 {
                configs += 1;
                let acc: Vec<f64> = (0..m).map(|_| rng.random_range(1..=10) as f64 / 10.0).collect();
                let base = (0..m).min_by(|&a, &b| acc[a].total_cmp(&acc[b])).unwrap();
                let pair_ids: Vec<String> = (0..chunk.len()).map(|i| format!("q{i:02}")).collect();
                let models: Vec<ModelVotes> = (0..m)
                    .map(|j| ModelVotes {
                        model: format!("m{j}"),
                        accuracy: acc[j],
                        letters: pair_ids.iter().zip(chunk).map(|(id, v)| (id.clone(), v[j])).collect(),
                    })
                    .collect();
                let got = ensemble_vote(&models, &format!("m{base}"), &pair_ids).unwrap();
                let weights: Vec<f64> = acc.iter().map(|a| a / acc[base]).collect();
                for (id, votes) in pair_ids.iter().zip(chunk) {
                    items_checked += 1;
                    let want = oracle_vote(&weights, votes);
                    if got[id] != want {
                        problems.push(format!("ensemble {votes:?} w={weights:?}: {:?} vs {want:?}", got[id]));
                    }
                }
                for c in [0.1, 1.0, 10.0] {
                    let scaled: Vec<f64> = weights.iter().map(|w| w * c).collect();
                    if vote_with_weights(&models, &scaled, &pair_ids) != got {
                        problems.push(format!("argmax changed under scaling by {c}"));
                    }
                }
            }
        }
    }

    let mut worst_corr = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(2..60);
        let tied = case % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| if tied { rng.random_range(0..5) as f64 } else { rng.random_range(-1.0..1.0) };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();

        let nf = n as f64;
        let (mx, my) = (x.iter().sum::<f64>() / nf, y.iter().sum::<f64>() / nf);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let r = (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt());

        let (mut nc, mut nd, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let dx = (x[i] - x[j]).partial_cmp(&0.0).unwrap() as i64;
                let dy = (y[i] - y[j]).partial_cmp(&0.0).unwrap() as i64;
                if dx == 0 {
                    tx += 1;
                }
                if dy == 0 {
                    ty += 1;
                }
                match dx * dy {
                    1 => nc += 1,
                    -1 => nd += 1,
                    _ => {}
                }
            }
        }
        let n0 = (n * (n - 1) / 2) as i64;
        let denom = ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt();
        let tau = (denom > 0.0).then(|| (nc - nd) as f64 / denom);

        for (name, got, want) in [("pearson", pearson(&x, &y), r), ("kendall", kendall_tau_b(&x, &y), tau)] {
            match (got, want) {
                (Some(g), Some(w)) => worst_corr = worst_corr.max((g - w).abs()),
                (None, None) => {}
                _ => problems.push(format!("{name} case {case}: {got:?} vs {want:?}")),
            }
        }
    }
    if worst_corr > 1e-12 {
        problems.push(format!("correlation error {worst_corr:.2e}"));
    }

    let mut worst_spread = 0;
    for case in 0..1000 {
        let n = rng.random_range(0..300);
        let distinct = rng.random_range(1..20);
        let values: Vec<f64> = (0..n)
            .map(|_| if case % 3 == 0 { rng.random_range(0..distinct) as f64 } else { rng.random() })
            .collect();
        let t = tertile_bins(&values);
        let p = t.populations();
        let spread = p.iter().max().unwrap() - p.iter().min().unwrap();
        worst_spread = worst_spread.max(spread);
        if spread > 1 {
            problems.push(format!("tertiles case {case}: populations {p:?}"));
        }
        let max_of = |b: u8| values.iter().zip(&t.bins).filter(|(_, &k)| k == b).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
        let min_of = |b: u8| values.iter().zip(&t.bins).filter(|(_, &k)| k == b).map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
        if max_of(0) > min_of(1) || max_of(1) > min_of(2) {
            problems.push(format!("tertiles case {case}: bins out of order"));
        }
    }

    check(
        problems.is_empty(),
        format!(
            "ensemble exact on {items_checked} items in {configs} configurations, scale-invariant; correlation error {worst_corr:.1e}; tertile spread <= {worst_spread}{}",
            problems.first().map(|p| format!("; {} problems, first: {p}", problems.len())).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------- random guesser

fn random_guesser() -> Outcome {
    let start = Instant::now();
    let manifest = manifest_n(12_000);
    let trials = run_eval(&manifest, &UniformGuesser::new(97), &RunOptions::default()).unwrap();
    let correct = trials.iter().filter(|t| t.correct).count();
    let n = trials.len();
    let acc = correct as f64 / n as f64;
    let expected = expected_random_accuracy(&manifest.items);
    let var: f64 = manifest.items.iter().map(|i| {
        let p = 1.0 / i.num_labels as f64;
        p * (1.0 - p)
    }).sum();
    let sigma = var.sqrt() / n as f64;
    let z = (acc - expected) / sigma;
    let out = check(
        n >= 10_000 && z.abs() <= 3.0,
        format!("{n} trials, accuracy {acc:.4} vs expected {expected:.4} ({z:+.2} sigma)"),
    );
    within_budget(start, Duration::from_secs(30), out)
}

// ------------------------------------------------------------ end to end

fn forge(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .output()
        .map_err(|e| format!("spawn forge: {e}"))?;
    if !out.status.success() {
        return Err(format!("forge {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn mock_end_to_end(dir: &Path) -> Result<String, String> {
    let (bundles, cands, pairs) = (dir.join("bundles"), dir.join("candidates.jsonl"), dir.join("pairs"));
    forge(&["synth", "--scenes", "8", "--width", "320", "--height", "240", "--seed", "2", "--out", p(&bundles)])?;
    forge(&["select", "--bundle", p(&bundles), "--n", "20", "--per-scene-cap", "4", "--out", p(&cands)])?;
    forge(&["generate", "--candidates", p(&cands), "--bundles", p(&bundles), "--out", p(&pairs)])?;
    forge(&["build-manifest", "--pairs", p(&pairs)])?;
    let manifest_path = pairs.join("manifest.jsonl");
    let trials = dir.join("trials.jsonl");
    for mock in ["key", "always-A"] {
        forge(&["eval", "--manifest", p(&manifest_path), "--mock", mock, "--out", p(&trials)])?;
    }
    let reports: Vec<Report> =
        serde_json::from_str(&forge(&["report", "--trials", p(&trials), "--manifest", p(&manifest_path), "--json"])?)
            .map_err(|e| e.to_string())?;

    let manifest = BenchmarkManifest::load(&manifest_path).map_err(|e| e.to_string())?;
    let keys: Vec<Value> = std::fs::read_to_string(pairs.join("keys.jsonl"))
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let a_fraction = keys.iter().filter(|k| k["answer_letter"] == "A").count() as f64 / keys.len() as f64;
    let acc = |m: &str| reports.iter().find(|r| r.model == m).map(|r| (r.overall.accuracy, r.overall.n));
    let (key_acc, key_n) = acc("mock-key").ok_or("no mock-key report")?;
    let (a_acc, a_n) = acc("always-A").ok_or("no always-A report")?;
    let detail = format!(
        "{} pairs; key mock {:.1}% on {key_n}; always-A {:.1}% on {a_n} vs {:.1}% of keys answered A",
        manifest.items.len(),
        key_acc * 100.0,
        a_acc * 100.0,
        a_fraction * 100.0
    );
    let ok = manifest.items.len() == 20
        && keys.len() == 20
        && key_n == 20
        && a_n == 20
        && key_acc == 1.0
        && (a_acc - a_fraction).abs() < 1e-12;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sweep_schema(dir: &Path) -> Result<String, String> {
    let (bundles, cands) = (dir.join("bundles"), dir.join("candidates.jsonl"));
    let small = dir.join("sweep_candidates.jsonl");
    let text = std::fs::read_to_string(&cands).map_err(|e| e.to_string())?;
    std::fs::write(&small, text.lines().take(3).map(|l| format!("{l}\n")).collect::<String>()).unwrap();

    let mut expected: Vec<(String, String, f64)> = [0, 5, 10, 25, 50, 75, 100]
        .iter()
        .map(|&pct| (format!("expansion_{pct:03}"), "expansion_sweep".to_string(), pct as f64 / 100.0))
        .collect();
    for k in ["1", "3", "5", "10", "all"] {
        expected.push((format!("multi_self_paste_{k}"), format!("multi_self_paste:{k}"), 0.05));
    }
    for sweep in ["expansion", "self-paste"] {
        let out = dir.join(format!("sweep_{sweep}"));
        forge(&["generate", "--candidates", p(&small), "--bundles", p(&bundles), "--sweep", sweep, "--out", p(&out)])?;
    }

    let mut seen_ids = BTreeSet::new();
    let mut contents = BTreeSet::new();
    let mut items = 0;
    for (name, variant, expansion) in &expected {
        let sweep = if name.starts_with("expansion") { "expansion" } else { "self-paste" };
        let path = dir.join(format!("sweep_{sweep}")).join(name).join("manifest.jsonl");
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let m = BenchmarkManifest::from_jsonl(&text).map_err(|e| e.to_string())?;
        if m.items.is_empty() {
            return Err(format!("{name}: empty manifest"));
        }
        if m.header.item_count != m.items.len() {
            return Err(format!("{name}: header count {} vs {}", m.header.item_count, m.items.len()));
        }
        let cfg = &m.header.config;
        if cfg["treatment"] != name.as_str() || cfg["variant"] != variant.as_str() || cfg["expansion"].as_f64() != Some(*expansion) {
            return Err(format!("{name}: header config {cfg}"));
        }
        for it in &m.items {
            items += 1;
            if it.treatment.as_deref() != Some(name.as_str()) || it.variant.to_string() != *variant || it.expansion != *expansion {
                return Err(format!("{name}: item {} has {:?} {} {}", it.pair_id, it.treatment, it.variant, it.expansion));
            }
            if !seen_ids.insert(it.pair_id.clone()) {
                return Err(format!("{name}: pair id {} reused across treatments", it.pair_id));
            }
        }
        contents.insert(text);
    }
    if contents.len() != expected.len() {
        return Err("manifests are not distinct".into());
    }
    Ok(format!("{} treatment manifests, {items} items, provenance fields all correct", expected.len()))
}

fn pipeline_checks() -> (Outcome, Outcome) {
    let dir = tempfile::tempdir().unwrap();
    let e2e = mock_end_to_end(dir.path());
    let sweep = match &e2e {
        Ok(_) => sweep_schema(dir.path()),
        Err(_) => Err("skipped: the end-to-end run did not produce candidates".into()),
    };
    let conv = |r: Result<String, String>| match r {
        Ok(d) => Outcome::Pass(d),
        Err(d) => Outcome::Fail(d),
    };
    (conv(e2e), conv(sweep))
}

// ------------------------------------------------------------- throughput

fn throughput() -> Outcome {
    let bundles = synth_corpus(
        8,
        &SynthConfig {
            width: 1024,
            height: 768,
            seed: 0,
            ..Default::default()
        },
    );
    let sel = SelectionConfig {
        per_scene_cap: Some(2),
        ..Default::default()
    };
    let cands = sample_passing_across(&bundles, &sel, 16).candidates;
    let report = match measure_throughput(&bundles, &cands, &GenerateConfig::default(), &[1, 8]) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    report!("    {}x{}, {} pairs, {} cores available", report.width, report.height, cands.len(), report.available_cores);
    report!("    workers  pairs/s  inpaint  paste  label  meta  encode  (mean ms/pair)");
    for run in &report.runs {
        let m = &run.stage_mean_ms;
        report!(
            "    {:>7}  {:>7.2}  {:>7.1}  {:>5.1}  {:>5.1}  {:>4.1}  {:>6.1}",
            run.workers,
            run.pairs_per_sec.unwrap_or(0.0),
            m.inpaint_ms,
            m.paste_ms,
            m.label_ms,
            m.metadata_ms,
            m.encode_ms
        );
    }
    let single = report.runs[0].pairs_per_sec.unwrap_or(0.0);
    let scaling = report.scaling.unwrap_or(0.0);
    let detail = format!("single worker {single:.2} pairs/s (need 1.00); 8-worker scaling {scaling:.2}x (need 4.00x) on {} cores", report.available_cores);
    if cands.len() < 16 || !report.runs.iter().all(|r| r.failures.is_empty()) {
        return Outcome::Fail(format!("{detail}; only {} candidates or generation failures", cands.len()));
    }
    match (single >= 1.0, scaling >= 4.0) {
        (true, true) => Outcome::Pass(detail),
        (true, false) if report.available_cores < 8 => Outcome::HardwareBound(detail),
        _ => Outcome::Fail(detail),
    }
}

#[test]
fn acceptance() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let checks: [(&str, Check); 7] = [
        ("geometry oracle suite", geometry),
        ("triplet filter equivalence", triplet_equivalence),
        ("compositor pixel contracts", compositor_contracts),
        ("inpainting invariants", inpainting),
        ("labeling invariants", labeling),
        ("statistics", statistics),
        ("random guesser calibration", random_guesser),
    ];
    for (name, f) in checks {
        results.push((name, f()));
    }
    let (e2e, sweep) = pipeline_checks();
    results.push(("mock end to end", e2e));
    results.push(("expansion and self-paste sweep schema", sweep));
    results.push(("throughput", throughput()));

    let strict = std::env::var("FORGE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut fatal = Vec::new();
    for (name, outcome) in &results {
        match outcome {
            Outcome::Pass(d) => report!("PASS  {name}: {d}"),
            Outcome::Fail(d) => {
                report!("FAIL  {name}: {d}");
                fatal.push(*name);
            }
            Outcome::HardwareBound(d) => {
                report!("FAIL  {name}: {d} [host has too few cores]");
                if strict {
                    fatal.push(*name);
                }
            }
        }
    }
    assert!(fatal.is_empty(), "failed: {fatal:?}");
}
