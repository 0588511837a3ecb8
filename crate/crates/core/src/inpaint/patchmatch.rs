//! Coarse-to-fine PatchMatch image completion.
//!
//! Each pyramid level alternates two steps that both lower the same energy,
//! the sum over target patches of squared distance to their matched source
//! patch:
//!
//! * nearest-neighbour field update: propagation from already-visited
//!   neighbours, then random search around the current match; a candidate is
//!   only taken if it is strictly closer;
//! * voting: every hole pixel becomes the mean of the source pixels that the
//!   patches covering it point to, which is the exact minimiser for a fixed
//!   field.
//!
//! Target patches are all patches (centred anywhere) that touch the hole.
//! Source patches lie fully inside the image and fully outside the hole.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{InpaintError, InpaintParams};
use crate::geometry::PixelMask;
use crate::raster::RgbImage;

const NONE: u32 = u32::MAX;

/// Random-search radius below the coarsest level, in that level's pixels.
const FINE_SEARCH_RADIUS: usize = 32;

/// Energy after initialisation (`energies[0]`) and after each iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTrace {
    pub width: u32,
    pub height: u32,
    pub energies: Vec<f64>,
}

/// Per-level traces, coarsest first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InpaintTrace {
    pub levels: Vec<LevelTrace>,
}

struct Level {
    w: usize,
    h: usize,
    img: Vec<[u8; 3]>,
    hole: Vec<bool>,
}

impl Level {
    fn downsample(&self) -> Level {
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut img = vec![[0u8; 3]; w * h];
        let mut hole = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0u32; 3];
                let mut n = 0;
                let mut any_hole = false;
                for (cx, cy) in [(2 * x, 2 * y), (2 * x + 1, 2 * y), (2 * x, 2 * y + 1), (2 * x + 1, 2 * y + 1)] {
                    if cx >= self.w || cy >= self.h {
                        continue;
                    }
                    let i = cy * self.w + cx;
                    any_hole |= self.hole[i];
                    for k in 0..3 {
                        acc[k] += u32::from(self.img[i][k]);
                    }
                    n += 1;
                }
                hole[y * w + x] = any_hole;
                if !any_hole {
                    img[y * w + x] = acc.map(|v| ((v + n / 2) / n) as u8);
                }
            }
        }
        img.resize(w * h + PAD, [0; 3]);
        Level { w, h, img, hole }
    }
}

/// Summed-area table over hole flags.
struct HoleIntegral {
    stride: usize,
    sums: Vec<u32>,
}

impl HoleIntegral {
    fn new(l: &Level) -> Self {
        let stride = l.w + 1;
        let mut sums = vec![0u32; stride * (l.h + 1)];
        for y in 0..l.h {
            let mut row = 0;
            for x in 0..l.w {
                row += l.hole[y * l.w + x] as u32;
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { stride, sums }
    }

    /// Hole count in `[x0, x1) × [y0, y1)`.
    fn count(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u32 {
        let s = &self.sums;
        s[y1 * self.stride + x1] + s[y0 * self.stride + x0] - s[y0 * self.stride + x1] - s[y1 * self.stride + x0]
    }
}

/// Pixels appended after every level image so that 8-byte tail loads of the
/// last row stay inside the buffer.
const PAD: usize = 8;

/// Squared distance of two equal-length byte rows.
#[inline]
fn row_ssd(a: &[u8], b: &[u8]) -> u32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let e = i32::from(x) - i32::from(y);
            (e * e) as u32
        })
        .sum()
}

/// [`row_ssd`] over the first 21 bytes (seven RGB pixels); both slices must
/// hold at least 24 bytes.
#[inline]
fn row_ssd21(a: &[u8], b: &[u8]) -> u32 {
    assert!(a.len() >= 24 && b.len() >= 24);
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::x86_64::*;
        // SAFETY: both loads stay within the 24 bytes checked above; SSE2 is
        // part of the x86_64 baseline.
        unsafe {
            let z = _mm_setzero_si128();
            let a0 = _mm_loadu_si128(a.as_ptr() as *const __m128i);
            let b0 = _mm_loadu_si128(b.as_ptr() as *const __m128i);
            let keep5 = _mm_set_epi64x(0, 0x0000_00ff_ffff_ffff);
            let a1 = _mm_and_si128(_mm_loadl_epi64(a.as_ptr().add(16) as *const __m128i), keep5);
            let b1 = _mm_and_si128(_mm_loadl_epi64(b.as_ptr().add(16) as *const __m128i), keep5);
            let lo = _mm_sub_epi16(_mm_unpacklo_epi8(a0, z), _mm_unpacklo_epi8(b0, z));
            let hi = _mm_sub_epi16(_mm_unpackhi_epi8(a0, z), _mm_unpackhi_epi8(b0, z));
            let tail = _mm_sub_epi16(_mm_unpacklo_epi8(a1, z), _mm_unpacklo_epi8(b1, z));
            let s = _mm_add_epi32(
                _mm_add_epi32(_mm_madd_epi16(lo, lo), _mm_madd_epi16(hi, hi)),
                _mm_madd_epi16(tail, tail),
            );
            let s = _mm_add_epi32(s, _mm_shuffle_epi32(s, 0b01_00_11_10));
            let s = _mm_add_epi32(s, _mm_shuffle_epi32(s, 0b10_11_00_01));
            _mm_cvtsi128_si32(s) as u32
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    row_ssd(&a[..21], &b[..21])
}

/// Uniform-ish draw from `-radius..=radius` by multiply-shift.
#[inline]
fn offset(rng: &mut ChaCha8Rng, radius: isize) -> isize {
    let span = (2 * radius + 1) as u64;
    ((u64::from(rng.next_u32()) * span) >> 32) as isize - radius
}

/// Matching state for one level.
struct Field {
    w: usize,
    h: usize,
    r: usize,
    valid: Vec<bool>,
    sources: Vec<u32>,
    targets: Vec<u32>,
    hole_pixels: Vec<u32>,
    /// Inclusive bounds `(x0, y0, x1, y1)` of the target centres.
    target_box: (usize, usize, usize, usize),
    slot: Vec<u32>,
    nnf: Vec<u32>,
    dist: Vec<u32>,
}

impl Field {
    fn new(l: &Level, r: usize) -> Self {
        let (w, h) = (l.w, l.h);
        let integral = HoleIntegral::new(l);
        let mut valid = vec![false; w * h];
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        let mut slot = vec![NONE; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
                let (x1, y1) = ((x + r + 1).min(w), (y + r + 1).min(h));
                let holes = integral.count(x0, y0, x1, y1);
                let interior = x >= r && y >= r && x + r < w && y + r < h;
                if interior && holes == 0 {
                    valid[i] = true;
                    sources.push(i as u32);
                }
                if holes > 0 {
                    slot[i] = targets.len() as u32;
                    targets.push(i as u32);
                }
            }
        }
        let n = targets.len();
        let mut target_box = (usize::MAX, usize::MAX, 0, 0);
        for &t in &targets {
            let (x, y) = (t as usize % w, t as usize / w);
            target_box = (target_box.0.min(x), target_box.1.min(y), target_box.2.max(x), target_box.3.max(y));
        }
        Self {
            w,
            h,
            r,
            valid,
            sources,
            targets,
            target_box,
            hole_pixels: (0..w * h).filter(|&i| l.hole[i]).map(|i| i as u32).collect(),
            slot,
            nnf: vec![0; n],
            dist: vec![0; n],
        }
    }

    /// SSD between the target patch at `c` and the source patch at `s`,
    /// skipping target offsets outside the image. Stops once `bound` is reached.
    #[inline]
    fn patch_dist(&self, img: &[[u8; 3]], c: usize, s: usize, bound: u32) -> u32 {
        let w = self.w as isize;
        let h = self.h as isize;
        let r = self.r as isize;
        let (cx, cy) = ((c % self.w) as isize, (c / self.w) as isize);
        let (sx, sy) = ((s % self.w) as isize, (s / self.w) as isize);
        let mut d = 0;
        if cx >= r && cy >= r && cx + r < w && cy + r < h {
            let flat = img.as_flattened();
            let len = 3 * (self.r * 2 + 1);
            let (c0, s0) = ((cx - r) as usize, (sx - r) as usize);
            for dy in -r..=r {
                let trow = 3 * (((cy + dy) * w) as usize + c0);
                let srow = 3 * (((sy + dy) * w) as usize + s0);
                d += if len == 21 {
                    row_ssd21(&flat[trow..trow + 24], &flat[srow..srow + 24])
                } else {
                    row_ssd(&flat[trow..trow + len], &flat[srow..srow + len])
                };
                if d >= bound {
                    return d;
                }
            }
            return d;
        }
        for dy in -r..=r {
            let ty = cy + dy;
            if ty < 0 || ty >= h {
                continue;
            }
            let trow = (ty * w) as usize;
            let srow = ((sy + dy) * w) as usize;
            for dx in -r..=r {
                let tx = cx + dx;
                if tx < 0 || tx >= w {
                    continue;
                }
                let a = img[trow + tx as usize];
                let b = img[srow + (sx + dx) as usize];
                d += row_ssd(&a, &b);
            }
            if d >= bound {
                return d;
            }
        }
        d
    }

    #[inline]
    fn prefetch_patch(&self, img: &[[u8; 3]], s: usize) {
        #[cfg(target_arch = "x86_64")]
        {
            use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
            let row0 = s - self.r * self.w - self.r;
            for k in 0..=2 * self.r {
                let p = img[row0 + k * self.w..].as_ptr() as *const i8;
                // SAFETY: prefetch is a hint and never faults; the pointer is in bounds
                unsafe {
                    _mm_prefetch(p, _MM_HINT_T0);
                    _mm_prefetch(p.wrapping_add(64), _MM_HINT_T0);
                }
            }
        }
        #[cfg(not(target_arch = "x86_64"))]
        let _ = (img, s);
    }

    fn refresh_distances(&mut self, img: &[[u8; 3]]) -> u64 {
        let mut energy = 0;
        for t in 0..self.targets.len() {
            let d = self.patch_dist(img, self.targets[t] as usize, self.nnf[t] as usize, u32::MAX);
            self.dist[t] = d;
            energy += u64::from(d);
        }
        energy
    }

    fn random_source(&self, rng: &mut ChaCha8Rng) -> u32 {
        self.sources[rng.random_range(0..self.sources.len())]
    }

    fn improve(&mut self, img: &[[u8; 3]], rng: &mut ChaCha8Rng, forward: bool, max_radius: usize) {
        let n = self.targets.len();
        let (w, h) = (self.w as isize, self.h as isize);
        let r = self.r as isize;
        let step: isize = if forward { 1 } else { -1 };
        for k in 0..n {
            let t = if forward { k } else { n - 1 - k };
            let c = self.targets[t] as usize;
            let (cx, cy) = ((c % self.w) as isize, (c / self.w) as isize);
            let mut best = self.nnf[t] as usize;
            let mut best_d = self.dist[t];

            // propagation from the neighbours visited earlier in this sweep
            for (nx, ny) in [(cx - step, cy), (cx, cy - step)] {
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let ns = self.slot[(ny * w + nx) as usize];
                if ns == NONE {
                    continue;
                }
                let m = self.nnf[ns as usize] as isize;
                let (mx, my) = (m % w + (cx - nx), m / w + (cy - ny));
                if mx < 0 || my < 0 || mx >= w || my >= h {
                    continue;
                }
                let cand = (my * w + mx) as usize;
                if cand == best || !self.valid[cand] {
                    continue;
                }
                let d = self.patch_dist(img, c, cand, best_d);
                if d < best_d {
                    best = cand;
                    best_d = d;
                }
            }

            // random search around the propagated match with halving radius;
            // candidates are drawn first so their rows can be prefetched
            let (bx, by) = ((best as isize) % w, (best as isize) / w);
            let mut cands = [0usize; 32];
            let mut nc = 0;
            let mut radius = w.max(h).min(max_radius as isize);
            while radius >= 1 && nc < cands.len() {
                let x = (bx + offset(rng, radius)).clamp(r, w - 1 - r);
                let y = (by + offset(rng, radius)).clamp(r, h - 1 - r);
                cands[nc] = (y * w + x) as usize;
                nc += 1;
                radius /= 2;
            }
            for &cand in &cands[..nc] {
                self.prefetch_patch(img, cand);
            }
            for &cand in &cands[..nc] {
                if cand != best && self.valid[cand] {
                    let d = self.patch_dist(img, c, cand, best_d);
                    if d < best_d {
                        best = cand;
                        best_d = d;
                    }
                }
            }
            self.nnf[t] = best as u32;
            self.dist[t] = best_d;
        }
    }

    /// Replaces every hole pixel with the mean of its votes.
    fn vote(&self, level: &mut Level, acc: &mut Vec<[u32; 4]>) {
        // accumulators cover the targets' bounding box grown by the patch radius
        let r = self.r;
        let (bx0, by0, bx1, by1) = self.target_box;
        let (ax0, ay0) = (bx0.saturating_sub(r), by0.saturating_sub(r));
        let (ax1, ay1) = ((bx1 + r + 1).min(self.w), (by1 + r + 1).min(self.h));
        let aw = ax1 - ax0;
        acc.clear();
        acc.resize(aw * (ay1 - ay0), [0; 4]);
        let p = 2 * r + 1;
        for (t, &c) in self.targets.iter().enumerate() {
            let (cx, cy) = (c as usize % self.w, c as usize / self.w);
            let s = self.nnf[t] as usize;
            let (sx, sy) = (s % self.w, s / self.w);
            if cx >= r && cy >= r && cx + r < self.w && cy + r < self.h {
                for k in 0..p {
                    let src = &level.img[(sy + k - r) * self.w + sx - r..][..p];
                    let row = (cy + k - r - ay0) * aw + cx - r - ax0;
                    for (a, v) in acc[row..row + p].iter_mut().zip(src) {
                        a[0] += u32::from(v[0]);
                        a[1] += u32::from(v[1]);
                        a[2] += u32::from(v[2]);
                        a[3] += 1;
                    }
                }
                continue;
            }
            for k in 0..p {
                let (ty, syk) = ((cy + k) as isize - r as isize, sy + k - r);
                if ty < 0 || ty as usize >= self.h {
                    continue;
                }
                for j in 0..p {
                    let tx = (cx + j) as isize - r as isize;
                    if tx < 0 || tx as usize >= self.w {
                        continue;
                    }
                    let v = level.img[syk * self.w + sx + j - r];
                    let a = &mut acc[(ty as usize - ay0) * aw + tx as usize - ax0];
                    a[0] += u32::from(v[0]);
                    a[1] += u32::from(v[1]);
                    a[2] += u32::from(v[2]);
                    a[3] += 1;
                }
            }
        }
        for &hp in &self.hole_pixels {
            let hp = hp as usize;
            let a = acc[(hp / self.w - ay0) * aw + hp % self.w - ax0];
            debug_assert!(a[3] > 0, "every hole pixel centres a target patch");
            let n = a[3];
            level.img[hp] = [0, 1, 2].map(|k| ((a[k] + n / 2) / n) as u8);
        }
    }
}

/// Fills hole pixels inward from the boundary with the mean of known 8-neighbours.
fn onion_fill(l: &mut Level) -> Result<(), InpaintError> {
    let (w, h) = (l.w, l.h);
    let mut known: Vec<bool> = l.hole.iter().map(|&b| !b).collect();
    if !known.iter().any(|&k| k) {
        return Err(InpaintError::Uninpaintable("hole covers the whole image".into()));
    }
    loop {
        let mut updates = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if known[i] {
                    continue;
                }
                let mut acc = [0u32; 3];
                let mut n = 0;
                for ny in y.saturating_sub(1)..(y + 2).min(h) {
                    for nx in x.saturating_sub(1)..(x + 2).min(w) {
                        let j = ny * w + nx;
                        if known[j] {
                            for k in 0..3 {
                                acc[k] += u32::from(l.img[j][k]);
                            }
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    updates.push((i, acc.map(|v| ((v + n / 2) / n) as u8)));
                }
            }
        }
        if updates.is_empty() {
            return Ok(());
        }
        for (i, v) in updates {
            l.img[i] = v;
            known[i] = true;
        }
    }
}

pub(super) fn run(
    image: &RgbImage,
    hole: &PixelMask,
    params: &InpaintParams,
) -> Result<(RgbImage, InpaintTrace), InpaintError> {
    let (w, h) = image.dimensions();
    let r = params.patch_size / 2;
    let finest = Level {
        w: w as usize,
        h: h as usize,
        img: image.pixels().map(|p| p.0).chain(std::iter::repeat_n([0; 3], PAD)).collect(),
        hole: hole.as_slice().to_vec(),
    };
    if finest.hole.iter().all(|&b| b) {
        return Err(InpaintError::Uninpaintable("hole covers the whole image".into()));
    }

    let mut pyramid = vec![finest];
    let mut fields = vec![Field::new(&pyramid[0], r)];
    if fields[0].sources.is_empty() {
        return Err(InpaintError::Uninpaintable(format!(
            "no {0}x{0} patch lies fully outside the hole",
            params.patch_size
        )));
    }
    loop {
        let last = pyramid.last().expect("non-empty");
        if let Some(n) = params.pyramid_levels {
            if pyramid.len() >= n.max(1) {
                break;
            }
        }
        let (nw, nh) = (last.w.div_ceil(2), last.h.div_ceil(2));
        let floor = if params.pyramid_levels.is_some() {
            params.patch_size + 1
        } else {
            params.min_side as usize
        };
        if nw.min(nh) < floor.max(params.patch_size + 1) {
            break;
        }
        let next = last.downsample();
        let field = Field::new(&next, r);
        if field.sources.is_empty() || next.hole.iter().all(|&b| b) {
            break;
        }
        pyramid.push(next);
        fields.push(field);
    }

    let mut trace = InpaintTrace::default();
    let mut acc = Vec::new();
    let mut saved = Vec::new();
    let coarsest = pyramid.len() - 1;
    for lvl in (0..pyramid.len()).rev() {
        let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
        rng.set_stream(lvl as u64);
        if lvl == coarsest {
            onion_fill(&mut pyramid[lvl])?;
            let f = &mut fields[lvl];
            for t in 0..f.targets.len() {
                f.nnf[t] = f.random_source(&mut rng);
            }
        } else {
            let (fine, coarse) = fields.split_at_mut(lvl + 1);
            let (cf, ff) = (&coarse[0], &mut fine[lvl]);
            for t in 0..ff.targets.len() {
                let c = ff.targets[t] as usize;
                let (x, y) = (c % ff.w, c / ff.w);
                let cs = cf.slot[(y / 2) * cf.w + x / 2];
                let mut pick = NONE;
                if cs != NONE {
                    let m = cf.nnf[cs as usize] as usize;
                    let (mx, my) = (2 * (m % cf.w) + x % 2, 2 * (m / cf.w) + y % 2);
                    if mx < ff.w && my < ff.h && ff.valid[my * ff.w + mx] {
                        pick = (my * ff.w + mx) as u32;
                    }
                }
                ff.nnf[t] = if pick == NONE { ff.random_source(&mut rng) } else { pick };
            }
            fields[lvl].vote(&mut pyramid[lvl], &mut acc);
        }

        let level = &mut pyramid[lvl];
        let field = &mut fields[lvl];
        // finer levels inherit upsampled matches and only refine them locally
        let radius = if lvl == coarsest { usize::MAX } else { FINE_SEARCH_RADIUS };
        let mut energies = vec![field.refresh_distances(&level.img) as f64];
        for it in 0..params.iterations_per_level {
            field.improve(&level.img, &mut rng, it % 2 == 0, radius);
            let matched: u64 = field.dist.iter().map(|&d| u64::from(d)).sum();
            saved.clear();
            saved.extend(field.hole_pixels.iter().map(|&p| level.img[p as usize]));
            field.vote(level, &mut acc);
            let mut energy = field.refresh_distances(&level.img);
            if energy > matched {
                // f32 rounding of the vote overshot the previous fill; keep it
                for (&p, &v) in field.hole_pixels.iter().zip(&saved) {
                    level.img[p as usize] = v;
                }
                energy = field.refresh_distances(&level.img);
            }
            energies.push(energy as f64);
        }
        trace.levels.push(LevelTrace {
            width: level.w as u32,
            height: level.h as u32,
            energies,
        });
    }

    let mut out = image.clone();
    let finest = &pyramid[0];
    for (i, px) in out.pixels_mut().enumerate() {
        if finest.hole[i] {
            px.0 = finest.img[i];
        }
    }
    Ok((out, trace))
}
