//! Raster containers shared by every stage.

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

pub use image::RgbImage;

/// 16-bit instance-ID map, 0 = background.
pub type InstanceMap = ImageBuffer<Luma<u16>, Vec<u16>>;

/// Planar metric depth (meters along the optical axis). 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f32>) -> Option<Self> {
        (data.len() == width as usize * height as usize).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
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
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, z: f32) {
        self.data[y as usize * self.width as usize + x as usize] = z;
    }

    /// Depth at (x, y) if it is a usable measurement.
    #[inline]
    pub fn valid(&self, x: u32, y: u32) -> Option<f64> {
        let z = self.get(x, y);
        (z.is_finite() && z > 0.0).then_some(z as f64)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Axis-aligned integer rectangle, half-open: covers `x..x+w` × `y..y+h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        !self.is_empty()
            && !other.is_empty()
            && self.x < other.right()
            && other.x < self.right()
            && self.y < other.bottom()
            && other.y < self.bottom()
    }

    /// Center in continuous pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }
}

/// Round-half-up used for every box/extent computation so other
/// implementations can agree bit-exactly. The 1e-9 guard absorbs binary
/// representation error on exact halves such as `25.0 * 1.1`.
#[inline]
pub fn round_half_up(v: f64) -> i64 {
    (v + 0.5 + 1e-9).floor() as i64
}

/// Rec. 709 luma of an 8-bit RGB pixel.
#[inline]
pub fn luma(px: [u8; 3]) -> f64 {
    0.2126 * px[0] as f64 + 0.7152 * px[1] as f64 + 0.0722 * px[2] as f64
}

/// PNG-encode an RGB raster in memory.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, image::ImageError> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Decode PNG bytes to 8-bit RGB (alpha dropped, 16-bit narrowed).
pub fn decode_png_rgb(bytes: &[u8]) -> Result<RgbImage, image::ImageError> {
    Ok(image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up_rounding() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(-2.5), -2);
        assert_eq!(round_half_up(2.4999), 2);
        assert_eq!(round_half_up(25.0 * 1.1), 28);
        assert_eq!(round_half_up(50.0 * 1.1), 55);
    }

    #[test]
    fn rect_intersection_is_half_open() {
        let a = Rect::new(0, 0, 10, 10);
        assert!(a.intersects(&Rect::new(9, 9, 5, 5)));
        assert!(!a.intersects(&Rect::new(10, 0, 5, 5)));
        assert!(!a.intersects(&Rect::new(3, 3, 0, 5)));
    }

    #[test]
    fn luma_extremes() {
        assert_eq!(luma([0, 0, 0]), 0.0);
        assert!((luma([255, 255, 255]) - 255.0).abs() < 1e-9);
    }
}
