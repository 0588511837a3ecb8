//! Hole filling: native PatchMatch or a remote sidecar.
//!
//! Both backends guarantee that pixels outside the hole come back untouched
//! and that the output has the input's dimensions.

mod patchmatch;
mod remote;

use serde::{Deserialize, Serialize};

pub use patchmatch::{InpaintTrace, LevelTrace};
pub use remote::{encode_mask_png, inpaint_remote, multipart_body, MULTIPART_BOUNDARY};

use crate::geometry::PixelMask;
use crate::raster::RgbImage;

#[derive(Debug, thiserror::Error)]
pub enum InpaintError {
    #[error("uninpaintable: {0}")]
    Uninpaintable(String),
    #[error("invalid inpaint parameters: {0}")]
    InvalidParams(String),
    #[error("hole mask is {found:?}, image is {expected:?}")]
    InvalidHole { expected: (u32, u32), found: (u32, u32) },
    #[error("inpainter at {endpoint} timed out after {timeout_ms} ms")]
    Timeout { endpoint: String, timeout_ms: u64 },
    #[error("inpainter at {endpoint} answered status {status}")]
    Status { endpoint: String, status: u16 },
    #[error("inpainter returned {found:?}, expected {expected:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error("inpainter at {endpoint} unreachable: {reason}")]
    Transport { endpoint: String, reason: String },
    #[error("inpainter response is not a valid PNG: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InpaintParams {
    pub patch_size: usize,
    /// `None` builds levels until the next one would have a side under `min_side`.
    pub pyramid_levels: Option<usize>,
    pub iterations_per_level: usize,
    pub rng_seed: u64,
    pub min_side: u32,
}

impl Default for InpaintParams {
    fn default() -> Self {
        Self {
            patch_size: 7,
            pyramid_levels: None,
            iterations_per_level: 5,
            rng_seed: 0,
            min_side: 32,
        }
    }
}

impl InpaintParams {
    pub fn validate(&self) -> Result<(), InpaintError> {
        if self.patch_size < 3 || self.patch_size % 2 == 0 {
            return Err(InpaintError::InvalidParams(format!(
                "patch_size must be odd and at least 3, got {}",
                self.patch_size
            )));
        }
        if self.iterations_per_level == 0 {
            return Err(InpaintError::InvalidParams("iterations_per_level must be at least 1".into()));
        }
        if self.pyramid_levels == Some(0) {
            return Err(InpaintError::InvalidParams("pyramid_levels must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_hole(image: &RgbImage, hole: &PixelMask) -> Result<(), InpaintError> {
    if image.dimensions() != hole.dimensions() {
        return Err(InpaintError::InvalidHole {
            expected: image.dimensions(),
            found: hole.dimensions(),
        });
    }
    Ok(())
}

/// Deterministic for a fixed `(image, hole, params)`.
pub fn inpaint_native(image: &RgbImage, hole: &PixelMask, params: &InpaintParams) -> Result<RgbImage, InpaintError> {
    inpaint_native_traced(image, hole, params).map(|(img, _)| img)
}

/// Like [`inpaint_native`], also returning the per-level energy trace.
pub fn inpaint_native_traced(
    image: &RgbImage,
    hole: &PixelMask,
    params: &InpaintParams,
) -> Result<(RgbImage, InpaintTrace), InpaintError> {
    params.validate()?;
    check_hole(image, hole)?;
    if hole.is_empty() {
        return Ok((image.clone(), InpaintTrace::default()));
    }
    patchmatch::run(image, hole, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InpaintBackend {
    #[default]
    Native,
    Remote {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default)]
        fallback_native: bool,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

/// Runs the configured backend. A failing remote call falls back to the
/// native fill when `fallback_native` is set.
pub fn inpaint_with(
    backend: &InpaintBackend,
    image: &RgbImage,
    hole: &PixelMask,
    params: &InpaintParams,
) -> Result<RgbImage, InpaintError> {
    match backend {
        InpaintBackend::Native => inpaint_native(image, hole, params),
        InpaintBackend::Remote {
            endpoint,
            timeout_ms,
            fallback_native,
        } => {
            check_hole(image, hole)?;
            if hole.is_empty() {
                return Ok(image.clone());
            }
            match inpaint_remote(endpoint, image, hole, std::time::Duration::from_millis(*timeout_ms)) {
                Ok(img) => Ok(img),
                Err(_) if *fallback_native => inpaint_native(image, hole, params),
                Err(e) => Err(e),
            }
        }
    }
}
