//! Client for the sidecar protocol: `POST {endpoint}/inpaint` with a
//! multipart body holding `image` (PNG) and `mask` (8-bit PNG, 255 = hole);
//! the answer is a PNG of the same size.

use std::time::Duration;

use image::{GrayImage, Luma};

use super::InpaintError;
use crate::geometry::PixelMask;
use crate::raster::{decode_png_rgb, encode_png, RgbImage};

pub const MULTIPART_BOUNDARY: &str = "forge-inpaint-7d1c0b5e";

pub fn encode_mask_png(hole: &PixelMask) -> Vec<u8> {
    let (w, h) = hole.dimensions();
    let img = GrayImage::from_fn(w, h, |x, y| Luma([if hole.get(x, y) { 255 } else { 0 }]));
    let mut out = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out
}

/// Multipart body with one part per `(name, png bytes)`.
pub fn multipart_body(parts: &[(&str, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, data) in parts {
        body.extend_from_slice(
            format!(
                "--{MULTIPART_BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}.png\"\r\nContent-Type: image/png\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{MULTIPART_BOUNDARY}--\r\n").as_bytes());
    body
}

pub fn inpaint_remote(
    endpoint: &str,
    image: &RgbImage,
    hole: &PixelMask,
    timeout: Duration,
) -> Result<RgbImage, InpaintError> {
    let png = encode_png(image).map_err(|e| InpaintError::Decode(e.to_string()))?;
    let mask = encode_mask_png(hole);
    let body = multipart_body(&[("image", &png), ("mask", &mask)]);
    let url = format!("{}/inpaint", endpoint.trim_end_matches('/'));

    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let transport = |e: ureq::Error| match e {
        ureq::Error::Timeout(_) => InpaintError::Timeout {
            endpoint: endpoint.to_string(),
            timeout_ms: timeout.as_millis() as u64,
        },
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => InpaintError::Timeout {
            endpoint: endpoint.to_string(),
            timeout_ms: timeout.as_millis() as u64,
        },
        other => InpaintError::Transport {
            endpoint: endpoint.to_string(),
            reason: other.to_string(),
        },
    };
    let mut resp = agent
        .post(&url)
        .header("Content-Type", &format!("multipart/form-data; boundary={MULTIPART_BOUNDARY}"))
        .send(&body[..])
        .map_err(transport)?;
    let status = resp.status().as_u16();
    if status != 200 {
        return Err(InpaintError::Status {
            endpoint: endpoint.to_string(),
            status,
        });
    }
    let bytes = resp
        .body_mut()
        .with_config()
        .limit(256 * 1024 * 1024)
        .read_to_vec()
        .map_err(transport)?;
    let filled = decode_png_rgb(&bytes).map_err(|e| InpaintError::Decode(e.to_string()))?;
    if filled.dimensions() != image.dimensions() {
        return Err(InpaintError::DimensionMismatch {
            expected: image.dimensions(),
            found: filled.dimensions(),
        });
    }
    let mut out = image.clone();
    for (i, (dst, src)) in out.pixels_mut().zip(filled.pixels()).enumerate() {
        if hole.as_slice()[i] {
            *dst = *src;
        }
    }
    Ok(out)
}
