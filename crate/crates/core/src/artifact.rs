//! Content-addressed image handles and small PNG helpers.

use std::io::Cursor;

use image::{DynamicImage, GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const PNG_MEDIA_TYPE: &str = "image/png";

/// Largest image payload accepted by the gateway and the store.
pub const MAX_IMAGE_BYTES: usize = 16 * 1024 * 1024;

/// Handle to an immutable stored artifact. `path` is relative to the store root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub hash: String,
    pub media_type: String,
    pub byte_length: u64,
    pub path: String,
}

impl ArtifactRef {
    pub fn for_bytes(bytes: &[u8], media_type: &str) -> Self {
        let hash = content_hash(bytes);
        ArtifactRef {
            path: artifact_path(&hash),
            hash,
            media_type: media_type.to_string(),
            byte_length: bytes.len() as u64,
        }
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn artifact_path(hash: &str) -> String {
    format!("artifacts/{hash}.png")
}

/// A hash is accepted only as 64 lowercase hex characters.
pub fn is_valid_hash(hash: &str) -> bool {
    hash.len() == 64 && hash.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

pub fn decode_png(bytes: &[u8]) -> Result<DynamicImage> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?)
}

pub fn png_dimensions(bytes: &[u8]) -> Result<(u32, u32)> {
    let reader = image::ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png);
    Ok(reader.into_dimensions()?)
}

pub fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Decode a mask PNG into a single-channel raster. Nonzero pixels mark the edit region.
pub fn decode_mask(bytes: &[u8]) -> Result<GrayImage> {
    Ok(decode_png(bytes)?.into_luma8())
}

pub fn encode_mask(mask: &GrayImage) -> Result<Vec<u8>> {
    encode_png(&DynamicImage::ImageLuma8(mask.clone()))
}
