//! Edit-region extraction: the ordered fallback that turns a referring
//! expression (or a hand-drawn mask) into a binary mask.
//!
//! Stages, tried in order until one yields a non-empty mask:
//! 1. the user's canvas mask, returned as-is;
//! 2. referring-expression segmentation on the expression;
//! 3. bounding boxes from the chat model, rasterised;
//! 4. boxes inferred from the full request, then segmentation retried with it.

use std::fmt;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::artifact::{decode_mask, encode_mask, png_dimensions};
use crate::error::{Error, Result};
use crate::gateway::structured::{BoxesReply, PixelBox, SchemaId};
use crate::gateway::templates::ids;
use crate::gateway::{CallTrace, Gateway, SegmentOutcome, StructuredCallSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionStage {
    CanvasMask,
    Segmentation,
    BoundingBoxes,
    InferredRegion,
}

impl RegionStage {
    /// 1-based position in the cascade.
    pub fn number(self) -> u8 {
        match self {
            RegionStage::CanvasMask => 1,
            RegionStage::Segmentation => 2,
            RegionStage::BoundingBoxes => 3,
            RegionStage::InferredRegion => 4,
        }
    }
}

impl fmt::Display for RegionStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone)]
pub struct RegionRequest {
    /// PNG bytes of the image to edit.
    pub image: Vec<u8>,
    pub expression: String,
    /// PNG mask drawn by the user (255 = edit).
    pub canvas_mask: Option<Vec<u8>>,
    /// Full request text, used by the last stage.
    pub context_prompt: Option<String>,
}

impl RegionRequest {
    pub fn new(image: Vec<u8>, expression: impl Into<String>) -> Self {
        RegionRequest {
            image,
            expression: expression.into(),
            canvas_mask: None,
            context_prompt: None,
        }
    }

    pub fn with_canvas_mask(mut self, mask: Vec<u8>) -> Self {
        self.canvas_mask = Some(mask);
        self
    }

    pub fn with_context(mut self, prompt: impl Into<String>) -> Self {
        self.context_prompt = Some(prompt.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionOutcome {
    /// Single-channel PNG, same dimensions as the image.
    pub mask: Vec<u8>,
    pub stage: RegionStage,
    pub attempted: Vec<RegionStage>,
}

/// Rasterise boxes with inclusive corners, clipped to the image. Returns
/// `None` when no box keeps any pixel after clipping.
pub fn boxes_to_mask(boxes: &[PixelBox], width: u32, height: u32) -> Option<GrayImage> {
    if width == 0 || height == 0 {
        return None;
    }
    let mut mask = GrayImage::new(width, height);
    let mut any = false;
    let clip = |lo: f64, hi: f64, size: u32| -> Option<(u32, u32)> {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let lo = lo.round().max(0.0);
        let hi = hi.round().min((size - 1) as f64);
        (lo <= hi).then_some((lo as u32, hi as u32))
    };
    for b in boxes {
        let (Some((x0, x1)), Some((y0, y1))) = (clip(b.x0, b.x1, width), clip(b.y0, b.y1, height))
        else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                mask.put_pixel(x, y, Luma([255]));
            }
        }
        any = true;
    }
    any.then_some(mask)
}

/// Any non-zero pixel becomes 255.
pub fn binarize(mask: &GrayImage) -> GrayImage {
    GrayImage::from_fn(mask.width(), mask.height(), |x, y| {
        Luma([if mask.get_pixel(x, y).0[0] > 0 { 255 } else { 0 }])
    })
}

pub fn mask_is_empty(mask: &GrayImage) -> bool {
    mask.pixels().all(|p| p.0[0] == 0)
}

fn segmentation_mask(outcome: SegmentOutcome) -> Result<Option<Vec<u8>>> {
    match outcome {
        SegmentOutcome::NotFound => Ok(None),
        SegmentOutcome::Mask(bytes) => {
            let mask = binarize(&decode_mask(&bytes)?);
            if mask_is_empty(&mask) {
                Ok(None)
            } else {
                Ok(Some(encode_mask(&mask)?))
            }
        }
    }
}

async fn boxes_stage(
    gateway: &Gateway,
    template: &str,
    req: &RegionRequest,
    prompt: &str,
    dims: (u32, u32),
    trace: &CallTrace,
) -> Result<Option<Vec<u8>>> {
    let spec = StructuredCallSpec::new(template, SchemaId::Boxes)
        .var("expression", req.expression.clone())
        .var("prompt", prompt)
        .var("width", dims.0.to_string())
        .var("height", dims.1.to_string())
        .attach(req.image.clone());
    let reply: BoxesReply = gateway.chat_typed(spec, trace).await?;
    boxes_to_mask(&reply.boxes, dims.0, dims.1)
        .map(|m| encode_mask(&m))
        .transpose()
}

fn stage_result(stage: RegionStage, r: Result<Option<Vec<u8>>>) -> Option<Vec<u8>> {
    match r {
        Ok(Some(mask)) => Some(mask),
        Ok(None) => {
            tracing::debug!(%stage, "region stage found nothing");
            None
        }
        Err(e) => {
            tracing::debug!(%stage, error = %e, "region stage failed");
            None
        }
    }
}

/// Run the cascade and return the mask from the first stage that succeeds.
pub async fn extract_region(
    gateway: &Gateway,
    req: &RegionRequest,
    trace: &CallTrace,
) -> Result<RegionOutcome> {
    let dims = png_dimensions(&req.image)?;
    if let Some(mask) = &req.canvas_mask {
        let mask_dims = png_dimensions(mask)?;
        if mask_dims != dims {
            return Err(Error::DimensionMismatch {
                image: dims,
                mask: mask_dims,
            });
        }
        return Ok(RegionOutcome {
            mask: mask.clone(),
            stage: RegionStage::CanvasMask,
            attempted: vec![RegionStage::CanvasMask],
        });
    }
    if req.expression.trim().is_empty() {
        return Err(Error::validation(
            "region request needs an expression or a canvas mask",
        ));
    }
    let context = req
        .context_prompt
        .as_deref()
        .filter(|p| !p.trim().is_empty())
        .unwrap_or(&req.expression)
        .to_string();
    let mut attempted = Vec::new();

    attempted.push(RegionStage::Segmentation);
    let seg = async {
        segmentation_mask(gateway.segment(&req.image, &req.expression, trace).await?)
    }
    .await;
    if let Some(mask) = stage_result(RegionStage::Segmentation, seg) {
        return Ok(done(mask, RegionStage::Segmentation, attempted));
    }

    attempted.push(RegionStage::BoundingBoxes);
    let boxed = boxes_stage(gateway, ids::LOCATE_REGION, req, &context, dims, trace).await;
    if let Some(mask) = stage_result(RegionStage::BoundingBoxes, boxed) {
        return Ok(done(mask, RegionStage::BoundingBoxes, attempted));
    }

    attempted.push(RegionStage::InferredRegion);
    let inferred = boxes_stage(gateway, ids::INFER_REGION, req, &context, dims, trace).await;
    if let Some(mask) = stage_result(RegionStage::InferredRegion, inferred) {
        return Ok(done(mask, RegionStage::InferredRegion, attempted));
    }
    let retried = async { segmentation_mask(gateway.segment(&req.image, &context, trace).await?) }.await;
    if let Some(mask) = stage_result(RegionStage::InferredRegion, retried) {
        return Ok(done(mask, RegionStage::InferredRegion, attempted));
    }

    Err(Error::RegionExtraction { attempted })
}

fn done(mask: Vec<u8>, stage: RegionStage, attempted: Vec<RegionStage>) -> RegionOutcome {
    RegionOutcome {
        mask,
        stage,
        attempted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pb(x0: f64, y0: f64, x1: f64, y1: f64) -> PixelBox {
        PixelBox { x0, y0, x1, y1 }
    }

    fn set_pixels(m: &GrayImage) -> usize {
        m.pixels().filter(|p| p.0[0] == 255).count()
    }

    #[test]
    fn inclusive_corners() {
        let m = boxes_to_mask(&[pb(10.0, 10.0, 50.0, 50.0)], 64, 64).unwrap();
        assert_eq!(set_pixels(&m), 41 * 41);
        assert_eq!(m.get_pixel(10, 10).0[0], 255);
        assert_eq!(m.get_pixel(50, 50).0[0], 255);
        assert_eq!(m.get_pixel(51, 50).0[0], 0);
    }

    #[test]
    fn clipping_and_degenerate_boxes() {
        let m = boxes_to_mask(&[pb(60.0, 60.0, 100.0, 100.0)], 64, 64).unwrap();
        assert_eq!(set_pixels(&m), 4 * 4);
        assert!(boxes_to_mask(&[pb(70.0, 0.0, 90.0, 10.0)], 64, 64).is_none());
        assert!(boxes_to_mask(&[], 64, 64).is_none());
        let swapped = boxes_to_mask(&[pb(50.0, 50.0, 10.0, 10.0)], 64, 64).unwrap();
        assert_eq!(set_pixels(&swapped), 41 * 41);
    }

    #[test]
    fn overlapping_boxes_union() {
        let m = boxes_to_mask(&[pb(0.0, 0.0, 9.0, 9.0), pb(5.0, 5.0, 14.0, 14.0)], 32, 32).unwrap();
        assert_eq!(set_pixels(&m), 100 + 100 - 25);
    }
}
