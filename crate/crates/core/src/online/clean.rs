use super::SegMask;
use crate::error::Result;
use crate::geometry::{above_horizon_mask, HorizonEstimate};
use crate::imaging::GrayImage;
use crate::raster::{dilate3, erode3, largest_component, Mask, ProbabilityMap};
use crate::segnet::SegModel;

/// Channel argmax; ties go to non-water.
pub fn argmax_mask(p_water: &ProbabilityMap, p_non_water: &ProbabilityMap) -> Mask {
    p_water.zip_map(p_non_water, |&w, &n| w > n)
}

/// 3x3 opening followed by 3x3 closing.
pub fn smooth_mask(mask: &Mask) -> Mask {
    let opened = dilate3(&erode3(mask));
    erode3(&dilate3(&opened))
}

/// Removes water on the sky side of the horizon, then keeps the largest
/// 4-connected water component. Never adds water.
pub fn clean_mask(mask: &Mask, horizon: Option<&HorizonEstimate>) -> SegMask {
    let below = match horizon {
        Some(h) => {
            let sky = above_horizon_mask(h, mask.width(), mask.height());
            mask.zip_map(&sky, |&m, &s| m && !s)
        }
        None => mask.clone(),
    };
    largest_component(&below)
}

/// Full post-processing of a pair of probability maps.
pub fn postprocess(p_water: &ProbabilityMap, p_non_water: &ProbabilityMap, horizon: Option<&HorizonEstimate>) -> SegMask {
    clean_mask(&smooth_mask(&argmax_mask(p_water, p_non_water)), horizon)
}

/// Segments a preprocessed frame and cleans the result.
pub fn infer_and_clean(f: &SegModel, img: &GrayImage, horizon: Option<&HorizonEstimate>) -> Result<SegMask> {
    let (pw, pn) = f.predict(img)?;
    Ok(postprocess(&pw, &pn, horizon))
}
