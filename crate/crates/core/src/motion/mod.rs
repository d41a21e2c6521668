//! Motion cue: after ego-motion is cancelled by a homography, water keeps
//! moving and land does not.

mod features;
mod flow;
mod homography;
mod warp;

pub use features::{detect_features, harris_response, hamming, match_features, Feature};
pub use flow::{dense_flow, dense_flow_with, FlowField, FlowParams};
pub use homography::{dlt, ransac, refine, Correspondence, Homography, RansacResult};
pub use warp::{align_and_crop, largest_rectangle, warp_image, AlignedPair};

use crate::error::{Error, Result};
use crate::imaging::{stretch_pair, GrayImage, ThermalFrame};
use crate::raster::{nearest_rank, resize_bilinear, resize_nearest, Mask, Plane, ProbabilityMap, Rect};
use crate::texture::cue_size;

#[derive(Clone, Debug, PartialEq)]
pub struct MotionCueParams {
    /// Flow-magnitude percentile used as the normalizer.
    pub alpha_f_percentile: f64,
    pub ransac_threshold: f64,
    pub ransac_iters: usize,
    pub min_matches: usize,
    pub ratio: f32,
    pub max_features: usize,
    pub flow: FlowParams,
    pub seed: u64,
}

impl Default for MotionCueParams {
    fn default() -> Self {
        Self {
            alpha_f_percentile: 0.75,
            ransac_threshold: 3.0,
            ransac_iters: 1000,
            min_matches: 20,
            ratio: 0.75,
            max_features: 1000,
            flow: FlowParams::default(),
            seed: 0,
        }
    }
}

impl MotionCueParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_f_percentile > 0.0 && self.alpha_f_percentile < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha_F percentile must be in (0, 1), got {}",
                self.alpha_f_percentile
            )));
        }
        if self.min_matches < 4 || self.ransac_iters == 0 || !(self.ransac_threshold > 0.0) {
            return Err(Error::InvalidConfig("RANSAC needs min_matches >= 4, iters > 0, threshold > 0".into()));
        }
        Ok(())
    }
}

/// Estimated `prev -> curr` homography with its support.
#[derive(Clone, Debug)]
pub struct Registration {
    pub homography: Homography,
    pub matches: usize,
    pub inliers: usize,
}

pub fn register_pair(prev: &GrayImage, curr: &GrayImage, params: &MotionCueParams) -> Result<Homography> {
    register_pair_detailed(prev, curr, params).map(|r| r.homography)
}

pub fn register_pair_detailed(prev: &GrayImage, curr: &GrayImage, params: &MotionCueParams) -> Result<Registration> {
    params.validate()?;
    if !prev.same_size(curr) {
        return Err(Error::invalid("register_pair: image sizes differ"));
    }
    let fp = detect_features(prev, params.max_features);
    let fc = detect_features(curr, params.max_features);
    let matches = match_features(&fp, &fc, params.ratio);
    if matches.len() < params.min_matches {
        return Err(Error::RegistrationFailed(format!(
            "{} matches, need {}",
            matches.len(),
            params.min_matches
        )));
    }
    let corr: Vec<Correspondence> = matches
        .iter()
        .map(|&(i, j)| ((fp[i].x as f64, fp[i].y as f64), (fc[j].x as f64, fc[j].y as f64)))
        .collect();
    let r = ransac(&corr, params.ransac_threshold, params.ransac_iters, params.seed)
        .ok_or_else(|| Error::RegistrationFailed("no non-degenerate RANSAC hypothesis".into()))?;
    if r.inliers.len() < params.min_matches {
        return Err(Error::RegistrationFailed(format!(
            "{} inliers, need {}",
            r.inliers.len(),
            params.min_matches
        )));
    }
    if r.inliers.len() * 2 < matches.len() {
        log::warn!(
            "weak registration: {} of {} matches are inliers; is static shore in view?",
            r.inliers.len(),
            matches.len()
        );
    }
    Ok(Registration {
        homography: r.homography,
        matches: matches.len(),
        inliers: r.inliers.len(),
    })
}

/// `P_W = clamp(|v| / alpha_F, 0, 1)` over a flow magnitude map; `None` when
/// the normalizer is zero.
pub fn normalize_flow(magnitude: &Plane<f32>, percentile: f64) -> Option<(ProbabilityMap, f32)> {
    let alpha = nearest_rank(magnitude.data(), percentile)?;
    if !(alpha > 0.0) {
        return None;
    }
    Some((magnitude.map(|&m| (m / alpha).clamp(0.0, 1.0)), alpha))
}

#[derive(Clone, Debug)]
pub struct MotionCue {
    pub p_water: ProbabilityMap,
    pub p_non_water: ProbabilityMap,
    pub valid: Mask,
    pub alpha_f: f32,
    pub registration: Registration,
    /// Crop window at full resolution.
    pub region: Rect,
}

/// Motion cue for `curr` from the pair `(prev, curr)`, computed at
/// `cue_scale` and returned at full resolution. Registration and alignment
/// failures, and a zero normalizer, surface as [`Error::CueUnavailable`].
pub fn motion_probability(prev: &ThermalFrame, curr: &ThermalFrame, params: &MotionCueParams, cue_scale: f64) -> Result<MotionCue> {
    params.validate()?;
    let pair = stretch_pair(prev, curr)?;
    let (w, h) = (curr.width(), curr.height());
    let (cw, ch) = cue_size(w, h, cue_scale)?;
    let (a, b) = if (cw, ch) == (w, h) {
        (pair.a, pair.b)
    } else {
        (resize_bilinear(&pair.a, cw, ch), resize_bilinear(&pair.b, cw, ch))
    };
    let unavailable = |e: Error| match e {
        Error::RegistrationFailed(m) | Error::AlignmentFailed(m) => Error::CueUnavailable(m),
        other => other,
    };
    let registration = register_pair_detailed(&a, &b, params).map_err(unavailable)?;
    let aligned = align_and_crop(&a, &b, &registration.homography).map_err(unavailable)?;
    let flow = dense_flow_with(&aligned.prev_warped, &aligned.curr, &params.flow)?;
    let (pw_crop, alpha_f) = normalize_flow(&flow.magnitude(), params.alpha_f_percentile)
        .ok_or_else(|| Error::CueUnavailable("zero flow: alpha_F = 0".into()))?;

    let region = aligned.region;
    let mut pw_small = Plane::new(cw, ch, 0.0f32);
    let mut valid_small = Mask::new(cw, ch, false);
    for y in 0..region.height {
        for x in 0..region.width {
            *pw_small.get_mut(region.x + x, region.y + y) = pw_crop.at(x, y);
            *valid_small.get_mut(region.x + x, region.y + y) = true;
        }
    }
    let (pw, valid) = if (cw, ch) == (w, h) {
        (pw_small, valid_small)
    } else {
        (resize_bilinear(&pw_small, w, h), resize_nearest(&valid_small, w, h))
    };
    let p_water = pw.zip_map(&valid, |&p, &v| if v { p.clamp(0.0, 1.0) } else { 0.0 });
    let p_non_water = p_water.zip_map(&valid, |&p, &v| if v { 1.0 - p } else { 0.0 });
    let scale_back = w as f64 / cw as f64;
    Ok(MotionCue {
        p_water,
        p_non_water,
        valid,
        alpha_f,
        region: region.scaled(scale_back),
        registration,
    })
}
