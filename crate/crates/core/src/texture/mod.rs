//! Texture cue: water is smooth, so superpixels with few DoG keypoints are
//! likely water.

mod dog;
mod slic;

pub use dog::{detect_dog_keypoints, detect_dog_keypoints_with, DogParams, Keypoint};
pub use slic::{slic, SuperpixelMap};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::raster::{gaussian_blur_radius, resize_bilinear, ProbabilityMap};
#[cfg(test)]
use crate::raster::Plane;

/// Cue-scale size the defaults were chosen for (half of 640x512).
pub const REFERENCE_CUE_SIZE: (usize, usize) = (320, 256);

#[derive(Clone, Debug, PartialEq)]
pub struct TextureCueParams {
    /// Keypoint count at which a superpixel is fully non-water.
    pub alpha_t: f32,
    pub smoothing_sigma: f32,
    pub smoothing_radius: usize,
    pub n_superpixels: usize,
    pub compactness: f64,
    pub slic_iters: usize,
}

impl Default for TextureCueParams {
    fn default() -> Self {
        Self {
            alpha_t: 10.0,
            smoothing_sigma: 15.0,
            smoothing_radius: 31,
            n_superpixels: 200,
            compactness: 10.0,
            slic_iters: 10,
        }
    }
}

impl TextureCueParams {
    /// Defaults rescaled so superpixel area and blur width stay the same
    /// fraction of the frame at a cue image of `width x height`.
    pub fn for_cue_size(width: usize, height: usize) -> Self {
        let d = Self::default();
        let (rw, rh) = REFERENCE_CUE_SIZE;
        let s = ((width * height) as f64 / (rw * rh) as f64).sqrt();
        let max_sp = (width * height / 16).max(2);
        Self {
            smoothing_sigma: d.smoothing_sigma * s as f32,
            smoothing_radius: ((d.smoothing_radius as f64 * s).round() as usize).max(1),
            n_superpixels: ((d.n_superpixels as f64 * s * s).round() as usize).clamp(2, max_sp),
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_t > 0.0) || !self.alpha_t.is_finite() {
            return Err(Error::InvalidConfig(format!("alpha_T must be positive, got {}", self.alpha_t)));
        }
        if !(self.smoothing_sigma >= 0.0) {
            return Err(Error::InvalidConfig("smoothing sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Texture cue and its intermediates.
#[derive(Clone, Debug)]
pub struct TextureCue {
    pub p_water: ProbabilityMap,
    pub p_non_water: ProbabilityMap,
    pub superpixels: SuperpixelMap,
    pub keypoints: Vec<Keypoint>,
    /// Keypoints surviving boundary pruning.
    pub kept: usize,
}

/// Per-superpixel keypoint counts over `alpha_t`, painted onto every member
/// pixel. Keypoints on the boundary mask are ignored.
pub fn keypoint_density(sp: &SuperpixelMap, keypoints: &[Keypoint], alpha_t: f32) -> (ProbabilityMap, usize) {
    let mut counts = vec![0u32; sp.count];
    let mut kept = 0;
    let (w, h) = (sp.labels.width(), sp.labels.height());
    for k in keypoints {
        let (x, y) = ((k.x.round() as usize).min(w - 1), (k.y.round() as usize).min(h - 1));
        if sp.boundary.at(x, y) {
            continue;
        }
        counts[sp.labels.at(x, y) as usize] += 1;
        kept += 1;
    }
    (sp.labels.map(|&l| counts[l as usize] as f32 / alpha_t), kept)
}

/// Texture probability maps at the resolution of `img`.
///
/// `P_notW = clamp(G * (S_kp / alpha_T), 0, 1)` and `P_W = 1 - P_notW`.
pub fn texture_probability(img: &GrayImage, params: &TextureCueParams) -> Result<TextureCue> {
    params.validate()?;
    let superpixels = slic(img, params.n_superpixels, params.compactness, params.slic_iters)?;
    let keypoints = detect_dog_keypoints(img);
    let (density, kept) = keypoint_density(&superpixels, &keypoints, params.alpha_t);
    let p_non_water = if params.smoothing_sigma > 0.0 {
        gaussian_blur_radius(&density, params.smoothing_sigma, params.smoothing_radius)
    } else {
        density
    }
    .map(|&v| v.clamp(0.0, 1.0));
    let p_water = p_non_water.map(|&v| 1.0 - v);
    Ok(TextureCue {
        p_water,
        p_non_water,
        superpixels,
        keypoints,
        kept,
    })
}

/// Computes the cue on `img` downscaled by `cue_scale` and returns
/// `(P_W, P_notW)` bilinearly upsampled back to full size.
pub fn texture_cue(img: &GrayImage, params: &TextureCueParams, cue_scale: f64) -> Result<(ProbabilityMap, ProbabilityMap)> {
    let (w, h) = (img.width(), img.height());
    let (cw, ch) = cue_size(w, h, cue_scale)?;
    let small = if (cw, ch) == (w, h) { img.clone() } else { resize_bilinear(img, cw, ch) };
    let cue = texture_probability(&small, params)?;
    if (cw, ch) == (w, h) {
        return Ok((cue.p_water, cue.p_non_water));
    }
    let pnw = resize_bilinear(&cue.p_non_water, w, h).map(|&v| v.clamp(0.0, 1.0));
    let pw = pnw.map(|&v| 1.0 - v);
    Ok((pw, pnw))
}

pub(crate) fn cue_size(w: usize, h: usize, scale: f64) -> Result<(usize, usize)> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::InvalidConfig(format!("cue scale must be in (0, 1], got {scale}")));
    }
    Ok((((w as f64 * scale).round() as usize).max(1), ((h as f64 * scale).round() as usize).max(1)))
}

/// Per-pixel sum of two maps, used by invariant checks.
#[cfg(test)]
fn sum(a: &Plane<f32>, b: &Plane<f32>) -> Plane<f32> {
    a.zip_map(b, |x, y| x + y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Mask;
    use proptest::prelude::*;

    #[test]
    fn constant_image_is_all_water() {
        let img = Plane::new(64, 64, 0.3f32);
        let c = texture_probability(&img, &TextureCueParams::for_cue_size(64, 64)).unwrap();
        assert!(c.p_non_water.data().iter().all(|&v| v == 0.0));
        assert!(c.p_water.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ten_keypoints_saturate_one_superpixel() {
        let sp = SuperpixelMap {
            labels: Plane::from_fn(20, 10, |x, _| (x >= 10) as u32),
            count: 2,
            boundary: Mask::new(20, 10, false),
        };
        let kps: Vec<Keypoint> = (0..10)
            .map(|i| Keypoint {
                x: 2.0 + (i % 5) as f32,
                y: 2.0 + (i / 5) as f32,
                octave: 0,
                level: 1,
                response: 0.1,
            })
            .collect();
        let (d, kept) = keypoint_density(&sp, &kps, 10.0);
        assert_eq!(kept, 10);
        assert_eq!(d.at(5, 5), 1.0);
        assert_eq!(d.at(15, 5), 0.0);
    }

    #[test]
    fn boundary_keypoints_are_pruned() {
        let labels = Plane::from_fn(20, 10, |x, _| (x >= 10) as u32);
        let sp = SuperpixelMap {
            boundary: slic::boundary_mask(&labels, 2),
            labels,
            count: 2,
        };
        let kp = |x: f32| Keypoint {
            x,
            y: 5.0,
            octave: 0,
            level: 1,
            response: 0.1,
        };
        let (d, kept) = keypoint_density(&sp, &[kp(9.0), kp(11.0), kp(3.0)], 1.0);
        assert_eq!(kept, 1);
        assert_eq!(d.at(0, 0), 1.0);
        assert_eq!(d.at(19, 0), 0.0);
    }

    #[test]
    fn smooth_half_beats_checkerboard_half() {
        let img = Plane::from_fn(160, 128, |x, y| {
            if y >= 64 {
                0.4 + 0.001 * x as f32
            } else if ((x / 3) + (y / 3)) % 2 == 0 {
                0.9
            } else {
                0.1
            }
        });
        let c = texture_probability(&img, &TextureCueParams::for_cue_size(160, 128)).unwrap();
        let top = Mask::from_fn(160, 128, |_, y| y < 64);
        let bottom = top.map(|&b| !b);
        let d = c.p_water.masked_mean(&bottom).unwrap() - c.p_water.masked_mean(&top).unwrap();
        assert!(d >= 0.5, "separation {d}");
    }

    #[test]
    fn rejects_nonpositive_alpha() {
        let p = TextureCueParams {
            alpha_t: 0.0,
            ..Default::default()
        };
        assert!(texture_probability(&Plane::new(64, 64, 0.0), &p).is_err());
    }

    #[test]
    fn params_scale_with_cue_size() {
        let p = TextureCueParams::for_cue_size(320, 256);
        assert_eq!(p, TextureCueParams::default());
        let q = TextureCueParams::for_cue_size(160, 128);
        assert_eq!(q.n_superpixels, 50);
        assert!((q.smoothing_sigma - 7.5).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn maps_complement_and_order_invariant(seed in 0u64..500) {
            let img = Plane::from_fn(64, 48, |x, y| {
                let v = (x as u64).wrapping_mul(0x9E3779B97F4A7C15) ^ (y as u64).wrapping_mul(0xC2B2AE3D27D4EB4F) ^ seed;
                (v.wrapping_mul(0xff51afd7ed558ccd) >> 53) as f32 / 2048.0
            });
            let p = TextureCueParams::for_cue_size(64, 48);
            let c = texture_probability(&img, &p).unwrap();
            prop_assert!(sum(&c.p_water, &c.p_non_water).data().iter().all(|&s| (s - 1.0).abs() < 1e-6));
            let mut rev = c.keypoints.clone();
            rev.reverse();
            let (a, _) = keypoint_density(&c.superpixels, &c.keypoints, p.alpha_t);
            let (b, _) = keypoint_density(&c.superpixels, &rev, p.alpha_t);
            prop_assert_eq!(a, b);
        }
    }
}
