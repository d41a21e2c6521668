use crate::imaging::GrayImage;
use crate::raster::{gaussian_blur, Plane};

/// A difference-of-Gaussians scale-space extremum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    /// Column in input-image pixels.
    pub x: f32,
    /// Row in input-image pixels.
    pub y: f32,
    pub octave: usize,
    /// DoG level within the octave, `1..=levels`.
    pub level: usize,
    /// Signed DoG value at the extremum.
    pub response: f32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DogParams {
    pub octaves: usize,
    pub levels: usize,
    pub sigma0: f32,
    /// Blur already present in the input.
    pub input_sigma: f32,
    /// Start from a 2x upsampled base so scales just above `sigma0` are
    /// covered by the extremum levels.
    pub double_base: bool,
    pub contrast_threshold: f32,
    pub edge_ratio: f32,
}

impl Default for DogParams {
    fn default() -> Self {
        Self {
            octaves: 3,
            levels: 3,
            sigma0: 1.6,
            input_sigma: 0.5,
            double_base: true,
            contrast_threshold: 0.03,
            edge_ratio: 10.0,
        }
    }
}

const BORDER: usize = 2;

pub fn detect_dog_keypoints(img: &GrayImage) -> Vec<Keypoint> {
    detect_dog_keypoints_with(img, &DogParams::default())
}

/// Scale-space extrema of a DoG pyramid with `levels + 3` Gaussians per
/// octave, filtered by absolute contrast and the principal-curvature ratio.
pub fn detect_dog_keypoints_with(img: &GrayImage, p: &DogParams) -> Vec<Keypoint> {
    let k = 2f32.powf(1.0 / p.levels as f32);
    let n_gauss = p.levels + 3;
    let sigmas: Vec<f32> = (0..n_gauss).map(|i| p.sigma0 * k.powi(i as i32)).collect();
    let edge_limit = (p.edge_ratio + 1.0).powi(2) / p.edge_ratio;

    let (start, have) = if p.double_base {
        (upsample2(img), 2.0 * p.input_sigma)
    } else {
        (img.clone(), p.input_sigma)
    };
    let base_blur = (p.sigma0 * p.sigma0 - have * have).max(0.0).sqrt();
    let mut base = gaussian_blur(&start, base_blur);
    let (iw, ih) = (img.width() as f32, img.height() as f32);
    let mut out = Vec::new();
    for octave in 0..p.octaves {
        if base.width() < 2 * BORDER + 3 || base.height() < 2 * BORDER + 3 {
            break;
        }
        let mut gauss = Vec::with_capacity(n_gauss);
        gauss.push(base.clone());
        for i in 1..n_gauss {
            let inc = (sigmas[i] * sigmas[i] - sigmas[i - 1] * sigmas[i - 1]).sqrt();
            let next = gaussian_blur(&gauss[i - 1], inc);
            gauss.push(next);
        }
        let dogs: Vec<Plane<f32>> = gauss.windows(2).map(|g| g[1].zip_map(&g[0], |a, b| a - b)).collect();
        let (w, h) = (base.width(), base.height());
        let scale = (1usize << octave) as f32 * if p.double_base { 0.5 } else { 1.0 };
        for level in 1..=p.levels {
            let (lo, d, hi) = (&dogs[level - 1], &dogs[level], &dogs[level + 1]);
            for y in BORDER..h - BORDER {
                for x in BORDER..w - BORDER {
                    let v = d.at(x, y);
                    if v.abs() < p.contrast_threshold || !is_extremum(lo, d, hi, x, y, v) {
                        continue;
                    }
                    let dxx = d.at(x + 1, y) + d.at(x - 1, y) - 2.0 * v;
                    let dyy = d.at(x, y + 1) + d.at(x, y - 1) - 2.0 * v;
                    let dxy = (d.at(x + 1, y + 1) - d.at(x - 1, y + 1) - d.at(x + 1, y - 1) + d.at(x - 1, y - 1)) / 4.0;
                    let tr = dxx + dyy;
                    let det = dxx * dyy - dxy * dxy;
                    if det <= 0.0 || tr * tr / det >= edge_limit {
                        continue;
                    }
                    let (kx, ky) = (x as f32 * scale, y as f32 * scale);
                    if kx > iw - 1.0 || ky > ih - 1.0 {
                        continue;
                    }
                    out.push(Keypoint {
                        x: kx,
                        y: ky,
                        octave,
                        level,
                        response: v,
                    });
                }
            }
        }
        let src = &gauss[p.levels];
        base = Plane::from_fn(w / 2, h / 2, |x, y| src.at(2 * x, 2 * y));
    }
    out
}

/// Corner-aligned 2x bilinear upsampling: output pixel `2i` is input `i`.
fn upsample2(img: &GrayImage) -> GrayImage {
    Plane::from_fn(2 * img.width(), 2 * img.height(), |x, y| img.sample_bilinear(x as f32 / 2.0, y as f32 / 2.0))
}

/// Strict extremum over the 26 scale-space neighbours.
fn is_extremum(lo: &Plane<f32>, d: &Plane<f32>, hi: &Plane<f32>, x: usize, y: usize, v: f32) -> bool {
    let max = v > 0.0;
    for (li, layer) in [lo, d, hi].into_iter().enumerate() {
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if li == 1 && nx == x && ny == y {
                    continue;
                }
                let n = layer.at(nx, ny);
                if (max && n >= v) || (!max && n <= v) {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(size: usize, cx: f32, cy: f32, sigma: f32) -> GrayImage {
        Plane::from_fn(size, size, |x, y| {
            let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        assert!(detect_dog_keypoints(&Plane::new(64, 64, 0.4)).is_empty());
    }

    #[test]
    fn single_blob_gives_one_centered_keypoint() {
        let img = blob(48, 24.0, 24.0, 2.0);
        let kps = detect_dog_keypoints(&img);
        assert_eq!(kps.len(), 1, "{kps:?}");
        assert!((kps[0].x - 24.0).abs() <= 1.0 && (kps[0].y - 24.0).abs() <= 1.0);
        assert!(kps[0].response < 0.0);
    }

    #[test]
    fn blob_scale_matches_brute_force_scan() {
        // Oracle: centre value of every DoG layer in the pyramid, computed
        // directly from blurred copies of the upsampled image. The detected
        // layer must hold the largest magnitude among its scale neighbours.
        let img = blob(48, 24.0, 24.0, 2.0);
        let kp = detect_dog_keypoints(&img)[0];
        let p = DogParams::default();
        let k = 2f32.powf(1.0 / 3.0);
        let up = upsample2(&img);
        let centre = |sigma_in_up: f32| {
            let s = (sigma_in_up * sigma_in_up - 1.0).sqrt();
            gaussian_blur(&up, s).at(48, 48)
        };
        let dog = |i: i32| {
            let s = p.sigma0 * k.powi(i) * (1 << kp.octave) as f32;
            centre(s * k) - centre(s)
        };
        let l = kp.level as i32;
        assert_eq!(kp.octave, 0, "{kp:?}");
        assert!(dog(l).abs() > dog(l - 1).abs() && dog(l).abs() > dog(l + 1).abs());
    }

    #[test]
    fn straight_edge_interior_is_rejected() {
        let img = Plane::from_fn(64, 64, |x, _| if x < 32 { 0.0 } else { 1.0 });
        let kps = detect_dog_keypoints(&img);
        // Along an infinite edge Dyy = Dxy = 0, so det = 0 and the ratio
        // test must reject every candidate away from the image ends.
        assert!(kps.iter().all(|k| k.y < 8.0 || k.y > 56.0), "{kps:?}");
    }

    #[test]
    fn keypoints_inside_image() {
        let img = Plane::from_fn(80, 60, |x, y| (((x * 7 + y * 13) % 11) as f32) / 10.0);
        for k in detect_dog_keypoints(&img) {
            assert!(k.x >= 0.0 && k.x < 80.0 && k.y >= 0.0 && k.y < 60.0);
        }
    }
}
