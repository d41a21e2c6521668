use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::raster::{Mask, Plane, Rect};

use super::Homography;

/// Samples `src` at `H^-1 x` for every output pixel `x`; the mask marks
/// pixels whose source position lies inside `src`.
pub fn warp_image(src: &GrayImage, h: &Homography, width: usize, height: usize) -> Result<(GrayImage, Mask)> {
    let inv = h.inverse().ok_or_else(|| Error::AlignmentFailed("homography is not invertible".into()))?;
    let m = inv.0;
    let (sw, sh) = (src.width() as f64 - 1.0, src.height() as f64 - 1.0);
    let mut out = Plane::new(width, height, 0.0f32);
    let mut valid = Mask::new(width, height, false);
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            let z = m[(2, 0)] * xf + m[(2, 1)] * yf + m[(2, 2)];
            if z.abs() < 1e-12 {
                continue;
            }
            let sx = (m[(0, 0)] * xf + m[(0, 1)] * yf + m[(0, 2)]) / z;
            let sy = (m[(1, 0)] * xf + m[(1, 1)] * yf + m[(1, 2)]) / z;
            const EPS: f64 = 1e-9;
            if sx < -EPS || sy < -EPS || sx > sw + EPS || sy > sh + EPS {
                continue;
            }
            *out.get_mut(x, y) = bilinear64(src, sx, sy);
            *valid.get_mut(x, y) = true;
        }
    }
    Ok((out, valid))
}

fn bilinear64(img: &GrayImage, x: f64, y: f64) -> f32 {
    let (w, h) = (img.width() - 1, img.height() - 1);
    let x = x.clamp(0.0, w as f64);
    let y = y.clamp(0.0, h as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w), (y0 + 1).min(h));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let v = |x: usize, y: usize| img.at(x, y) as f64;
    let top = v(x0, y0) * (1.0 - fx) + v(x1, y0) * fx;
    let bot = v(x0, y1) * (1.0 - fx) + v(x1, y1) * fx;
    (top * (1.0 - fy) + bot * fy) as f32
}

/// Largest axis-aligned rectangle of `true` pixels (maximal-histogram scan;
/// ties keep the first found in raster order).
pub fn largest_rectangle(mask: &Mask) -> Option<Rect> {
    let (w, h) = (mask.width(), mask.height());
    let mut heights = vec![0usize; w];
    let mut best: Option<Rect> = None;
    let mut stack: Vec<usize> = Vec::with_capacity(w + 1);
    for y in 0..h {
        for x in 0..w {
            heights[x] = if mask.at(x, y) { heights[x] + 1 } else { 0 };
        }
        stack.clear();
        for x in 0..=w {
            let cur = if x < w { heights[x] } else { 0 };
            while let Some(&top) = stack.last() {
                if heights[top] <= cur {
                    break;
                }
                stack.pop();
                let height = heights[top];
                let left = stack.last().map_or(0, |&l| l + 1);
                let width = x - left;
                if best.is_none_or(|b| width * height > b.area()) {
                    best = Some(Rect::new(left, y + 1 - height, width, height));
                }
            }
            stack.push(x);
        }
    }
    best.filter(|r| r.area() > 0)
}

/// Aligned pair restricted to the common valid area.
#[derive(Clone, Debug)]
pub struct AlignedPair {
    pub curr: GrayImage,
    pub prev_warped: GrayImage,
    /// Crop window in `curr` coordinates.
    pub region: Rect,
}

/// Warps `prev` into `curr`'s frame with `h` (prev to curr) and crops both to
/// the largest rectangle covered by the warped image.
pub fn align_and_crop(prev: &GrayImage, curr: &GrayImage, h: &Homography) -> Result<AlignedPair> {
    if !prev.same_size(curr) {
        return Err(Error::invalid("align_and_crop: frame sizes differ"));
    }
    let (warped, valid) = warp_image(prev, h, curr.width(), curr.height())?;
    let region = largest_rectangle(&valid).ok_or_else(|| Error::AlignmentFailed("frames do not overlap".into()))?;
    Ok(AlignedPair {
        curr: curr.crop(region),
        prev_warped: warped.crop(region),
        region,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texture(w: usize, h: usize) -> GrayImage {
        Plane::from_fn(w, h, |x, y| ((x * 31 + y * 17) % 23) as f32 / 22.0)
    }

    #[test]
    fn identity_keeps_full_frame() {
        let img = texture(64, 48);
        let a = align_and_crop(&img, &img, &Homography::identity()).unwrap();
        assert_eq!(a.region, Rect::full(64, 48));
        assert_eq!(a.prev_warped, img);
    }

    #[test]
    fn translation_trims_overlap() {
        let img = Plane::new(640, 40, 0.5f32);
        let a = align_and_crop(&img, &img, &Homography::translation(5.0, 0.0)).unwrap();
        assert_eq!(a.region, Rect::new(5, 0, 635, 40));
        assert_eq!(a.curr.width(), a.prev_warped.width());
    }

    #[test]
    fn disjoint_frames_fail() {
        let img = Plane::new(40, 40, 0.5f32);
        assert!(matches!(
            align_and_crop(&img, &img, &Homography::translation(100.0, 0.0)),
            Err(Error::AlignmentFailed(_))
        ));
    }

    #[test]
    fn rectangle_oracle_small_masks() {
        // Exhaustive search over all rectangles.
        let pattern = ["..####..", ".######.", "########", "###..###", "#######."];
        let mask = Mask::from_fn(8, 5, |x, y| pattern[y].as_bytes()[x] == b'#');
        let mut best = 0;
        for y0 in 0..5 {
            for x0 in 0..8 {
                for y1 in y0..5 {
                    for x1 in x0..8 {
                        if (y0..=y1).all(|y| (x0..=x1).all(|x| mask.at(x, y))) {
                            best = best.max((x1 - x0 + 1) * (y1 - y0 + 1));
                        }
                    }
                }
            }
        }
        let r = largest_rectangle(&mask).unwrap();
        assert_eq!(r.area(), best);
        assert!((r.y..r.y + r.height).all(|y| (r.x..r.x + r.width).all(|x| mask.at(x, y))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn warp_matches_inverse_map_oracle(a in -0.05f64..0.05, tx in -6.0f64..6.0, ty in -6.0f64..6.0) {
            let img = texture(48, 40);
            let h = Homography::rigid(a, tx, ty, 24.0, 20.0);
            let (w, valid) = warp_image(&img, &h, 48, 40).unwrap();
            let inv = h.0.try_inverse().unwrap();
            for y in 0..40 {
                for x in 0..48 {
                    let p = inv * nalgebra::Vector3::new(x as f64, y as f64, 1.0);
                    let (sx, sy) = (p.x / p.z, p.y / p.z);
                    let inside = sx >= -1e-9 && sy >= -1e-9 && sx <= 47.0 + 1e-9 && sy <= 39.0 + 1e-9;
                    prop_assert_eq!(valid.at(x, y), inside);
                    if inside {
                        let (x0, y0) = (sx.floor().clamp(0.0, 47.0), sy.floor().clamp(0.0, 39.0));
                        let (fx, fy) = (sx - x0, sy - y0);
                        let (x0, y0) = (x0 as usize, y0 as usize);
                        let (x1, y1) = ((x0 + 1).min(47), (y0 + 1).min(39));
                        let v = |x: usize, y: usize| img.at(x, y) as f64;
                        let o = v(x0, y0) * (1.0 - fx) * (1.0 - fy) + v(x1, y0) * fx * (1.0 - fy)
                            + v(x0, y1) * (1.0 - fx) * fy + v(x1, y1) * fx * fy;
                        prop_assert!((w.at(x, y) as f64 - o).abs() < 1e-6, "{} vs {}", w.at(x, y), o);
                    }
                }
            }
        }
    }
}
