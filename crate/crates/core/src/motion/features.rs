use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::imaging::GrayImage;
use crate::raster::{gaussian_blur, Plane};

const PATCH_HALF: i32 = 15;
const BORDER: usize = PATCH_HALF as usize + 1;
const HARRIS_K: f32 = 0.04;
const NMS_RADIUS: usize = 2;

/// Corner with a 256-bit BRIEF descriptor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feature {
    pub x: f32,
    pub y: f32,
    pub score: f32,
    pub descriptor: [u64; 4],
}

fn brief_pattern() -> &'static [(i32, i32, i32, i32); 256] {
    static PATTERN: OnceLock<[(i32, i32, i32, i32); 256]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6272_6965_66);
        let normal = Normal::new(0.0f64, (2 * PATCH_HALF + 1) as f64 / 5.0).expect("valid sigma");
        let mut draw = || (normal.sample(&mut rng).round() as i32).clamp(-PATCH_HALF, PATCH_HALF);
        let mut p = [(0, 0, 0, 0); 256];
        for e in p.iter_mut() {
            *e = (draw(), draw(), draw(), draw());
        }
        p
    })
}

/// Harris response of the Gaussian-weighted structure tensor.
pub fn harris_response(img: &GrayImage) -> Plane<f32> {
    let s = gaussian_blur(img, 1.0);
    let (w, h) = (s.width(), s.height());
    let mut ixx = Plane::new(w, h, 0.0f32);
    let mut iyy = Plane::new(w, h, 0.0f32);
    let mut ixy = Plane::new(w, h, 0.0f32);
    for y in 0..h {
        for x in 0..w {
            let p = |dx: isize, dy: isize| s.at_clamped(x as isize + dx, y as isize + dy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1)) / 8.0;
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1)) / 8.0;
            *ixx.get_mut(x, y) = gx * gx;
            *iyy.get_mut(x, y) = gy * gy;
            *ixy.get_mut(x, y) = gx * gy;
        }
    }
    let (a, b, c) = (gaussian_blur(&ixx, 1.5), gaussian_blur(&iyy, 1.5), gaussian_blur(&ixy, 1.5));
    Plane::from_fn(w, h, |x, y| {
        let (a, b, c) = (a.at(x, y), b.at(x, y), c.at(x, y));
        a * b - c * c - HARRIS_K * (a + b) * (a + b)
    })
}

/// Up to `max_features` Harris corners (non-maximum suppressed, strongest
/// first) with BRIEF descriptors on a smoothed image.
pub fn detect_features(img: &GrayImage, max_features: usize) -> Vec<Feature> {
    let (w, h) = (img.width(), img.height());
    if w <= 2 * BORDER || h <= 2 * BORDER {
        return Vec::new();
    }
    let r = harris_response(img);
    let max_r = r.data().iter().copied().fold(0.0f32, f32::max);
    let floor = (1e-3 * max_r).max(1e-10);
    let mut cands = Vec::new();
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            let v = r.at(x, y);
            if v <= floor {
                continue;
            }
            let mut is_max = true;
            'nms: for ny in y - NMS_RADIUS..=y + NMS_RADIUS {
                for nx in x - NMS_RADIUS..=x + NMS_RADIUS {
                    let n = r.at(nx, ny);
                    // Ties resolve to the first pixel in raster order.
                    if n > v || (n == v && (ny, nx) < (y, x)) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                cands.push((v, x, y));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    cands.truncate(max_features);

    let smooth = gaussian_blur(img, 2.0);
    let pattern = brief_pattern();
    cands
        .into_iter()
        .map(|(score, x, y)| {
            let mut d = [0u64; 4];
            for (i, &(x1, y1, x2, y2)) in pattern.iter().enumerate() {
                let a = smooth.at((x as i32 + x1) as usize, (y as i32 + y1) as usize);
                let b = smooth.at((x as i32 + x2) as usize, (y as i32 + y2) as usize);
                if a < b {
                    d[i / 64] |= 1 << (i % 64);
                }
            }
            let (ox, oy) = subpixel_offset(&r, x, y);
            Feature {
                x: x as f32 + ox,
                y: y as f32 + oy,
                score,
                descriptor: d,
            }
        })
        .collect()
}

/// Per-axis parabola vertex through the response peak and its neighbours.
fn subpixel_offset(r: &Plane<f32>, x: usize, y: usize) -> (f32, f32) {
    let vertex = |m: f32, c: f32, p: f32| {
        let denom = m - 2.0 * c + p;
        if denom < 0.0 {
            (0.5 * (m - p) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let c = r.at(x, y);
    (
        vertex(r.at(x - 1, y), c, r.at(x + 1, y)),
        vertex(r.at(x, y - 1), c, r.at(x, y + 1)),
    )
}

pub fn hamming(a: &[u64; 4], b: &[u64; 4]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Brute-force nearest neighbours passing the ratio test, as
/// `(query index, train index)` pairs.
pub fn match_features(query: &[Feature], train: &[Feature], ratio: f32) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (qi, q) in query.iter().enumerate() {
        let (mut best, mut second, mut best_j) = (u32::MAX, u32::MAX, 0);
        for (tj, t) in train.iter().enumerate() {
            let d = hamming(&q.descriptor, &t.descriptor);
            if d < best {
                second = best;
                best = d;
                best_j = tj;
            } else if d < second {
                second = d;
            }
        }
        if best != u32::MAX && (second == u32::MAX || (best as f32) < ratio * second as f32) {
            out.push((qi, best_j));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bilinear value noise on a `cell`-pixel lattice, shifted by `dx`.
    fn checker(w: usize, h: usize, cell: usize, dx: usize) -> GrayImage {
        let node = |i: usize, j: usize| {
            let mut z = (i as u64) << 32 | j as u64;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            ((z ^ (z >> 31)) >> 40) as f32 / (1u64 << 24) as f32
        };
        Plane::from_fn(w, h, |x, y| {
            let (fx, fy) = ((x + dx) as f32 / cell as f32, y as f32 / cell as f32);
            let (i, j) = (fx as usize, fy as usize);
            let (tx, ty) = (fx - i as f32, fy - j as f32);
            let top = node(i, j) * (1.0 - tx) + node(i + 1, j) * tx;
            let bot = node(i, j + 1) * (1.0 - tx) + node(i + 1, j + 1) * tx;
            top * (1.0 - ty) + bot * ty
        })
    }

    #[test]
    fn flat_image_has_no_corners() {
        assert!(detect_features(&Plane::new(64, 64, 0.5), 100).is_empty());
    }

    #[test]
    fn corners_are_found_and_bounded() {
        let f = detect_features(&checker(96, 80, 8, 0), 50);
        assert!(!f.is_empty() && f.len() <= 50);
        assert!(f.windows(2).all(|p| p[0].score >= p[1].score));
        for c in &f {
            assert!(c.x >= BORDER as f32 && c.x < (96 - BORDER) as f32);
        }
    }

    #[test]
    fn shifted_image_matches_with_constant_offset() {
        let a = checker(128, 96, 8, 0);
        let b = checker(128, 96, 8, 3);
        let fa = detect_features(&a, 200);
        let fb = detect_features(&b, 200);
        let m = match_features(&fa, &fb, 0.75);
        assert!(m.len() >= 10);
        let good = m.iter().filter(|&&(i, j)| (fa[i].x - fb[j].x - 3.0).abs() < 0.5 && fa[i].y == fb[j].y).count();
        assert!(good * 10 >= m.len() * 8, "{good}/{}", m.len());
    }

    #[test]
    fn hamming_counts_bits() {
        assert_eq!(hamming(&[0b1011, 0, 0, u64::MAX], &[0, 0, 0, 0]), 3 + 64);
    }
}
