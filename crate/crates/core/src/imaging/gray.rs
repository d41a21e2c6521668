use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GrayImage;
use crate::raster::Plane;

/// Three-channel raster with values in `[0, 1]`.
pub type RgbImage = Plane<[f32; 3]>;

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Fixed-weight luminance.
pub fn to_gray_fixed(rgb: &RgbImage) -> GrayImage {
    rgb.map(|p| (LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]).clamp(0.0, 1.0))
}

fn min_max_normalize(values: &Plane<f64>, invert: bool) -> GrayImage {
    let (lo, hi) = values
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    values.map(|&v| {
        let n = if hi > lo { ((v - lo) / (hi - lo)) as f32 } else { 0.0 };
        if invert {
            1.0 - n
        } else {
            n
        }
    })
}

/// Weighted channel mix, min-max normalized, optionally inverted.
pub fn gray_mix(rgb: &RgbImage, weights: [f64; 3], invert: bool) -> GrayImage {
    let mixed = rgb.map(|p| weights[0] * p[0] as f64 + weights[1] * p[1] as f64 + weights[2] * p[2] as f64);
    min_max_normalize(&mixed, invert)
}

fn simplex_weights(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Normalized unit exponentials are uniform on the simplex.
    let e: [f64; 3] = std::array::from_fn(|_| -(1.0 - rng.random::<f64>()).ln());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Random convex channel mix with a coin-flip intensity inversion, both
/// drawn from a stream seeded by `seed`.
pub fn to_gray_random_mix(rgb: &RgbImage, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = simplex_weights(&mut rng);
    let invert = rng.random_bool(0.5);
    gray_mix(rgb, w, invert)
}

/// Channel covariance eigen-decomposition, eigenvalues descending.
///
/// `None` when the covariance has fewer than two significant components.
pub fn channel_pca(rgb: &RgbImage) -> Option<([f64; 3], [Vector3<f64>; 3], Vector3<f64>)> {
    let n = rgb.len() as f64;
    if rgb.is_empty() {
        return None;
    }
    let mut mean = Vector3::zeros();
    for p in rgb.data() {
        mean += Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
    }
    mean /= n;
    let mut cov = Matrix3::zeros();
    for p in rgb.data() {
        let d = Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.map(|i| eig.eigenvalues[i]);
    let vecs = order.map(|i| eig.eigenvectors.column(i).into_owned());
    let scale = vals[0].max(0.0);
    if scale <= 1e-12 || vals[1] <= 1e-9 * scale {
        return None;
    }
    Some((vals, vecs, mean))
}

/// Random convex mix of the two leading principal-component channels,
/// min-max normalized and randomly inverted. Falls back to
/// [`to_gray_fixed`] for rank-deficient colour covariance.
pub fn to_gray_pca_mix(rgb: &RgbImage, seed: u64) -> GrayImage {
    let Some((_, vecs, mean)) = channel_pca(rgb) else {
        return to_gray_fixed(rgb);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: f64 = rng.random();
    let invert = rng.random_bool(0.5);
    let mixed = rgb.map(|p| {
        let d = Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) - mean;
        a * vecs[0].dot(&d) + (1.0 - a) * vecs[1].dot(&d)
    });
    min_max_normalize(&mixed, invert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rgb(w: usize, h: usize, f: impl FnMut(usize, usize) -> [f32; 3]) -> RgbImage {
        Plane::from_fn(w, h, f)
    }

    #[test]
    fn fixed_weights() {
        let img = rgb(2, 1, |x, _| if x == 0 { [1.0, 1.0, 1.0] } else { [1.0, 0.0, 0.0] });
        let g = to_gray_fixed(&img);
        assert!((g.at(0, 0) - 1.0).abs() < 1e-6);
        assert!((g.at(1, 0) - 0.299).abs() < 1e-7);
    }

    #[test]
    fn fixed_matches_scalar_oracle() {
        let vals = [[0.1, 0.7, 0.3], [0.9, 0.2, 0.5], [0.4, 0.4, 0.8], [0.0, 1.0, 0.25]];
        let img = Plane::from_vec(2, 2, vals.to_vec()).unwrap();
        let g = to_gray_fixed(&img);
        for (p, o) in vals.iter().zip(g.data()) {
            let expect = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            assert!((*o as f64 - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_weight_is_normalized_red() {
        let img = rgb(4, 4, |x, y| [(x + y) as f32 / 6.0 * 0.5 + 0.1, 0.9, 0.2]);
        let g = gray_mix(&img, [1.0, 0.0, 0.0], false);
        for (p, o) in img.data().iter().zip(g.data()) {
            let expect = (p[0] - 0.1) / 0.5;
            assert!((o - expect).abs() < 1e-5);
        }
        let inv = gray_mix(&img, [1.0, 0.0, 0.0], true);
        for (a, b) in inv.data().iter().zip(g.data()) {
            assert!((a - (1.0 - b)).abs() < 1e-7);
        }
    }

    #[test]
    fn random_mix_is_seeded() {
        let img = rgb(8, 8, |x, y| [x as f32 / 8.0, y as f32 / 8.0, ((x * y) % 5) as f32 / 5.0]);
        assert_eq!(to_gray_random_mix(&img, 9), to_gray_random_mix(&img, 9));
        assert_eq!(to_gray_pca_mix(&img, 9), to_gray_pca_mix(&img, 9));
    }

    #[test]
    fn replicated_gray_falls_back() {
        let img = rgb(5, 5, |x, y| {
            let v = (x * 5 + y) as f32 / 25.0;
            [v, v, v]
        });
        assert!(channel_pca(&img).is_none());
        assert_eq!(to_gray_pca_mix(&img, 3), to_gray_fixed(&img));
    }

    /// Power iteration on the explicit 3x3 covariance.
    fn leading_eigvec(c: [[f64; 3]; 3]) -> [f64; 3] {
        let mut v = [1.0, 0.5, 0.25];
        for _ in 0..2000 {
            let mut n = [0.0; 3];
            for i in 0..3 {
                n[i] = (0..3).map(|j| c[i][j] * v[j]).sum();
            }
            let norm = n.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = n.map(|x| x / norm);
        }
        v
    }

    #[test]
    fn pca_leading_vector_matches_power_iteration() {
        let px: [[f32; 3]; 4] = [[0.0, 0.1, 0.9], [1.0, 0.3, 0.2], [0.5, 0.9, 0.4], [0.2, 0.6, 0.1]];
        let img = Plane::from_vec(2, 2, px.to_vec()).unwrap();
        let mut mean = [0.0f64; 3];
        for p in &px {
            for c in 0..3 {
                mean[c] += p[c] as f64 / 4.0;
            }
        }
        let mut cov = [[0.0f64; 3]; 3];
        for p in &px {
            for i in 0..3 {
                for j in 0..3 {
                    cov[i][j] += (p[i] as f64 - mean[i]) * (p[j] as f64 - mean[j]) / 4.0;
                }
            }
        }
        let oracle = leading_eigvec(cov);
        let (_, vecs, _) = channel_pca(&img).unwrap();
        let sign = if vecs[0].dot(&Vector3::from(oracle)) < 0.0 { -1.0 } else { 1.0 };
        for i in 0..3 {
            assert!((sign * vecs[0][i] - oracle[i]).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn outputs_in_unit_range(seed in 0u64..1000, vals in proptest::collection::vec(0.0f32..=1.0, 48)) {
            let img = Plane::from_fn(4, 4, |x, y| {
                let i = (y * 4 + x) * 3;
                [vals[i], vals[i + 1], vals[i + 2]]
            });
            for g in [to_gray_fixed(&img), to_gray_random_mix(&img, seed), to_gray_pca_mix(&img, seed)] {
                prop_assert!(g.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
