use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Projective map `x_dst ~ H x_src`, normalized so `h[2][2] = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    /// Rotation by `angle` radians about `(cx, cy)` followed by a shift.
    pub fn rigid(angle: f64, tx: f64, ty: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let m = Matrix3::new(
            c,
            -s,
            cx - c * cx + s * cy + tx,
            s,
            c,
            cy - s * cx - c * cy + ty,
            0.0,
            0.0,
            1.0,
        );
        Self(m)
    }

    /// Normalizes by `h[2][2]`; fails for singular or non-finite matrices.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let z = m[(2, 2)];
        if !m.iter().all(|v| v.is_finite()) || z.abs() < 1e-12 {
            return Err(Error::invalid("homography is not normalizable"));
        }
        let m = m / z;
        if m.determinant().abs() < 1e-12 {
            return Err(Error::invalid("homography is singular"));
        }
        Ok(Self(m))
    }

    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let v = self.0 * Vector3::new(x, y, 1.0);
        (v.z.abs() > 1e-12).then(|| (v.x / v.z, v.y / v.z))
    }

    pub fn inverse(&self) -> Option<Self> {
        self.0.try_inverse().and_then(|m| Self::new(m).ok())
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &Homography) -> Option<Self> {
        Self::new(self.0 * other.0).ok()
    }

    /// `H' = S H S^-1` for an isotropic image rescale by `s`.
    pub fn rescaled(&self, s: f64) -> Self {
        let sm = Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0);
        let si = Matrix3::new(1.0 / s, 0.0, 0.0, 0.0, 1.0 / s, 0.0, 0.0, 0.0, 1.0);
        Self(sm * self.0 * si)
    }

    /// Mean distance between the images of the four corners of a
    /// `w x h` frame under `self` and `other`.
    pub fn corner_error(&self, other: &Homography, w: usize, h: usize) -> f64 {
        let corners = [(0.0, 0.0), (w as f64 - 1.0, 0.0), (0.0, h as f64 - 1.0), (w as f64 - 1.0, h as f64 - 1.0)];
        corners
            .iter()
            .map(|&(x, y)| match (self.apply(x, y), other.apply(x, y)) {
                (Some(a), Some(b)) => ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(),
                _ => f64::INFINITY,
            })
            .sum::<f64>()
            / 4.0
    }
}

pub type Correspondence = ((f64, f64), (f64, f64));

/// Similarity taking points to zero mean and mean norm sqrt(2).
fn normalizer(pts: impl Iterator<Item = (f64, f64)> + Clone) -> Matrix3<f64> {
    let n = pts.clone().count() as f64;
    let (mx, my) = pts.clone().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (mx / n, my / n);
    let d = pts.map(|p| ((p.0 - mx).powi(2) + (p.1 - my).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if d > 1e-12 { std::f64::consts::SQRT_2 / d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

/// Normalized direct linear transform over `>= 4` correspondences.
pub fn dlt(corr: &[Correspondence]) -> Option<Homography> {
    if corr.len() < 4 {
        return None;
    }
    let ts = normalizer(corr.iter().map(|c| c.0));
    let td = normalizer(corr.iter().map(|c| c.1));
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for &(s, d) in corr {
        let p = ts * Vector3::new(s.0, s.1, 1.0);
        let q = td * Vector3::new(d.0, d.1, 1.0);
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r1 = SVector::<f64, 9>::from([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        let r2 = SVector::<f64, 9>::from([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
        ata += r1 * r1.transpose() + r2 * r2.transpose();
    }
    let eig = ata.symmetric_eigen();
    let (imin, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = eig.eigenvectors.column(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let m = td.try_inverse()? * hn * ts;
    Homography::new(m).ok()
}

fn transfer_error2(h: &Homography, c: &Correspondence) -> f64 {
    match h.apply(c.0 .0, c.0 .1) {
        Some((x, y)) => (x - c.1 .0).powi(2) + (y - c.1 .1).powi(2),
        None => f64::INFINITY,
    }
}

/// Gauss-Newton on the forward transfer error over the 8 free entries.
pub fn refine(h: &Homography, corr: &[Correspondence], iters: usize) -> Homography {
    let mut best = *h;
    let mut best_cost: f64 = corr.iter().map(|c| transfer_error2(&best, c)).sum();
    for _ in 0..iters {
        let m = best.0;
        let mut jtj = DMatrix::<f64>::zeros(8, 8);
        let mut jtr = DMatrix::<f64>::zeros(8, 1);
        for &((x, y), (u, v)) in corr {
            let w = m[(2, 0)] * x + m[(2, 1)] * y + 1.0;
            let px = (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / w;
            let py = (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / w;
            let jx = [x / w, y / w, 1.0 / w, 0.0, 0.0, 0.0, -px * x / w, -px * y / w];
            let jy = [0.0, 0.0, 0.0, x / w, y / w, 1.0 / w, -py * x / w, -py * y / w];
            let (rx, ry) = (px - u, py - v);
            for i in 0..8 {
                jtr[i] += jx[i] * rx + jy[i] * ry;
                for j in 0..8 {
                    jtj[(i, j)] += jx[i] * jx[j] + jy[i] * jy[j];
                }
            }
        }
        for i in 0..8 {
            jtj[(i, i)] *= 1.0 + 1e-9;
        }
        let Some(step) = jtj.lu().solve(&jtr) else { break };
        let mut next = m;
        for i in 0..8 {
            next[(i / 3, i % 3)] -= step[i];
        }
        let Ok(cand) = Homography::new(next) else { break };
        let cost: f64 = corr.iter().map(|c| transfer_error2(&cand, c)).sum();
        if !(cost < best_cost) {
            break;
        }
        let done = best_cost - cost < 1e-12 * best_cost.max(1e-12);
        best = cand;
        best_cost = cost;
        if done {
            break;
        }
    }
    best
}

fn degenerate(pts: [(f64, f64); 4]) -> bool {
    for i in 0..4 {
        for j in i + 1..4 {
            for k in j + 1..4 {
                let (a, b, c) = (pts[i], pts[j], pts[k]);
                let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
                if cross.abs() < 1.0 {
                    return true;
                }
            }
        }
    }
    false
}

#[derive(Clone, Debug)]
pub struct RansacResult {
    pub homography: Homography,
    pub inliers: Vec<usize>,
}

/// RANSAC over minimal 4-point DLT hypotheses, then DLT and Gauss-Newton
/// refinement on the consensus set. Stops early once a 99.9% confidence
/// bound on the iteration count is reached.
pub fn ransac(corr: &[Correspondence], threshold: f64, iters: usize, seed: u64) -> Option<RansacResult> {
    let n = corr.len();
    if n < 4 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t2 = threshold * threshold;
    let mut best: Vec<usize> = Vec::new();
    let mut limit = iters;
    let mut it = 0;
    while it < limit {
        it += 1;
        let idx = sample(&mut rng, n, 4);
        let pick: Vec<Correspondence> = idx.iter().map(|i| corr[i]).collect();
        if degenerate([pick[0].0, pick[1].0, pick[2].0, pick[3].0]) || degenerate([pick[0].1, pick[1].1, pick[2].1, pick[3].1]) {
            continue;
        }
        let Some(h) = dlt(&pick) else { continue };
        let inl: Vec<usize> = (0..n).filter(|&i| transfer_error2(&h, &corr[i]) < t2).collect();
        if inl.len() > best.len() {
            best = inl;
            let frac = best.len() as f64 / n as f64;
            let p_good = frac.powi(4);
            if p_good >= 1.0 {
                break;
            }
            let need = ((1.0f64 - 0.999).ln() / (1.0 - p_good).ln()).ceil();
            if need.is_finite() && need >= 0.0 {
                limit = limit.min((need as usize).max(it));
            }
        }
    }
    if best.len() < 4 {
        return None;
    }
    let mut inliers = best;
    let mut h = dlt(&inliers.iter().map(|&i| corr[i]).collect::<Vec<_>>())?;
    for _ in 0..2 {
        let set: Vec<Correspondence> = inliers.iter().map(|&i| corr[i]).collect();
        h = refine(&h, &set, 10);
        let next: Vec<usize> = (0..n).filter(|&i| transfer_error2(&h, &corr[i]) < t2).collect();
        if next.len() < 4 || next == inliers {
            break;
        }
        inliers = next;
    }
    Some(RansacResult { homography: h, inliers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> Vec<(f64, f64)> {
        (0..6).flat_map(|i| (0..5).map(move |j| (20.0 + 37.0 * i as f64, 15.0 + 41.0 * j as f64))).collect()
    }

    #[test]
    fn dlt_recovers_exact_homography() {
        let h = Homography::new(Matrix3::new(1.02, 0.03, 5.0, -0.02, 0.98, -3.0, 1e-5, -2e-5, 1.0)).unwrap();
        let corr: Vec<Correspondence> = grid().into_iter().map(|p| (p, h.apply(p.0, p.1).unwrap())).collect();
        let e = dlt(&corr).unwrap();
        assert!((e.0 - h.0).norm() < 1e-8, "{}", e.0);
    }

    #[test]
    fn ransac_ignores_outliers() {
        let h = Homography::rigid(0.03, 4.0, -2.0, 100.0, 80.0);
        let mut corr: Vec<Correspondence> = grid().into_iter().map(|p| (p, h.apply(p.0, p.1).unwrap())).collect();
        for k in 0..10 {
            corr.push(((10.0 * k as f64, 200.0 - 7.0 * k as f64), (150.0 - 11.0 * k as f64, 3.0 * k as f64)));
        }
        let r = ransac(&corr, 3.0, 1000, 1).unwrap();
        assert_eq!(r.inliers, (0..30).collect::<Vec<_>>());
        assert!(r.homography.corner_error(&h, 240, 200) < 1e-6);
    }

    #[test]
    fn refine_reduces_noisy_error() {
        let h = Homography::translation(5.0, 1.0);
        let corr: Vec<Correspondence> = grid()
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let q = h.apply(p.0, p.1).unwrap();
                (p, (q.0 + 0.3 * ((i * 7 % 5) as f64 - 2.0) / 2.0, q.1))
            })
            .collect();
        let start = Homography::translation(4.0, 0.0);
        let cost = |h: &Homography| corr.iter().map(|c| transfer_error2(h, c)).sum::<f64>();
        let r = refine(&start, &corr, 20);
        assert!(cost(&r) < cost(&start));
        assert!(cost(&r) <= cost(&dlt(&corr).unwrap()) + 1e-9);
    }

    #[test]
    fn inverse_and_rescale() {
        let h = Homography::rigid(0.05, 3.0, 2.0, 50.0, 40.0);
        let i = h.inverse().unwrap();
        let (x, y) = i.apply(h.apply(10.0, 20.0).unwrap().0, h.apply(10.0, 20.0).unwrap().1).unwrap();
        assert!((x - 10.0).abs() < 1e-9 && (y - 20.0).abs() < 1e-9);
        let t = Homography::translation(4.0, -2.0).rescaled(0.5);
        assert_eq!(t.apply(0.0, 0.0), Some((2.0, -1.0)));
    }

    proptest! {
        #[test]
        fn rigid_maps_center_to_shift(a in -0.1f64..0.1, tx in -10.0f64..10.0, ty in -10.0f64..10.0) {
            let h = Homography::rigid(a, tx, ty, 64.0, 48.0);
            let (x, y) = h.apply(64.0, 48.0).unwrap();
            prop_assert!((x - 64.0 - tx).abs() < 1e-9 && (y - 48.0 - ty).abs() < 1e-9);
        }
    }
}
