use nalgebra::{Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::raster::{pyr_down, resize_bilinear, separable_filter, Plane, Rect};

/// Per-pixel displacement from the first image to the second.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub vx: Plane<f32>,
    pub vy: Plane<f32>,
    /// Where the field lives in the uncropped frame.
    pub valid_region: Rect,
}

impl FlowField {
    pub fn magnitude(&self) -> Plane<f32> {
        self.vx.zip_map(&self.vy, |a, b| (a * a + b * b).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    pub levels: usize,
    pub window: usize,
    pub iterations: usize,
    /// Polynomial neighbourhood side (odd).
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 3,
            window: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.1,
        }
    }
}

/// Quadratic expansion `f(p) ~ p^T A p + b^T p + c` per pixel, stored as
/// `(a11, a22, a12, b1, b2)` with `p = (x, y)` offsets.
struct Expansion {
    a11: Plane<f32>,
    a22: Plane<f32>,
    a12: Plane<f32>,
    b1: Plane<f32>,
    b2: Plane<f32>,
}

/// Weighted least-squares fit of `{1, x, y, x^2, y^2, xy}` under a Gaussian
/// applicability, computed as six separable correlations followed by the
/// inverse Gram matrix.
fn poly_expand(img: &Plane<f32>, n: usize, sigma: f64) -> Expansion {
    let r = (n / 2) as isize;
    let a: Vec<f64> = (-r..=r).map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let t: Vec<f64> = (-r..=r).map(|t| t as f64).collect();
    let k0: Vec<f32> = a.iter().map(|&v| v as f32).collect();
    let k1: Vec<f32> = a.iter().zip(&t).map(|(&v, &t)| (v * t) as f32).collect();
    let k2: Vec<f32> = a.iter().zip(&t).map(|(&v, &t)| (v * t * t) as f32).collect();

    // Gram matrix over basis order (1, x, y, xx, yy, xy).
    let basis = |x: f64, y: f64| Vector6::new(1.0, x, y, x * x, y * y, x * y);
    let mut g = Matrix6::<f64>::zeros();
    for (j, &ty) in t.iter().enumerate() {
        for (i, &tx) in t.iter().enumerate() {
            let b = basis(tx, ty);
            g += a[i] * a[j] * b * b.transpose();
        }
    }
    let gi = g.try_inverse().expect("polynomial Gram matrix is positive definite");

    // separable_filter(img, kx, ky) correlates rows with kx and columns with ky.
    let r0 = separable_filter(img, &k0, &k0);
    let rx = separable_filter(img, &k1, &k0);
    let ry = separable_filter(img, &k0, &k1);
    let rxx = separable_filter(img, &k2, &k0);
    let ryy = separable_filter(img, &k0, &k2);
    let rxy = separable_filter(img, &k1, &k1);
    let (w, h) = (img.width(), img.height());
    let mut e = Expansion {
        a11: Plane::new(w, h, 0.0),
        a22: Plane::new(w, h, 0.0),
        a12: Plane::new(w, h, 0.0),
        b1: Plane::new(w, h, 0.0),
        b2: Plane::new(w, h, 0.0),
    };
    for i in 0..w * h {
        let rv = Vector6::new(
            r0.data()[i] as f64,
            rx.data()[i] as f64,
            ry.data()[i] as f64,
            rxx.data()[i] as f64,
            ryy.data()[i] as f64,
            rxy.data()[i] as f64,
        );
        let c = gi * rv;
        e.b1.data_mut()[i] = c[1] as f32;
        e.b2.data_mut()[i] = c[2] as f32;
        e.a11.data_mut()[i] = c[3] as f32;
        e.a22.data_mut()[i] = c[4] as f32;
        e.a12.data_mut()[i] = (c[5] / 2.0) as f32;
    }
    e
}

fn box_blur(p: &Plane<f32>, n: usize) -> Plane<f32> {
    let k = vec![1.0 / n as f32; n];
    separable_filter(p, &k, &k)
}

/// One displacement update at a single pyramid level.
fn update(e1: &Expansion, e2: &Expansion, vx: &mut Plane<f32>, vy: &mut Plane<f32>, window: usize) {
    let (w, h) = (vx.width(), vx.height());
    let mut g11 = Plane::new(w, h, 0.0f32);
    let mut g12 = Plane::new(w, h, 0.0f32);
    let mut g22 = Plane::new(w, h, 0.0f32);
    let mut h1 = Plane::new(w, h, 0.0f32);
    let mut h2 = Plane::new(w, h, 0.0f32);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (vx.at(x, y), vy.at(x, y));
            let (sx, sy) = (x as f32 + dx, y as f32 + dy);
            let (a11, a22, a12, db1, db2);
            if sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f32 && sy <= (h - 1) as f32 {
                a11 = 0.5 * (e1.a11.at(x, y) + e2.a11.sample_bilinear(sx, sy));
                a22 = 0.5 * (e1.a22.at(x, y) + e2.a22.sample_bilinear(sx, sy));
                a12 = 0.5 * (e1.a12.at(x, y) + e2.a12.sample_bilinear(sx, sy));
                db1 = -0.5 * (e2.b1.sample_bilinear(sx, sy) - e1.b1.at(x, y)) + a11 * dx + a12 * dy;
                db2 = -0.5 * (e2.b2.sample_bilinear(sx, sy) - e1.b2.at(x, y)) + a12 * dx + a22 * dy;
            } else {
                // Displaced outside the second image: no evidence here.
                (a11, a22, a12, db1, db2) = (0.0, 0.0, 0.0, 0.0, 0.0);
            }
            *g11.get_mut(x, y) = a11 * a11 + a12 * a12;
            *g12.get_mut(x, y) = a12 * (a11 + a22);
            *g22.get_mut(x, y) = a12 * a12 + a22 * a22;
            *h1.get_mut(x, y) = a11 * db1 + a12 * db2;
            *h2.get_mut(x, y) = a12 * db1 + a22 * db2;
        }
    }
    let (g11, g12, g22, h1, h2) = (
        box_blur(&g11, window),
        box_blur(&g12, window),
        box_blur(&g22, window),
        box_blur(&h1, window),
        box_blur(&h2, window),
    );
    for i in 0..w * h {
        let (a, b, c) = (g11.data()[i] as f64, g12.data()[i] as f64, g22.data()[i] as f64);
        let idet = 1.0 / (a * c - b * b + 1e-3);
        let (r1, r2) = (h1.data()[i] as f64, h2.data()[i] as f64);
        vx.data_mut()[i] = ((c * r1 - b * r2) * idet) as f32;
        vy.data_mut()[i] = ((a * r2 - b * r1) * idet) as f32;
    }
}

/// Polynomial-expansion dense flow from `a` to `b` (`a(x) ~ b(x + v(x))`),
/// coarse to fine over a Gaussian pyramid.
pub fn dense_flow(a: &GrayImage, b: &GrayImage) -> Result<FlowField> {
    dense_flow_with(a, b, &FlowParams::default())
}

pub fn dense_flow_with(a: &GrayImage, b: &GrayImage, p: &FlowParams) -> Result<FlowField> {
    if !a.same_size(b) {
        return Err(Error::invalid("dense_flow: image sizes differ"));
    }
    if p.poly_n % 2 == 0 || p.window == 0 || p.levels == 0 {
        return Err(Error::InvalidConfig("flow: poly_n must be odd, window and levels positive".into()));
    }
    // Work on a 0..255 scale so the determinant regularizer is negligible.
    let mut pa = vec![a.map(|v| v * 255.0)];
    let mut pb = vec![b.map(|v| v * 255.0)];
    for _ in 1..p.levels {
        let (la, lb) = (pa.last().unwrap(), pb.last().unwrap());
        if la.width() < 16 || la.height() < 16 {
            break;
        }
        let (na, nb) = (pyr_down(la), pyr_down(lb));
        pa.push(na);
        pb.push(nb);
    }
    let mut flow: Option<(Plane<f32>, Plane<f32>)> = None;
    for level in (0..pa.len()).rev() {
        let (w, h) = (pa[level].width(), pa[level].height());
        let (mut vx, mut vy) = match flow.take() {
            None => (Plane::new(w, h, 0.0f32), Plane::new(w, h, 0.0f32)),
            Some((fx, fy)) => {
                let (sx, sy) = (w as f32 / fx.width() as f32, h as f32 / fx.height() as f32);
                (resize_bilinear(&fx, w, h).map(|v| v * sx), resize_bilinear(&fy, w, h).map(|v| v * sy))
            }
        };
        let e1 = poly_expand(&pa[level], p.poly_n, p.poly_sigma);
        let e2 = poly_expand(&pb[level], p.poly_n, p.poly_sigma);
        for _ in 0..p.iterations {
            update(&e1, &e2, &mut vx, &mut vy, p.window);
        }
        flow = Some((vx, vy));
    }
    let (vx, vy) = flow.expect("at least one pyramid level");
    Ok(FlowField {
        vx,
        vy,
        valid_region: Rect::full(a.width(), a.height()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{gaussian_blur, nearest_rank};

    fn smooth_texture(w: usize, h: usize, shift: f32) -> GrayImage {
        Plane::from_fn(w, h, |x, y| {
            let (x, y) = (x as f32 - shift, y as f32);
            0.5 + 0.2 * (x * 0.21).sin() * (y * 0.17).cos() + 0.15 * (x * 0.07 + y * 0.11).sin() + 0.1 * (x * 0.13 - y * 0.23).cos()
        })
    }

    fn interior<T: Copy>(p: &Plane<T>, m: usize) -> Vec<T> {
        let mut v = Vec::new();
        for y in m..p.height() - m {
            for x in m..p.width() - m {
                v.push(p.at(x, y));
            }
        }
        v
    }

    #[test]
    fn polynomial_expansion_is_exact_on_quadratics() {
        let img = Plane::from_fn(21, 21, |x, y| {
            let (x, y) = (x as f32 - 10.0, y as f32 - 10.0);
            0.3 + 0.02 * x - 0.01 * y + 0.004 * x * x + 0.002 * y * y - 0.003 * x * y
        });
        let e = poly_expand(&img, 5, 1.1);
        let tol = 1e-4;
        assert!((e.b1.at(10, 10) - 0.02).abs() < tol);
        assert!((e.b2.at(10, 10) + 0.01).abs() < tol);
        assert!((e.a11.at(10, 10) - 0.004).abs() < tol);
        assert!((e.a22.at(10, 10) - 0.002).abs() < tol);
        assert!((e.a12.at(10, 10) + 0.0015).abs() < tol);
    }

    #[test]
    fn identical_images_have_zero_flow() {
        let a = smooth_texture(96, 80, 0.0);
        let f = dense_flow(&a, &a).unwrap();
        assert!(f.magnitude().data().iter().all(|&m| m < 1e-3));
    }

    #[test]
    fn recovers_horizontal_shift() {
        let a = smooth_texture(128, 96, 0.0);
        let b = smooth_texture(128, 96, 2.0);
        let f = dense_flow(&a, &b).unwrap();
        let vx = nearest_rank(&interior(&f.vx, 16), 0.5).unwrap();
        let vy = nearest_rank(&interior(&f.vy, 16), 0.5).unwrap();
        assert!((vx - 2.0).abs() < 0.5, "vx {vx}");
        assert!(vy.abs() < 0.5, "vy {vy}");
    }

    #[test]
    fn moving_region_dominates_static() {
        // Static land on top; animated water texture on the bottom half.
        let noise = |x: f32, y: f32| 0.5 + 0.25 * (x * 0.3).sin() * (y * 0.27).cos() + 0.2 * (x * 0.11 + y * 0.19).sin();
        let land = |x: usize, y: usize| 0.5 + 0.3 * ((x as f32 * 0.19).cos() * (y as f32 * 0.23).sin());
        let a = Plane::from_fn(128, 96, |x, y| if y < 48 { land(x, y) } else { noise(x as f32, y as f32) });
        let b = Plane::from_fn(128, 96, |x, y| if y < 48 { land(x, y) } else { noise(x as f32 - 2.5, y as f32 - 1.5) });
        let (a, b) = (gaussian_blur(&a, 0.7), gaussian_blur(&b, 0.7));
        let m = dense_flow(&a, &b).unwrap().magnitude();
        let mean = |y0: usize, y1: usize| {
            let v: Vec<f32> = (y0..y1).flat_map(|y| (16..112).map(move |x| (x, y))).map(|(x, y)| m.at(x, y)).collect();
            v.iter().sum::<f32>() / v.len() as f32
        };
        let (land_m, water_m) = (mean(8, 36), mean(60, 88));
        assert!(water_m >= 3.0 * land_m, "water {water_m} land {land_m}");
    }
}
