use nalgebra::{Matrix2, SymmetricEigen, Vector2, Vector3};

use super::{CameraModel, ImuSample};
use crate::raster::{Mask, Plane};

/// Number of zero-elevation rays projected for the line fit.
pub const FAN_RAYS: usize = 21;

const UP: Vector3<f64> = Vector3::new(0.0, -1.0, 0.0);

/// Image line `a x + b y + c = 0` with `a^2 + b^2 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HorizonLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Whether the sky side is where `a x + b y + c > 0`.
    pub above_positive: bool,
}

impl HorizonLine {
    pub fn signed(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }

    /// Strictly on the sky side.
    pub fn is_above(&self, x: f64, y: f64) -> bool {
        let s = self.signed(x, y);
        if self.above_positive {
            s > 0.0
        } else {
            s < 0.0
        }
    }

    /// Row where the line crosses column `x`; `None` for vertical lines.
    pub fn row_at(&self, x: f64) -> Option<f64> {
        (self.b.abs() > 1e-12).then(|| -(self.a * x + self.c) / self.b)
    }

    /// Image-space slope `dy/dx`.
    pub fn slope(&self) -> f64 {
        -self.a / self.b
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HorizonEstimate {
    Line(HorizonLine),
    /// The horizon misses the frame; every pixel is on one side.
    NotVisible { all_above: bool },
}

impl HorizonEstimate {
    pub fn line(&self) -> Option<&HorizonLine> {
        match self {
            HorizonEstimate::Line(l) => Some(l),
            HorizonEstimate::NotVisible { .. } => None,
        }
    }
}

fn camera_rotation(cam: &CameraModel, imu: &ImuSample) -> nalgebra::Matrix3<f64> {
    cam.r_imu_to_cam * imu.r_uav_to_imu
}

fn visibility(cam: &CameraModel, line: HorizonLine, up_cam: &Vector3<f64>) -> HorizonEstimate {
    let (w, h) = ((cam.width.max(1) - 1) as f64, (cam.height.max(1) - 1) as f64);
    let corners = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)];
    let signs: Vec<f64> = corners.iter().map(|&(x, y)| line.signed(x, y)).collect();
    if signs.iter().all(|&s| s > 0.0) || signs.iter().all(|&s| s < 0.0) {
        let center = cam.pixel_ray(cam.cx, cam.cy);
        return HorizonEstimate::NotVisible {
            all_above: center.dot(up_cam) > 0.0,
        };
    }
    HorizonEstimate::Line(line)
}

/// Horizon from attitude: a fan of zero-elevation directions across the
/// horizontal field of view is rotated into the camera, projected, and
/// line-fitted by total least squares.
pub fn estimate_horizon(cam: &CameraModel, imu: &ImuSample) -> HorizonEstimate {
    let r = camera_rotation(cam, imu);
    let up_cam = r * UP;
    let fwd = r.transpose() * Vector3::z();
    let heading = if fwd.x.hypot(fwd.z) > 1e-9 { fwd.x.atan2(fwd.z) } else { 0.0 };
    let hfov = 2.0 * (cam.width as f64 / (2.0 * cam.fx)).atan();

    let mut pts = Vec::with_capacity(FAN_RAYS);
    for i in 0..FAN_RAYS {
        let az = heading - hfov / 2.0 + hfov * i as f64 / (FAN_RAYS - 1) as f64;
        let dir = r * Vector3::new(az.sin(), 0.0, az.cos());
        if let Some((u, v)) = cam.project(&dir) {
            pts.push(Vector2::new(u, v));
        }
    }
    if pts.len() < 2 {
        let center = cam.pixel_ray(cam.cx, cam.cy);
        return HorizonEstimate::NotVisible {
            all_above: center.dot(&up_cam) > 0.0,
        };
    }
    let n = pts.len() as f64;
    let centroid = pts.iter().sum::<Vector2<f64>>() / n;
    let mut cov = Matrix2::zeros();
    for p in &pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let major = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
    let dir = eig.eigenvectors.column(major);
    let (a, b) = (-dir[1], dir[0]);
    let c = -(a * centroid.x + b * centroid.y);

    // Nudge the central ray upward to find the sky side.
    let mid = r * (Vector3::new(heading.sin(), 0.0, heading.cos()) + UP * 0.1);
    let above_positive = match cam.project(&mid) {
        Some((u, v)) => a * u + b * v + c > 0.0,
        None => {
            let ray = cam.pixel_ray(centroid.x, centroid.y) + up_cam * 1e-3;
            a * (cam.fx * ray.x / ray.z + cam.cx) + b * (cam.fy * ray.y / ray.z + cam.cy) + c > 0.0
        }
    };
    visibility(cam, HorizonLine { a, b, c, above_positive }, &up_cam)
}

/// Closed-form horizon `l = K^-T (R up)`: a pixel is above exactly when its
/// viewing ray has positive elevation.
pub fn exact_horizon(cam: &CameraModel, imu: &ImuSample) -> HorizonEstimate {
    let up_cam = camera_rotation(cam, imu) * UP;
    let k_inv = cam.intrinsics().try_inverse().expect("positive focal lengths");
    let l = k_inv.transpose() * up_cam;
    let norm = l.x.hypot(l.y);
    if norm < 1e-12 {
        return HorizonEstimate::NotVisible {
            all_above: up_cam.z > 0.0,
        };
    }
    let line = HorizonLine {
        a: l.x / norm,
        b: l.y / norm,
        c: l.z / norm,
        above_positive: true,
    };
    visibility(cam, line, &up_cam)
}

/// Pixels strictly on the sky side of the horizon.
pub fn above_horizon_mask(horizon: &HorizonEstimate, width: usize, height: usize) -> Mask {
    match horizon {
        HorizonEstimate::Line(l) => Plane::from_fn(width, height, |x, y| l.is_above(x as f64, y as f64)),
        HorizonEstimate::NotVisible { all_above } => Plane::new(width, height, *all_above),
    }
}
