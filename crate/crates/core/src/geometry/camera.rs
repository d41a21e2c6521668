use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Nearest-timestamp window for attaching IMU samples to frames.
pub const IMU_MATCH_TOLERANCE_NS: u64 = 50_000_000;

/// Pinhole camera with its mounting rotation relative to the IMU.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub r_imu_to_cam: Matrix3<f64>,
}

fn check_rotation(r: &Matrix3<f64>, what: &str) -> Result<()> {
    let ortho = (r.transpose() * r - Matrix3::identity()).norm();
    if !r.iter().all(|v| v.is_finite()) || ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("{what} is not a proper rotation")));
    }
    Ok(())
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, r_imu_to_cam: Matrix3<f64>) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        check_rotation(&r_imu_to_cam, "R_imu_to_cam")?;
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            r_imu_to_cam,
        })
    }

    /// Centered principal point, identity mounting.
    pub fn simple(width: usize, height: usize, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            r_imu_to_cam: Matrix3::identity(),
        }
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a camera-frame direction; `None` behind the camera.
    pub fn project(&self, d: &Vector3<f64>) -> Option<(f64, f64)> {
        (d.z > 1e-9).then(|| (self.fx * d.x / d.z + self.cx, self.fy * d.y / d.z + self.cy))
    }

    pub fn pixel_ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    /// Scaled copy for a resized image.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: self.cx * s,
            cy: self.cy * s,
            width: (self.width as f64 * s).round() as usize,
            height: (self.height as f64 * s).round() as usize,
            r_imu_to_cam: self.r_imu_to_cam,
        }
    }
}

/// One attitude measurement: rotation taking level-frame vectors into the
/// IMU frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuSample {
    pub timestamp_ns: u64,
    pub r_uav_to_imu: Matrix3<f64>,
}

impl ImuSample {
    /// From a `(w, x, y, z)` quaternion whose norm is within 1e-6 of one.
    pub fn from_quaternion(timestamp_ns: u64, w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("quaternion norm {norm} is not unit")));
        }
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Ok(Self {
            timestamp_ns,
            r_uav_to_imu: q.to_rotation_matrix().into_inner(),
        })
    }

    pub fn from_rotation(timestamp_ns: u64, r: Matrix3<f64>) -> Result<Self> {
        check_rotation(&r, "R_uav_to_imu")?;
        Ok(Self {
            timestamp_ns,
            r_uav_to_imu: r,
        })
    }

    /// `(w, x, y, z)` with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.r_uav_to_imu));
        let q = q.into_inner();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }
}

/// Level-to-body rotation for a camera-aligned body.
///
/// Positive `pitch` raises the nose (the horizon moves down in the image);
/// positive `roll` tilts the horizon so its image slope is `tan(roll)`.
/// Angles in radians.
pub fn attitude_rotation(pitch: f64, roll: f64) -> Matrix3<f64> {
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let xb = Vector3::new(1.0, 0.0, 0.0);
    let yb = Vector3::new(0.0, cp, sp);
    let zb = Vector3::new(0.0, -sp, cp);
    let xr = xb * cr - yb * sr;
    let yr = xb * sr + yb * cr;
    Matrix3::from_rows(&[xr.transpose(), yr.transpose(), zb.transpose()])
}

/// Time-sorted IMU samples with nearest-timestamp lookup.
#[derive(Clone, Debug, Default)]
pub struct ImuStream {
    samples: Vec<ImuSample>,
}

impl ImuStream {
    pub fn new(mut samples: Vec<ImuSample>) -> Self {
        samples.sort_by_key(|s| s.timestamp_ns);
        Self { samples }
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    /// Nearest sample within [`IMU_MATCH_TOLERANCE_NS`].
    pub fn nearest(&self, timestamp_ns: u64) -> Option<&ImuSample> {
        let i = self.samples.partition_point(|s| s.timestamp_ns < timestamp_ns);
        let mut best: Option<&ImuSample> = None;
        for j in [i.wrapping_sub(1), i] {
            if let Some(s) = self.samples.get(j) {
                let d = s.timestamp_ns.abs_diff(timestamp_ns);
                if d <= IMU_MATCH_TOLERANCE_NS && best.is_none_or(|b| d < b.timestamp_ns.abs_diff(timestamp_ns)) {
                    best = Some(s);
                }
            }
        }
        best
    }
}

/// Camera config: `key = value` lines with `fx fy cx cy height width` and
/// `r_imu_to_cam` as nine row-major numbers. `#` starts a comment.
pub fn read_camera_config(path: &Path) -> Result<CameraModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
    parse_camera_config(&text).map_err(|e| e.at(path))
}

pub(crate) fn parse_camera_config(text: &str) -> Result<CameraModel> {
    let mut vals = std::collections::HashMap::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("expected key = value, got '{line}'")))?;
        vals.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
    }
    let num = |keys: &[&str]| -> Result<f64> {
        let v = keys
            .iter()
            .find_map(|k| vals.get(*k))
            .ok_or_else(|| Error::invalid(format!("camera config missing '{}'", keys[0])))?;
        v.parse::<f64>()
            .map_err(|_| Error::invalid(format!("camera config '{}' is not a number", keys[0])))
    };
    let r = match vals.get("r_imu_to_cam") {
        Some(s) => {
            let v: Vec<f64> = s
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::invalid("r_imu_to_cam must hold 9 numbers"))?;
            if v.len() != 9 {
                return Err(Error::invalid("r_imu_to_cam must hold 9 numbers"));
            }
            Matrix3::from_row_slice(&v)
        }
        None => Matrix3::identity(),
    };
    CameraModel::new(
        num(&["fx"])?,
        num(&["fy"])?,
        num(&["cx"])?,
        num(&["cy"])?,
        num(&["width", "w"])? as usize,
        num(&["height", "h"])? as usize,
        r,
    )
}

pub fn write_camera_config(path: &Path, cam: &CameraModel) -> Result<()> {
    let r = &cam.r_imu_to_cam;
    let text = format!(
        "fx = {:?}\nfy = {:?}\ncx = {:?}\ncy = {:?}\nheight = {}\nwidth = {}\nr_imu_to_cam = {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}\n",
        cam.fx, cam.fy, cam.cx, cam.cy, cam.height, cam.width,
        r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]
    );
    std::fs::write(path, text).map_err(|e| Error::from(e).at(path))
}

/// IMU CSV with header `timestamp_ns,qw,qx,qy,qz`.
pub fn read_imu_csv(path: &Path) -> Result<ImuStream> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::from(e).at(path))?;
    let headers = rdr.headers()?.clone();
    let expected = ["timestamp_ns", "qw", "qx", "qy", "qz"];
    if headers.iter().map(str::trim).ne(expected) {
        return Err(Error::invalid(format!("unexpected IMU header {headers:?}")).at(path));
    }
    let mut samples = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = || Error::invalid(format!("bad IMU row {}", line + 2)).at(path);
        let ts: u64 = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let q: Vec<f64> = (1..5)
            .map(|i| rec.get(i).and_then(|s| s.trim().parse().ok()))
            .collect::<Option<_>>()
            .ok_or_else(bad)?;
        samples.push(ImuSample::from_quaternion(ts, q[0], q[1], q[2], q[3]).map_err(|e| e.at(path))?);
    }
    Ok(ImuStream::new(samples))
}

pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::from(e).at(path))?);
    writeln!(f, "timestamp_ns,qw,qx,qy,qz")?;
    for s in samples {
        let q = s.quaternion();
        writeln!(f, "{},{:?},{:?},{:?},{:?}", s.timestamp_ns, q[0], q[1], q[2], q[3])?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attitude_is_proper_rotation() {
        let r = attitude_rotation(0.3, -0.2);
        assert!(check_rotation(&r, "r").is_ok());
        assert_eq!(attitude_rotation(0.0, 0.0), Matrix3::identity());
    }

    #[test]
    fn quaternion_round_trip() {
        let r = attitude_rotation(-0.17, 0.09);
        let s = ImuSample::from_rotation(5, r).unwrap();
        let q = s.quaternion();
        let back = ImuSample::from_quaternion(5, q[0], q[1], q[2], q[3]).unwrap();
        assert!((back.r_uav_to_imu - r).norm() < 1e-12);
        assert!(ImuSample::from_quaternion(0, 1.0, 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn nearest_sample_within_window() {
        let mk = |t| ImuSample::from_rotation(t, Matrix3::identity()).unwrap();
        let s = ImuStream::new(vec![mk(100_000_000), mk(0), mk(40_000_000)]);
        assert_eq!(s.nearest(45_000_000).unwrap().timestamp_ns, 40_000_000);
        assert_eq!(s.nearest(75_000_000).unwrap().timestamp_ns, 100_000_000);
        assert!(s.nearest(200_000_000).is_none());
    }

    #[test]
    fn camera_config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("camera.txt");
        let cam = CameraModel::new(500.0, 510.0, 320.5, 256.0, 640, 512, attitude_rotation(0.01, 0.02)).unwrap();
        write_camera_config(&p, &cam).unwrap();
        assert_eq!(read_camera_config(&p).unwrap(), cam);
        assert!(parse_camera_config("fx = 1\nfy = 1\ncx = 0\ncy = 0\nwidth = 4").is_err());
    }

    #[test]
    fn imu_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("imu.csv");
        let samples: Vec<_> = (0..5)
            .map(|i| ImuSample::from_rotation(i * 1000, attitude_rotation(0.01 * i as f64, -0.02)).unwrap())
            .collect();
        write_imu_csv(&p, &samples).unwrap();
        let back = read_imu_csv(&p).unwrap();
        for (a, b) in back.samples().iter().zip(&samples) {
            assert_eq!(a.timestamp_ns, b.timestamp_ns);
            assert!((a.r_uav_to_imu - b.r_uav_to_imu).norm() < 1e-12);
        }
    }
}
