use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::imaging::{io, GrayImage, ThermalFrame};
use crate::raster::{connected_components, Mask, Plane};

/// Source of sky masks when no attitude is available.
pub trait SkyProvider: Send + Sync {
    fn sky_mask(&self, frame: &ThermalFrame, img: &GrayImage) -> Option<Mask>;
}

/// Cold, top-touching regions of the raw frame.
#[derive(Clone, Debug, Default)]
pub struct HeuristicSky;

impl SkyProvider for HeuristicSky {
    fn sky_mask(&self, frame: &ThermalFrame, img: &GrayImage) -> Option<Mask> {
        let m = heuristic_sky_mask(frame, img);
        (m.count() > 0).then_some(m)
    }
}

/// Masks loaded from `dir/frame_NNNNNN.png`.
#[derive(Clone, Debug)]
pub struct MaskDirSky {
    pub dir: PathBuf,
}

impl SkyProvider for MaskDirSky {
    fn sky_mask(&self, frame: &ThermalFrame, _img: &GrayImage) -> Option<Mask> {
        let path = self.dir.join(io::frame_file_name(frame.frame_id));
        match io::read_mask(&path) {
            Ok(m) if m.width() == frame.width() && m.height() == frame.height() => Some(m),
            Ok(_) => {
                log::warn!("{}: sky mask size mismatch", path.display());
                None
            }
            Err(_) => None,
        }
    }
}

/// Wraps a closure as a provider (e.g. an external model).
pub struct FnSky<F>(pub F);

impl<F> SkyProvider for FnSky<F>
where
    F: Fn(&ThermalFrame, &GrayImage) -> Option<Mask> + Send + Sync,
{
    fn sky_mask(&self, frame: &ThermalFrame, img: &GrayImage) -> Option<Mask> {
        (self.0)(frame, img)
    }
}

/// Otsu split of a u16 sample.
///
/// Returns the threshold `t` (classes `<= t` and `> t`) together with the
/// class means and the cold-class standard deviation, or `None` for a
/// constant sample.
pub fn otsu_threshold(values: &[u16]) -> Option<(u16, f64, f64, f64)> {
    let mut hist = vec![0u64; 65536];
    let (mut lo, mut hi) = (u16::MAX, 0u16);
    for &v in values {
        hist[v as usize] += 1;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if values.is_empty() || lo == hi {
        return None;
    }
    let n = values.len() as f64;
    let total: f64 = (lo..=hi).map(|v| v as f64 * hist[v as usize] as f64).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let mut best = (lo, f64::NEG_INFINITY);
    for t in lo..hi {
        let c = hist[t as usize] as f64;
        w0 += c;
        sum0 += t as f64 * c;
        if c == 0.0 {
            continue;
        }
        let w1 = n - w0;
        if w1 == 0.0 {
            break;
        }
        let m0 = sum0 / w0;
        let m1 = (total - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.1 {
            best = (t, between);
        }
    }
    let t = best.0;
    let (mut c0, mut s0, mut ss0, mut c1, mut s1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for v in lo..=hi {
        let c = hist[v as usize] as f64;
        let x = v as f64;
        if v <= t {
            c0 += c;
            s0 += c * x;
            ss0 += c * x * x;
        } else {
            c1 += c;
            s1 += c * x;
        }
    }
    let m0 = s0 / c0;
    let m1 = s1 / c1;
    let sd0 = (ss0 / c0 - m0 * m0).max(0.0).sqrt();
    Some((t, m0, m1, sd0))
}

/// Minimum cold/warm separation, in cold-class standard deviations.
const MIN_SEPARATION: f64 = 4.0;
/// Minimum fraction of the frame a sky component must cover.
const MIN_SKY_FRACTION: f64 = 0.005;

/// Stand-in sky segmenter: pixels at or below the Otsu threshold of the raw
/// intensities that belong to a component touching the top row. Requires a
/// well separated cold mode, so uniformly warm frames give an empty mask.
pub fn heuristic_sky_mask(frame: &ThermalFrame, _img: &GrayImage) -> Mask {
    let (w, h) = (frame.width(), frame.height());
    let empty = Plane::new(w, h, false);
    let Some((t, m0, m1, sd0)) = otsu_threshold(frame.pixels.data()) else {
        return empty;
    };
    if m1 - m0 < MIN_SEPARATION * sd0.max(1.0) {
        return empty;
    }
    let cold = frame.pixels.map(|&v| v <= t);
    let (labels, sizes) = connected_components(&cold);
    let min_size = (MIN_SKY_FRACTION * (w * h) as f64).ceil() as usize;
    let mut keep = vec![false; sizes.len()];
    for x in 0..w {
        let l = labels.at(x, 0);
        if l != u32::MAX && sizes[l as usize] >= min_size {
            keep[l as usize] = true;
        }
    }
    labels.map(|&l| l != u32::MAX && keep[l as usize])
}

#[derive(Clone, Debug)]
pub struct SkyRefinement {
    /// Pixels with raw value `< threshold`.
    pub mask: Mask,
    pub threshold: u32,
    pub converged: bool,
    /// Best relative area error after each search step.
    pub error_trace: Vec<f64>,
}

/// Binary search an intensity threshold whose "colder than" mask has an area
/// within `tolerance` (relative) of the reference mask's area.
pub fn refine_sky_mask(raw: &ThermalFrame, reference: &Mask, tolerance: f64) -> Result<SkyRefinement> {
    if !raw.pixels.same_size(reference) {
        return Err(Error::invalid("reference mask size differs from frame"));
    }
    let target = reference.count();
    if target == 0 {
        return Err(Error::invalid("reference sky mask is empty"));
    }
    let mut hist = vec![0usize; 65537];
    let (mut vmin, mut vmax) = (u32::MAX, 0u32);
    for &v in raw.pixels.data() {
        hist[v as usize + 1] += 1;
        vmin = vmin.min(v as u32);
        vmax = vmax.max(v as u32);
    }
    // below[t] = number of pixels with value < t
    let mut below = hist;
    for i in 1..below.len() {
        below[i] += below[i - 1];
    }
    let rel_err = |t: u32| (below[t as usize] as f64 - target as f64).abs() / target as f64;

    let (mut lo, mut hi) = (vmin as i64, vmax as i64 + 1);
    let mut best = (vmin, f64::INFINITY);
    let mut trace = Vec::new();
    let mut converged = false;
    while lo <= hi {
        let mid = ((lo + hi) / 2) as u32;
        let err = rel_err(mid);
        if err < best.1 || (err == best.1 && mid < best.0) {
            best = (mid, err);
        }
        trace.push(best.1);
        if err <= tolerance {
            converged = true;
            break;
        }
        if below[mid as usize] < target {
            lo = mid as i64 + 1;
        } else {
            hi = mid as i64 - 1;
        }
    }
    let threshold = best.0;
    Ok(SkyRefinement {
        mask: raw.pixels.map(|&v| (v as u32) < threshold),
        threshold,
        converged,
        error_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::BitDepth;

    fn frame(w: usize, h: usize, f: impl FnMut(usize, usize) -> u16) -> ThermalFrame {
        ThermalFrame::new(Plane::from_fn(w, h, f), BitDepth::Sixteen, 0, 0).unwrap()
    }

    fn noise(x: usize, y: usize) -> u16 {
        ((x * 7919 + y * 104729) % 61) as u16
    }

    fn gray(f: &ThermalFrame) -> GrayImage {
        f.pixels.map(|_| 0.0)
    }

    #[test]
    fn cold_top_band_is_sky() {
        let f = frame(64, 48, |x, y| if y < 12 { 3000 + noise(x, y) } else { 9000 + noise(x, y) * 10 });
        let m = heuristic_sky_mask(&f, &gray(&f));
        let expect = Plane::from_fn(64, 48, |_, y| y < 12);
        assert_eq!(m, expect);
    }

    #[test]
    fn uniformly_warm_frame_has_no_sky() {
        let f = frame(64, 48, |x, y| 9000 + noise(x, y));
        assert_eq!(heuristic_sky_mask(&f, &gray(&f)).count(), 0);
        let flat = frame(64, 48, |_, _| 9000);
        assert_eq!(heuristic_sky_mask(&flat, &gray(&flat)).count(), 0);
        assert!(HeuristicSky.sky_mask(&flat, &gray(&flat)).is_none());
    }

    #[test]
    fn cold_lake_not_touching_top_is_excluded() {
        let f = frame(64, 48, |x, y| {
            if y < 10 || (y > 34 && (16..48).contains(&x)) {
                3000 + noise(x, y)
            } else {
                9000 + noise(x, y)
            }
        });
        let m = heuristic_sky_mask(&f, &gray(&f));
        assert_eq!(m, Plane::from_fn(64, 48, |_, y| y < 10));
    }

    #[test]
    fn realizable_target_converges_exactly() {
        let f = frame(40, 40, |x, _| (x * 10) as u16);
        let reference = Plane::from_fn(40, 40, |x, y| x < 13 && y < 40);
        let r = refine_sky_mask(&f, &reference, 0.0).unwrap();
        assert!(r.converged);
        assert_eq!(r.mask.count(), reference.count());
        assert!((121..=130).contains(&r.threshold));
    }

    #[test]
    fn constant_frame_cannot_converge() {
        let f = frame(40, 40, |_, _| 500);
        let reference = Plane::from_fn(40, 40, |_, y| y < 10);
        let r = refine_sky_mask(&f, &reference, 0.1).unwrap();
        assert!(!r.converged);
        assert!(r.mask.count() == 0 || r.mask.count() == 1600);
        let all = Plane::new(40, 40, true);
        assert!(refine_sky_mask(&f, &all, 0.0).unwrap().converged);
        assert!(refine_sky_mask(&f, &Plane::new(40, 40, false), 0.1).is_err());
    }

    #[test]
    fn ramp_quarter_area_within_tolerance() {
        // Exhaustive sweep: the best threshold is within tolerance, and the
        // search must land inside [22.5%, 27.5%] of the frame.
        let f = frame(64, 64, |x, y| ((y * 64 + x) * 13 % 4099) as u16);
        let reference = Plane::from_fn(64, 64, |_, y| y < 16);
        let total = 64.0 * 64.0;
        let best_sweep = (0..=4099u32)
            .map(|t| f.pixels.data().iter().filter(|&&v| (v as u32) < t).count())
            .map(|a| (a as f64 - 1024.0).abs() / 1024.0)
            .fold(f64::INFINITY, f64::min);
        assert!(best_sweep <= 0.1);
        let r = refine_sky_mask(&f, &reference, 0.1).unwrap();
        assert!(r.converged);
        let frac = r.mask.count() as f64 / total;
        assert!((0.225..=0.275).contains(&frac), "{frac}");
        assert!(r.error_trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
