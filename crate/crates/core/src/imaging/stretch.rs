use super::{BitDepth, GrayImage, ThermalFrame};
use crate::error::{Error, Result};
use crate::raster::Plane;

/// Nearest-rank percentile of a u16 raster via a counting histogram.
pub(crate) fn percentile_u16(values: &[u16], p: f64) -> u16 {
    debug_assert!(!values.is_empty());
    let mut hist = vec![0u32; 65536];
    for &v in values {
        hist[v as usize] += 1;
    }
    percentile_from_hist(&hist, values.len(), p)
}

fn percentile_from_hist(hist: &[u32], n: usize, p: f64) -> u16 {
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    let mut seen = 0usize;
    for (v, &c) in hist.iter().enumerate() {
        seen += c as usize;
        if seen >= rank {
            return v as u16;
        }
    }
    u16::MAX
}

fn apply_bounds(pixels: &Plane<u16>, lo: u16, hi: u16) -> GrayImage {
    if hi <= lo {
        return pixels.map(|_| 0.0);
    }
    let range = (hi - lo) as f32;
    pixels.map(|&v| ((v as f32 - lo as f32) / range).clamp(0.0, 1.0))
}

/// Percentile contrast stretch of a raw raster.
pub fn stretch_raster(pixels: &Plane<u16>, lo_pct: f64, hi_pct: f64) -> Result<GrayImage> {
    if pixels.is_empty() {
        return Err(Error::invalid("empty raster"));
    }
    if !(0.0..=1.0).contains(&lo_pct) || !(0.0..=1.0).contains(&hi_pct) || lo_pct >= hi_pct {
        return Err(Error::invalid(format!(
            "percentiles must satisfy 0 <= lo < hi <= 1, got {lo_pct}, {hi_pct}"
        )));
    }
    let lo = percentile_u16(pixels.data(), lo_pct);
    let hi = percentile_u16(pixels.data(), hi_pct);
    Ok(apply_bounds(pixels, lo, hi))
}

/// Stretch one frame between its `lo_pct` and `hi_pct` nearest-rank
/// percentiles. Constant frames map to zeros.
pub fn stretch_single(frame: &ThermalFrame, lo_pct: f64, hi_pct: f64) -> Result<GrayImage> {
    stretch_raster(&frame.pixels, lo_pct, hi_pct)
}

/// Result of [`stretch_pair`].
#[derive(Clone, Debug)]
pub struct PairStretch {
    pub a: GrayImage,
    pub b: GrayImage,
    /// Shared `(lo, hi)` bounds, `None` when the per-frame fallback was used.
    pub shared_bounds: Option<(u16, u16)>,
}

/// Stretch two frames with common bounds `max(p2)`, `min(p98)` so intensities
/// stay comparable across the pair. Falls back to independent 2/98 stretches
/// when the shared interval is empty.
pub fn stretch_pair(a: &ThermalFrame, b: &ThermalFrame) -> Result<PairStretch> {
    if !a.pixels.same_size(&b.pixels) {
        return Err(Error::invalid("frame pair dimensions differ"));
    }
    if a.bit_depth != b.bit_depth {
        return Err(Error::invalid("frame pair bit depths differ"));
    }
    if a.bit_depth == BitDepth::Eight {
        return Ok(PairStretch {
            a: a.pixels.map(|&v| v as f32 / 255.0),
            b: b.pixels.map(|&v| v as f32 / 255.0),
            shared_bounds: None,
        });
    }
    let lo = percentile_u16(a.pixels.data(), 0.02).max(percentile_u16(b.pixels.data(), 0.02));
    let hi = percentile_u16(a.pixels.data(), 0.98).min(percentile_u16(b.pixels.data(), 0.98));
    if lo >= hi {
        return Ok(PairStretch {
            a: stretch_raster(&a.pixels, 0.02, 0.98)?,
            b: stretch_raster(&b.pixels, 0.02, 0.98)?,
            shared_bounds: None,
        });
    }
    Ok(PairStretch {
        a: apply_bounds(&a.pixels, lo, hi),
        b: apply_bounds(&b.pixels, lo, hi),
        shared_bounds: Some((lo, hi)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(w: usize, h: usize, f: impl FnMut(usize, usize) -> u16) -> ThermalFrame {
        ThermalFrame::new(Plane::from_fn(w, h, f), BitDepth::Sixteen, 0, 0).unwrap()
    }

    fn sorted_percentile(values: &[u16], p: f64) -> u16 {
        let mut v = values.to_vec();
        v.sort_unstable();
        crate::raster::nearest_rank_sorted(&v, p)
    }

    #[test]
    fn full_ramp_saturates_one_percent_each_end() {
        // 256 x 256 = 65536 pixels holding every value exactly once.
        let f = frame(256, 256, |x, y| (y * 256 + x) as u16);
        let out = stretch_single(&f, 0.01, 0.99).unwrap();
        let lo = sorted_percentile(f.pixels.data(), 0.01);
        let hi = sorted_percentile(f.pixels.data(), 0.99);
        assert_eq!((lo, hi), (655, 64880));
        let zeros = out.data().iter().filter(|&&v| v == 0.0).count();
        let ones = out.data().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(zeros, 656);
        assert_eq!(ones, 656);
        let mid = out.at(0, 128);
        assert!((mid - (32768.0 - 655.0) / (64880.0 - 655.0)).abs() < 1e-6);
    }

    #[test]
    fn constant_frame_is_zero() {
        let f = frame(40, 40, |_, _| 500);
        let out = stretch_single(&f, 0.01, 0.99).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_pixel_endpoints() {
        let p = Plane::from_vec(2, 1, vec![0u16, 65535]).unwrap();
        let out = stretch_raster(&p, 0.0, 1.0).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0]);
    }

    #[test]
    fn empty_and_bad_percentiles_rejected() {
        let p = Plane::<u16>::from_vec(0, 0, vec![]).unwrap();
        assert!(matches!(stretch_raster(&p, 0.0, 1.0), Err(Error::InvalidInput(_))));
        let p = Plane::new(4, 4, 3u16);
        assert!(stretch_raster(&p, 0.5, 0.5).is_err());
    }

    /// 50 x 50 frame whose 2nd/98th nearest-rank percentiles are `lo`/`hi`:
    /// ranks 1..=49 at `lo - 50`, ranks 50..=2450 spread over `[lo, hi]`,
    /// the last 50 at `hi + 50`.
    fn frame_with_bounds(lo: u16, hi: u16) -> ThermalFrame {
        let mut vals = vec![lo - 50; 49];
        for i in 0..2401 {
            vals.push(lo + ((hi - lo) as usize * i / 2400) as u16);
        }
        vals.extend(std::iter::repeat(hi + 50).take(50));
        ThermalFrame::new(Plane::from_vec(50, 50, vals).unwrap(), BitDepth::Sixteen, 0, 0).unwrap()
    }

    #[test]
    fn shared_bounds_are_max_lo_min_hi() {
        let a = frame_with_bounds(100, 1000);
        let b = frame_with_bounds(200, 900);
        assert_eq!(sorted_percentile(a.pixels.data(), 0.02), 100);
        assert_eq!(sorted_percentile(a.pixels.data(), 0.98), 1000);
        assert_eq!(sorted_percentile(b.pixels.data(), 0.02), 200);
        assert_eq!(sorted_percentile(b.pixels.data(), 0.98), 900);
        let out = stretch_pair(&a, &b).unwrap();
        assert_eq!(out.shared_bounds, Some((200, 900)));
        let swapped = stretch_pair(&b, &a).unwrap();
        assert_eq!(swapped.a, out.b);
        assert_eq!(swapped.b, out.a);
    }

    #[test]
    fn identical_pair_gives_identical_outputs() {
        let a = frame(40, 40, |x, y| (x * 37 + y * 11) as u16);
        let out = stretch_pair(&a, &a.clone()).unwrap();
        assert_eq!(out.a, out.b);
    }

    #[test]
    fn disjoint_pair_falls_back() {
        let a = frame(40, 40, |_, _| 0);
        let b = frame(40, 40, |_, _| 65535);
        let out = stretch_pair(&a, &b).unwrap();
        assert_eq!(out.shared_bounds, None);
    }

    #[test]
    fn pair_dimension_mismatch() {
        let a = frame(40, 40, |_, _| 0);
        let b = frame(41, 40, |_, _| 0);
        assert!(stretch_pair(&a, &b).is_err());
    }

    proptest! {
        #[test]
        fn monotone_and_idempotent(vals in proptest::collection::vec(0u16..4000, 64), lo in 0.0f64..0.4, span in 0.1f64..0.6) {
            let p = Plane::from_vec(8, 8, vals.clone()).unwrap();
            let out = stretch_raster(&p, lo, lo + span).unwrap();
            for i in 0..64 {
                for j in 0..64 {
                    if vals[i] <= vals[j] {
                        prop_assert!(out.data()[i] <= out.data()[j]);
                    }
                }
            }
            // re-stretching the output grid with the full range is the identity
            let q = out.map(|&v| (v * 65535.0).round() as u16);
            let again = stretch_raster(&q, 0.0, 1.0).unwrap();
            for (a, b) in again.data().iter().zip(q.data()) {
                let expect = if q.data().iter().all(|&v| v == q.data()[0]) { 0.0 } else { *b as f32 / 65535.0 };
                prop_assert!((a - expect).abs() < 1e-6);
            }
        }
    }
}
