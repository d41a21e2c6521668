use super::GrayImage;
use crate::error::{Error, Result};
use crate::raster::Plane;

#[derive(Clone, Debug, PartialEq)]
pub struct ClaheParams {
    /// Histogram clip height as a multiple of the uniform bin height.
    /// `f32::INFINITY` disables clipping.
    pub clip_limit: f32,
    /// Tile grid as `(rows, cols)`.
    pub tiles: (usize, usize),
    pub bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            clip_limit: 2.0,
            tiles: (8, 8),
            bins: 256,
        }
    }
}

/// Contrast limited adaptive histogram equalization on a `[0, 1]` image.
///
/// Intensities are quantized to `bins` levels. Each tile's clipped histogram
/// (excess spread evenly over all bins) yields a mid-rank lookup table
/// `(cdf(b - 1) + h(b) / 2) / n`, and pixels blend the four nearest tile
/// tables bilinearly. The image is reflect-padded so the grid divides it.
pub fn clahe(img: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    let (rows, cols) = params.tiles;
    let (w, h) = (img.width(), img.height());
    if img.is_empty() {
        return Err(Error::invalid("empty image"));
    }
    if rows == 0 || cols == 0 || rows > h || cols > w {
        return Err(Error::invalid(format!("tile grid {rows}x{cols} does not fit {w}x{h}")));
    }
    if params.bins < 2 || params.clip_limit.is_nan() || params.clip_limit <= 0.0 {
        return Err(Error::invalid("clip limit must be positive and bins >= 2"));
    }
    let bins = params.bins;
    let pw = w.div_ceil(cols) * cols;
    let ph = h.div_ceil(rows) * rows;
    let (left, top) = ((pw - w) / 2, (ph - h) / 2);
    let quant = img.map(|&v| ((v.clamp(0.0, 1.0) * bins as f32) as usize).min(bins - 1) as u16);
    let padded = quant.pad_reflect(left, pw - w - left, top, ph - h - top);
    let (tw, th) = (pw / cols, ph / rows);
    let tile_area = (tw * th) as f32;

    let mut luts = vec![vec![0.0f32; bins]; rows * cols];
    for ty in 0..rows {
        for tx in 0..cols {
            let mut hist = vec![0.0f32; bins];
            for y in ty * th..(ty + 1) * th {
                for &b in &padded.row(y)[tx * tw..(tx + 1) * tw] {
                    hist[b as usize] += 1.0;
                }
            }
            if params.clip_limit.is_finite() {
                let limit = params.clip_limit * tile_area / bins as f32;
                let mut excess = 0.0;
                for v in hist.iter_mut() {
                    if *v > limit {
                        excess += *v - limit;
                        *v = limit;
                    }
                }
                let share = excess / bins as f32;
                hist.iter_mut().for_each(|v| *v += share);
            }
            let lut = &mut luts[ty * cols + tx];
            let mut below = 0.0f32;
            for b in 0..bins {
                lut[b] = ((below + 0.5 * hist[b]) / tile_area).clamp(0.0, 1.0);
                below += hist[b];
            }
        }
    }

    let axis = |p: usize, size: usize, n: usize| {
        let t = ((p as f32 + 0.5) / size as f32 - 0.5).clamp(0.0, (n - 1) as f32);
        let i0 = t.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, t - i0 as f32)
    };
    let mut out = Plane::new(w, h, 0.0f32);
    for y in 0..h {
        let (y0, y1, fy) = axis(y + top, th, rows);
        for x in 0..w {
            let (x0, x1, fx) = axis(x + left, tw, cols);
            let b = quant.at(x, y) as usize;
            let v00 = luts[y0 * cols + x0][b];
            let v01 = luts[y0 * cols + x1][b];
            let v10 = luts[y1 * cols + x0][b];
            let v11 = luts[y1 * cols + x1][b];
            let top_row = v00 * (1.0 - fx) + v01 * fx;
            let bot_row = v10 * (1.0 - fx) + v11 * fx;
            *out.get_mut(x, y) = (top_row * (1.0 - fy) + bot_row * fy).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}
