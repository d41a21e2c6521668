//! Dense 2D rasters and the small set of filters shared by every stage.

use crate::error::{Error, Result};

/// Row-major 2D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Per-pixel probabilities in `[0, 1]` for a single class.
pub type ProbabilityMap = Plane<f32>;

/// Boolean raster.
pub type Mask = Plane<bool>;

impl<T: Clone> Plane<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn crop(&self, rect: Rect) -> Plane<T> {
        assert!(rect.x + rect.width <= self.width && rect.y + rect.height <= self.height);
        let mut data = Vec::with_capacity(rect.area());
        for y in rect.y..rect.y + rect.height {
            let row = &self.row(y)[rect.x..rect.x + rect.width];
            data.extend_from_slice(row);
        }
        Plane {
            width: rect.width,
            height: rect.height,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> Plane<T> {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            data.extend(self.row(y).iter().rev().cloned());
        }
        Plane {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Extend by `left/right/top/bottom` pixels using mirror reflection
    /// (edge pixel not repeated, `dcb|abcd|cba`).
    pub fn pad_reflect(&self, left: usize, right: usize, top: usize, bottom: usize) -> Plane<T> {
        let w = self.width + left + right;
        let h = self.height + top + bottom;
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = reflect(y as isize - top as isize, self.height);
            for x in 0..w {
                let sx = reflect(x as isize - left as isize, self.width);
                data.push(self.data[sy * self.width + sx].clone());
            }
        }
        Plane {
            width: w,
            height: h,
            data,
        }
    }
}

impl<T> Plane<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "raster {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_size<U>(&self, other: &Plane<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, y: usize) -> &mut [T] {
        &mut self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Plane<U> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn zip_map<U, V>(&self, other: &Plane<U>, mut f: impl FnMut(&T, &U) -> V) -> Plane<V> {
        assert!(self.same_size(other), "raster size mismatch");
        Plane {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }
}

impl<T: Copy> Plane<T> {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    /// Sample with coordinates clamped to the raster.
    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize) -> T {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }
}

impl Plane<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

impl Plane<f32> {
    /// Bilinear sample at continuous pixel coordinates, clamped to the border.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        let maxx = (self.width - 1) as f32;
        let maxy = (self.height - 1) as f32;
        let x = x.clamp(0.0, maxx);
        let y = y.clamp(0.0, maxy);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bot = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Mean over pixels where `mask` is set; `None` when the mask is empty.
    pub fn masked_mean(&self, mask: &Mask) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (&v, &m) in self.data.iter().zip(mask.data()) {
            if m {
                sum += v as f64;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Axis-aligned pixel rectangle `[x, x + width) x [y, y + height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    /// Scale both corners by `s`, rounding inward.
    pub fn scaled(&self, s: f64) -> Rect {
        let x0 = (self.x as f64 * s).ceil() as usize;
        let y0 = (self.y as f64 * s).ceil() as usize;
        let x1 = ((self.x + self.width) as f64 * s).floor() as usize;
        let y1 = ((self.y + self.height) as f64 * s).floor() as usize;
        Rect::new(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }
}

#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Nearest-rank percentile on an already sorted slice: the value at rank
/// `ceil(p * n)` (1-based), with `p = 0` giving the minimum.
pub fn nearest_rank_sorted<T: Copy>(sorted: &[T], p: f64) -> T {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = (p * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Nearest-rank percentile of an unsorted f32 sample (NaNs are not allowed).
pub fn nearest_rank(values: &[f32], p: f64) -> Option<f32> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    let mut v = values.to_vec();
    let (_, kth, _) = v.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    Some(*kth)
}

/// Normalized 1D Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_kernel(sigma: f32, radius: usize) -> Vec<f32> {
    let mut k: Vec<f32> = (0..=2 * radius)
        .map(|i| {
            let d = i as f32 - radius as f32;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable correlation with per-axis kernels (odd length), clamped border.
pub fn separable_filter(img: &Plane<f32>, kx: &[f32], ky: &[f32]) -> Plane<f32> {
    let (w, h) = (img.width(), img.height());
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let mut tmp = Plane::new(w, h, 0.0f32);
    for y in 0..h {
        let src = img.row(y);
        let dst = tmp.row_mut(y);
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kx.iter().enumerate() {
                let sx = (x as isize + i as isize - rx).clamp(0, w as isize - 1) as usize;
                acc += k * src[sx];
            }
            dst[x] = acc;
        }
    }
    let mut out = Plane::new(w, h, 0.0f32);
    for y in 0..h {
        let dst = out.row_mut(y);
        for (i, &k) in ky.iter().enumerate() {
            let sy = (y as isize + i as isize - ry).clamp(0, h as isize - 1) as usize;
            let src = tmp.row(sy);
            for x in 0..w {
                dst[x] += k * src[x];
            }
        }
    }
    out
}

pub fn gaussian_blur(img: &Plane<f32>, sigma: f32) -> Plane<f32> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = ((3.0 * sigma).ceil() as usize).max(1);
    gaussian_blur_radius(img, sigma, radius)
}

pub fn gaussian_blur_radius(img: &Plane<f32>, sigma: f32, radius: usize) -> Plane<f32> {
    let k = gaussian_kernel(sigma, radius);
    separable_filter(img, &k, &k)
}

/// Bilinear resize with pixel-center alignment.
pub fn resize_bilinear(img: &Plane<f32>, width: usize, height: usize) -> Plane<f32> {
    let sx = img.width() as f32 / width as f32;
    let sy = img.height() as f32 / height as f32;
    Plane::from_fn(width, height, |x, y| {
        let fx = (x as f32 + 0.5) * sx - 0.5;
        let fy = (y as f32 + 0.5) * sy - 0.5;
        img.sample_bilinear(fx, fy)
    })
}

/// Nearest-neighbour resize with pixel-center alignment.
pub fn resize_nearest<T: Copy>(img: &Plane<T>, width: usize, height: usize) -> Plane<T> {
    let sx = img.width() as f64 / width as f64;
    let sy = img.height() as f64 / height as f64;
    Plane::from_fn(width, height, |x, y| {
        let fx = (((x as f64 + 0.5) * sx) as usize).min(img.width() - 1);
        let fy = (((y as f64 + 0.5) * sy) as usize).min(img.height() - 1);
        img.at(fx, fy)
    })
}

/// Anti-aliased 2x decimation for pyramids.
pub fn pyr_down(img: &Plane<f32>) -> Plane<f32> {
    let blurred = gaussian_blur(img, 1.0);
    let w = (img.width() / 2).max(1);
    let h = (img.height() / 2).max(1);
    Plane::from_fn(w, h, |x, y| {
        let sx = (2 * x).min(img.width() - 1);
        let sy = (2 * y).min(img.height() - 1);
        let sx1 = (sx + 1).min(img.width() - 1);
        let sy1 = (sy + 1).min(img.height() - 1);
        0.25 * (blurred.at(sx, sy) + blurred.at(sx1, sy) + blurred.at(sx, sy1) + blurred.at(sx1, sy1))
    })
}

/// 4-connected component labelling of the `true` pixels.
///
/// Returns per-pixel component ids (`u32::MAX` for background) and the size
/// of every component.
pub fn connected_components(mask: &Mask) -> (Plane<u32>, Vec<usize>) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = Plane::new(w, h, u32::MAX);
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.data()[start] || labels.data()[start] != u32::MAX {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0usize;
        labels.data_mut()[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.data()[j] && labels.data()[j] == u32::MAX {
                    labels.data_mut()[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keep only the largest 4-connected `true` component (first found wins ties).
pub fn largest_component(mask: &Mask) -> Mask {
    let (labels, sizes) = connected_components(mask);
    let Some((best, _)) = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
    else {
        return mask.clone();
    };
    labels.map(|&l| l == best as u32)
}

/// Binary erosion with a 3x3 square; out-of-frame neighbours are ignored.
pub fn erode3(mask: &Mask) -> Mask {
    morph3(mask, true)
}

/// Binary dilation with a 3x3 square; out-of-frame neighbours are ignored.
pub fn dilate3(mask: &Mask) -> Mask {
    morph3(mask, false)
}

fn morph3(mask: &Mask, erode: bool) -> Mask {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    Plane::from_fn(mask.width(), mask.height(), |x, y| {
        let mut acc = erode;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let v = mask.at(nx as usize, ny as usize);
                if erode {
                    acc &= v;
                } else {
                    acc |= v;
                }
            }
        }
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn nearest_rank_matches_definition() {
        assert_eq!(nearest_rank(&[4.0, 1.0, 3.0, 2.0], 0.75), Some(3.0));
        assert_eq!(nearest_rank(&[4.0, 1.0, 3.0, 2.0], 0.0), Some(1.0));
        assert_eq!(nearest_rank(&[4.0, 1.0, 3.0, 2.0], 1.0), Some(4.0));
        assert_eq!(nearest_rank(&[], 0.5), None);
    }

    #[test]
    fn blur_preserves_constant() {
        let p = Plane::new(9, 7, 0.25f32);
        let b = gaussian_blur(&p, 2.0);
        assert!(b.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn components_and_largest() {
        let m = Plane::from_fn(6, 3, |x, _| x == 0 || x >= 3);
        let (_, sizes) = connected_components(&m);
        assert_eq!(sizes, vec![3, 9]);
        let l = largest_component(&m);
        assert_eq!(l.count(), 9);
        assert!(!l.at(0, 0));
    }

    #[test]
    fn opening_removes_speck() {
        let mut m = Plane::new(8, 8, false);
        *m.get_mut(4, 4) = true;
        assert_eq!(dilate3(&erode3(&m)).count(), 0);
        let full = Plane::new(5, 5, true);
        assert_eq!(erode3(&full).count(), 25);
    }

    #[test]
    fn rect_scaling_rounds_inward() {
        let r = Rect::new(5, 3, 10, 9).scaled(0.5);
        assert_eq!(r, Rect::new(3, 2, 4, 4));
    }
}
