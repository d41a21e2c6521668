use super::real::Real;

/// Dense `N x C x H x W` tensor, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub data: Vec<T>,
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            data: vec![T::zero(); n * c * h * w],
            n,
            c,
            h,
            w,
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == n * c * h * w).then_some(Self { data, n, c, h, w })
    }

    pub fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn item(&self, b: usize) -> &[T] {
        let l = self.item_len();
        &self.data[b * l..(b + 1) * l]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let l = self.item_len();
        &mut self.data[b * l..(b + 1) * l]
    }

    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let p = self.h * self.w;
        let o = (b * self.c + c) * p;
        &self.data[o..o + p]
    }

    pub fn same_shape(&self, o: &Self) -> bool {
        (self.n, self.c, self.h, self.w) == (o.n, o.c, o.h, o.w)
    }

    pub fn add_assign(&mut self, o: &Self) {
        debug_assert!(self.same_shape(o));
        self.data.iter_mut().zip(&o.data).for_each(|(a, &b)| *a += b);
    }
}

/// Convolution geometry: square kernel, zero padding `k / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        ((h + 2 * p - self.k) / self.stride + 1, (w + 2 * p - self.k) / self.stride + 1)
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }
}

fn im2col<T: Real>(x: &[T], h: usize, w: usize, s: &ConvShape, ho: usize, wo: usize, cols: &mut Vec<T>) {
    let (k, st, pad) = (s.k, s.stride, s.pad() as isize);
    cols.clear();
    cols.resize(s.cin * k * k * ho * wo, T::zero());
    for c in 0..s.cin {
        let src = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * st + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * st + kx) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            *d = srow[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], h: usize, w: usize, s: &ConvShape, ho: usize, wo: usize, dx: &mut [T]) {
    let (k, st, pad) = (s.k, s.stride, s.pad() as isize);
    for c in 0..s.cin {
        let dst = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * st + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * st + kx) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[iy as usize * w + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y = act(W * x + b)` with `W` laid out `[cout][cin][k][k]`.
pub fn conv_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], s: &ConvShape, relu: bool) -> Tensor<T> {
    assert_eq!(x.c, s.cin, "conv input channels");
    let (ho, wo) = s.out_size(x.h, x.w);
    let mut y = Tensor::zeros(x.n, s.cout, ho, wo);
    let kk = s.cin * s.k * s.k;
    let p = ho * wo;
    let mut cols = Vec::new();
    for b in 0..x.n {
        let src: &[T] = if s.is_pointwise() {
            x.item(b)
        } else {
            im2col(x.item(b), x.h, x.w, s, ho, wo, &mut cols);
            &cols
        };
        let out = y.item_mut(b);
        for (co, row) in out.chunks_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v = bias[co]);
        }
        T::gemm(s.cout, kk, p, T::one(), weight, kk as isize, 1, src, p as isize, 1, T::one(), out, p as isize, 1);
        if relu {
            out.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
    }
    y
}

/// Backward through `conv_forward`. `dy` is the gradient w.r.t. the layer
/// output and is masked in place by the activation. Weight and bias
/// gradients are accumulated into `grads` when given; the input gradient is
/// returned when `want_dx`.
pub fn conv_backward<T: Real>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    dy: &mut Tensor<T>,
    weight: &[T],
    s: &ConvShape,
    relu: bool,
    grads: Option<(&mut [T], &mut [T])>,
    want_dx: bool,
) -> Option<Tensor<T>> {
    if relu {
        dy.data.iter_mut().zip(&y.data).for_each(|(d, &v)| {
            if v <= T::zero() {
                *d = T::zero();
            }
        });
    }
    let (ho, wo) = (y.h, y.w);
    let kk = s.cin * s.k * s.k;
    let p = ho * wo;
    let mut cols = Vec::new();
    let mut dcols = vec![T::zero(); if s.is_pointwise() { 0 } else { kk * p }];
    let mut dx = want_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
    let mut grads = grads;
    for b in 0..x.n {
        let g = dy.item(b);
        if let Some((dw, db)) = grads.as_mut() {
            let src: &[T] = if s.is_pointwise() {
                x.item(b)
            } else {
                im2col(x.item(b), x.h, x.w, s, ho, wo, &mut cols);
                &cols
            };
            // dW += dY * cols^T
            T::gemm(s.cout, p, kk, T::one(), g, p as isize, 1, src, 1, p as isize, T::one(), dw, kk as isize, 1);
            for (co, row) in g.chunks(p).enumerate() {
                db[co] += row.iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            if s.is_pointwise() {
                // dX = W^T dY directly
                T::gemm(kk, s.cout, p, T::one(), weight, 1, kk as isize, g, p as isize, 1, T::one(), dx.item_mut(b), p as isize, 1);
            } else {
                T::gemm(kk, s.cout, p, T::one(), weight, 1, kk as isize, g, p as isize, 1, T::zero(), &mut dcols, p as isize, 1);
                col2im(&dcols, x.h, x.w, s, ho, wo, dx.item_mut(b));
            }
        }
    }
    dx
}

pub fn upsample_nearest2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h2, w2) = (2 * x.h, 2 * x.w);
    let mut y = Tensor::zeros(x.n, x.c, h2, w2);
    for bc in 0..x.n * x.c {
        let src = &x.data[bc * x.h * x.w..(bc + 1) * x.h * x.w];
        let dst = &mut y.data[bc * h2 * w2..(bc + 1) * h2 * w2];
        for yy in 0..h2 {
            for xx in 0..w2 {
                dst[yy * w2 + xx] = src[(yy / 2) * x.w + xx / 2];
            }
        }
    }
    y
}

pub fn upsample_nearest2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for bc in 0..dy.n * dy.c {
        let src = &dy.data[bc * dy.h * dy.w..(bc + 1) * dy.h * dy.w];
        let dst = &mut dx.data[bc * h * w..(bc + 1) * h * w];
        for yy in 0..dy.h {
            for xx in 0..dy.w {
                dst[(yy / 2) * w + xx / 2] += src[yy * dy.w + xx];
            }
        }
    }
    dx
}

/// Source taps `(i0, i1, frac)` for pixel-centre aligned resampling.
fn taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub fn upsample_bilinear<T: Real>(x: &Tensor<T>, h2: usize, w2: usize) -> Tensor<T> {
    let (ty, tx) = (taps(h2, x.h), taps(w2, x.w));
    let mut y = Tensor::zeros(x.n, x.c, h2, w2);
    for bc in 0..x.n * x.c {
        let src = &x.data[bc * x.h * x.w..(bc + 1) * x.h * x.w];
        let dst = &mut y.data[bc * h2 * w2..(bc + 1) * h2 * w2];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64(fx);
                let top = src[y0 * x.w + x0] * (T::one() - fx) + src[y0 * x.w + x1] * fx;
                let bot = src[y1 * x.w + x0] * (T::one() - fx) + src[y1 * x.w + x1] * fx;
                dst[oy * w2 + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    y
}

pub fn upsample_bilinear_backward<T: Real>(dy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (ty, tx) = (taps(dy.h, h), taps(dy.w, w));
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for bc in 0..dy.n * dy.c {
        let src = &dy.data[bc * dy.h * dy.w..(bc + 1) * dy.h * dy.w];
        let dst = &mut dx.data[bc * h * w..(bc + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64(fx);
                let g = src[oy * dy.w + ox];
                dst[y0 * w + x0] += g * (T::one() - fx) * (T::one() - fy);
                dst[y0 * w + x1] += g * fx * (T::one() - fy);
                dst[y1 * w + x0] += g * (T::one() - fx) * fy;
                dst[y1 * w + x1] += g * fx * fy;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor<f64>, wt: &[f64], b: &[f64], s: &ConvShape) -> Tensor<f64> {
        let (ho, wo) = s.out_size(x.h, x.w);
        let mut y = Tensor::zeros(x.n, s.cout, ho, wo);
        let pad = s.pad() as isize;
        for n in 0..x.n {
            for co in 0..s.cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[co];
                        for ci in 0..s.cin {
                            for ky in 0..s.k {
                                for kx in 0..s.k {
                                    let iy = (oy * s.stride + ky) as isize - pad;
                                    let ix = (ox * s.stride + kx) as isize - pad;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        acc += wt[((co * s.cin + ci) * s.k + ky) * s.k + kx]
                                            * x.data[((n * x.c + ci) * x.h + iy as usize) * x.w + ix as usize];
                                    }
                                }
                            }
                        }
                        y.data[((n * s.cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn ramp(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.7 + seed).sin() * 0.5).collect()
    }

    #[test]
    fn conv_matches_naive_loops() {
        for s in [
            ConvShape { cin: 3, cout: 4, k: 3, stride: 1 },
            ConvShape { cin: 2, cout: 5, k: 3, stride: 2 },
            ConvShape { cin: 3, cout: 2, k: 1, stride: 1 },
        ] {
            let x = Tensor::from_vec(2, s.cin, 6, 8, ramp(2 * s.cin * 48, 0.3)).unwrap();
            let wt = ramp(s.weight_len(), 1.1);
            let b = ramp(s.cout, 2.0);
            let fast = conv_forward(&x, &wt, &b, &s, false);
            let slow = naive_conv(&x, &wt, &b, &s);
            assert!(fast.data.iter().zip(&slow.data).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <dy, conv(x)> linear part equals <conv^T dy, x> and <dW, W>.
        let s = ConvShape { cin: 2, cout: 3, k: 3, stride: 2 };
        let x = Tensor::from_vec(1, 2, 7, 6, ramp(84, 0.1)).unwrap();
        let wt = ramp(s.weight_len(), 0.4);
        let zero_b = vec![0.0; 3];
        let y = conv_forward(&x, &wt, &zero_b, &s, false);
        let mut dy = Tensor::from_vec(1, 3, y.h, y.w, ramp(y.data.len(), 0.9)).unwrap();
        let lhs: f64 = dy.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let mut dw = vec![0.0; s.weight_len()];
        let mut db = vec![0.0; 3];
        let dx = conv_backward(&x, &y, &mut dy, &wt, &s, false, Some((&mut dw, &mut db)), true).unwrap();
        let via_x: f64 = dx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        let via_w: f64 = dw.iter().zip(&wt).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10 && (lhs - via_w).abs() < 1e-10);
    }

    #[test]
    fn upsampling_backward_is_adjoint() {
        let x = Tensor::from_vec(1, 2, 3, 5, ramp(30, 0.2)).unwrap();
        let dy = Tensor::from_vec(1, 2, 6, 10, ramp(120, 1.7)).unwrap();
        for (y, dx) in [
            (upsample_nearest2(&x), upsample_nearest2_backward(&dy)),
            (upsample_bilinear(&x, 6, 10), upsample_bilinear_backward(&dy, 3, 5)),
        ] {
            let a: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
            let b: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_double_weights() {
        let x = Tensor::from_vec(1, 1, 1, 2, vec![0.0f64, 4.0]).unwrap();
        let y = upsample_bilinear(&x, 1, 4);
        assert_eq!(y.data, vec![0.0, 1.0, 3.0, 4.0]);
    }
}
