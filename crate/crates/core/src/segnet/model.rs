use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::real::Real;
use super::tensor::{
    conv_backward, conv_forward, upsample_bilinear, upsample_bilinear_backward, upsample_nearest2, upsample_nearest2_backward, ConvShape,
    Tensor,
};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::raster::{Plane, ProbabilityMap};

/// Input sides must be multiples of this (four stride-2 stages).
pub const STRIDE: usize = 16;
pub const ENCODER_CHANNELS: [usize; 4] = [16, 24, 40, 48];
pub const DECODER_CHANNELS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub shape: ConvShape,
    pub relu: bool,
    pub frozen: bool,
    /// Start of the weights in the flat parameter vector; biases follow.
    pub offset: usize,
}

impl LayerSpec {
    pub fn len(&self) -> usize {
        self.shape.weight_len() + self.shape.cout
    }

    pub fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.shape.weight_len()
    }

    pub fn bias(&self) -> Range<usize> {
        self.offset + self.shape.weight_len()..self.offset + self.len()
    }

    pub fn params(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

const ENC: usize = 0;
/// Decoder block `j` (0 = deepest) owns layers `LAT + 2j` and `LAT + 2j + 1`.
const LAT: usize = 4;
const HEAD: usize = 12;
const N_LAYERS: usize = 13;

fn build_layers() -> Vec<LayerSpec> {
    let mut v = Vec::with_capacity(N_LAYERS);
    let mut push = |name, cin, cout, k, stride, relu, frozen| {
        let offset = v.last().map_or(0, |l: &LayerSpec| l.offset + l.len());
        v.push(LayerSpec {
            name,
            shape: ConvShape { cin, cout, k, stride },
            relu,
            frozen,
            offset,
        });
    };
    let e = ENCODER_CHANNELS;
    push("enc1", 1, e[0], 3, 2, true, true);
    push("enc2", e[0], e[1], 3, 2, true, true);
    push("enc3", e[1], e[2], 3, 2, true, true);
    push("enc4", e[2], e[3], 3, 2, true, true);
    let d = DECODER_CHANNELS;
    let names = [("d4.lateral", "d4.smooth"), ("d3.lateral", "d3.smooth"), ("d2.lateral", "d2.smooth"), ("d1.lateral", "d1.smooth")];
    for (j, (lat, smooth)) in names.into_iter().enumerate() {
        // The two deepest merge blocks stay frozen with the encoder.
        let frozen = j < 2;
        push(lat, e[3 - j], d, 1, 1, false, frozen);
        push(smooth, d, d, 3, 1, true, frozen);
    }
    push("head", d, 2, 1, 1, false, false);
    v
}

fn layers_static() -> &'static [LayerSpec] {
    static LAYERS: std::sync::OnceLock<Vec<LayerSpec>> = std::sync::OnceLock::new();
    LAYERS.get_or_init(build_layers)
}

/// Which parameters receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradScope {
    Trainable,
    All,
}

/// Compact encoder-decoder segmentation network with a flat parameter
/// vector. Output channel 0 is water, channel 1 non-water.
#[derive(Clone, Debug, PartialEq)]
pub struct Net<T> {
    theta: Vec<T>,
}

pub type SegModel = Net<f32>;

/// Intermediate tensors kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Activations<T> {
    pub input: Tensor<T>,
    pub enc: [Tensor<T>; 4],
    pub lateral: [Tensor<T>; 4],
    pub merged: [Tensor<T>; 4],
    pub smooth: [Tensor<T>; 4],
    pub head: Tensor<T>,
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
}

impl<T: Real> Net<T> {
    /// He-uniform weights from `arch_seed`, zero biases.
    pub fn build(arch_seed: u64) -> Self {
        let layers = Self::layers();
        let mut theta = vec![T::zero(); Self::param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(arch_seed);
        for l in layers {
            let fan_in = (l.shape.cin * l.shape.k * l.shape.k) as f64;
            let bound = (6.0 / fan_in).sqrt();
            for v in &mut theta[l.weights()] {
                *v = T::from_f64(rng.random_range(-bound..bound));
            }
        }
        Self { theta }
    }

    pub fn layers() -> &'static [LayerSpec] {
        layers_static()
    }

    pub fn param_count() -> usize {
        let l = Self::layers().last().expect("non-empty");
        l.offset + l.len()
    }

    /// Frozen parameters form a prefix of the vector.
    pub fn frozen_range() -> Range<usize> {
        0..Self::trainable_range().start
    }

    pub fn trainable_range() -> Range<usize> {
        let first = Self::layers().iter().find(|l| !l.frozen).expect("some trainable layer");
        first.offset..Self::param_count()
    }

    pub fn from_theta(theta: Vec<T>) -> Result<Self> {
        if theta.len() != Self::param_count() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, model needs {}",
                theta.len(),
                Self::param_count()
            )));
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [T] {
        &mut self.theta
    }

    pub fn cast<U: Real>(&self) -> Net<U> {
        Net {
            theta: self.theta.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// SHA-256 over the frozen partition's little-endian f64 values.
    pub fn frozen_checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in &self.theta[Self::frozen_range()] {
            h.update(v.as_f64().to_le_bytes());
        }
        h.finalize().into()
    }

    fn conv(&self, i: usize, x: &Tensor<T>) -> Tensor<T> {
        let l = &Self::layers()[i];
        conv_forward(x, &self.theta[l.weights()], &self.theta[l.bias()], &l.shape, l.relu)
    }

    fn check_input(x: &Tensor<T>) -> Result<()> {
        if x.c != 1 || x.n == 0 || x.h == 0 || x.w == 0 || x.h % STRIDE != 0 || x.w % STRIDE != 0 {
            return Err(Error::invalid(format!(
                "network input must be Bx1xHxW with H, W multiples of {STRIDE}; got {}x{}x{}x{}",
                x.n, x.c, x.h, x.w
            )));
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<Activations<T>> {
        Self::check_input(x)?;
        let e1 = self.conv(ENC, x);
        let e2 = self.conv(ENC + 1, &e1);
        let e3 = self.conv(ENC + 2, &e2);
        let e4 = self.conv(ENC + 3, &e3);
        let enc = [e1, e2, e3, e4];
        let mut lateral = Vec::with_capacity(4);
        let mut merged = Vec::with_capacity(4);
        let mut smooth: Vec<Tensor<T>> = Vec::with_capacity(4);
        for j in 0..4 {
            let l = self.conv(LAT + 2 * j, &enc[3 - j]);
            let mut m = l.clone();
            if j > 0 {
                m.add_assign(&upsample_nearest2(&smooth[j - 1]));
            }
            let p = self.conv(LAT + 2 * j + 1, &m);
            lateral.push(l);
            merged.push(m);
            smooth.push(p);
        }
        let head = self.conv(HEAD, &smooth[3]);
        let logits = upsample_bilinear(&head, x.h, x.w);
        let probs = softmax2(&logits);
        Ok(Activations {
            input: x.clone(),
            enc,
            lateral: lateral.try_into().expect("4 blocks"),
            merged: merged.try_into().expect("4 blocks"),
            smooth: smooth.try_into().expect("4 blocks"),
            head,
            logits,
            probs,
        })
    }

    /// Per-pixel class probabilities, `B x 2 x H x W`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.probs)
    }

    /// Gradient of a loss w.r.t. the flat parameters, given its gradient
    /// w.r.t. the logits. Entries outside `scope` are zero and the backward
    /// pass stops where nothing upstream needs gradients.
    pub fn backward(&self, a: &Activations<T>, dlogits: &Tensor<T>, scope: GradScope) -> Vec<T> {
        let layers = Self::layers();
        let req: Vec<bool> = layers.iter().map(|l| scope == GradScope::All || !l.frozen).collect();
        // need_*: some parameter upstream of that tensor wants a gradient.
        let mut need_e = [false; 4];
        for i in 0..4 {
            need_e[i] = (i > 0 && need_e[i - 1]) || req[ENC + i];
        }
        let mut need_m = [false; 4];
        let mut need_p = [false; 4];
        for j in 0..4 {
            let need_l = need_e[3 - j] || req[LAT + 2 * j];
            need_m[j] = need_l || (j > 0 && need_p[j - 1]);
            need_p[j] = need_m[j] || req[LAT + 2 * j + 1];
        }
        let mut grads = vec![T::zero(); self.theta.len()];
        if !(need_p[3] || req[HEAD]) {
            return grads;
        }

        let run = |i: usize, x: &Tensor<T>, y: &Tensor<T>, dy: &mut Tensor<T>, want_dx: bool, grads: &mut Vec<T>| {
            let l = &layers[i];
            let g = if req[i] {
                let (w, b) = grads[l.params()].split_at_mut(l.shape.weight_len());
                Some((w, b))
            } else {
                None
            };
            conv_backward(x, y, dy, &self.theta[l.weights()], &l.shape, l.relu, g, want_dx)
        };

        let mut dhead = upsample_bilinear_backward(dlogits, a.head.h, a.head.w);
        let mut dp: [Option<Tensor<T>>; 4] = [None, None, None, None];
        dp[3] = run(HEAD, &a.smooth[3], &a.head, &mut dhead, need_p[3], &mut grads);
        let mut de: [Option<Tensor<T>>; 4] = [None, None, None, None];
        for j in (0..4).rev() {
            let Some(mut dpj) = dp[j].take() else { continue };
            let Some(mut dm) = run(LAT + 2 * j + 1, &a.merged[j], &a.smooth[j], &mut dpj, need_m[j], &mut grads) else {
                continue;
            };
            if j > 0 && need_p[j - 1] {
                let up = upsample_nearest2_backward(&dm);
                match dp[j - 1].as_mut() {
                    Some(t) => t.add_assign(&up),
                    None => dp[j - 1] = Some(up),
                }
            }
            let ei = 3 - j;
            if need_e[ei] || req[LAT + 2 * j] {
                if let Some(d) = run(LAT + 2 * j, &a.enc[ei], &a.lateral[j], &mut dm, need_e[ei], &mut grads) {
                    match de[ei].as_mut() {
                        Some(t) => t.add_assign(&d),
                        None => de[ei] = Some(d),
                    }
                }
            }
        }
        for i in (0..4).rev() {
            let Some(mut d) = de[i].take() else { continue };
            let x = if i == 0 { &a.input } else { &a.enc[i - 1] };
            let want = i > 0 && need_e[i - 1];
            if let Some(dx) = run(ENC + i, x, &a.enc[i], &mut d, want, &mut grads) {
                match de[i - 1].as_mut() {
                    Some(t) => t.add_assign(&dx),
                    None => de[i - 1] = Some(dx),
                }
            }
        }
        grads
    }

    /// Water and non-water probability maps for one image. Sides that are
    /// not multiples of 16 are reflect-padded and the output cropped back.
    pub fn predict(&self, img: &GrayImage) -> Result<(ProbabilityMap, ProbabilityMap)> {
        let (w, h) = (img.width(), img.height());
        if w == 0 || h == 0 {
            return Err(Error::invalid("empty image"));
        }
        let (pw, ph) = (w.div_ceil(STRIDE) * STRIDE, h.div_ceil(STRIDE) * STRIDE);
        let padded = if (pw, ph) == (w, h) { img.clone() } else { img.pad_reflect(0, pw - w, 0, ph - h) };
        let x = Tensor::from_vec(1, 1, ph, pw, padded.data().iter().map(|&v| T::from_f64(v as f64)).collect()).expect("shape");
        let p = self.forward(&x)?;
        let chan = |c: usize| {
            let src = p.plane(0, c);
            Plane::from_fn(w, h, |x, y| src[y * pw + x].as_f64() as f32)
        };
        Ok((chan(0), chan(1)))
    }
}

/// Channel softmax over a 2-channel tensor.
pub fn softmax2<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    assert_eq!(logits.c, 2);
    let mut out = logits.clone();
    let p = logits.h * logits.w;
    for b in 0..logits.n {
        let item = out.item_mut(b);
        let (c0, c1) = item.split_at_mut(p);
        for (a, z) in c0.iter_mut().zip(c1.iter_mut()) {
            let m = a.max(*z);
            let (ea, ez) = ((*a - m).exp(), (*z - m).exp());
            let s = ea + ez;
            *a = ea / s;
            *z = ez / s;
        }
    }
    out
}
