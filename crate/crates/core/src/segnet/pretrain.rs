use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{bce_loss, SoftLabel};
use super::model::{GradScope, SegModel, STRIDE};
use super::optim::Sgd;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::raster::{Mask, Plane};

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Square crop side, a multiple of 16.
    pub crop: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub scale_range: (f64, f64),
    pub max_rotation_deg: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 4,
            crop: 320,
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            scale_range: (0.5, 2.0),
            max_rotation_deg: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainReport {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub skipped_batches: usize,
}

/// Random similarity-plus-flip view of an image and its mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augment {
    pub scale: f64,
    pub angle: f64,
    pub flip: bool,
    /// Crop origin in the scaled canvas; negative when the canvas is smaller
    /// than the crop.
    pub offset: (f64, f64),
}

impl Augment {
    pub fn sample(rng: &mut impl Rng, w: usize, h: usize, crop: usize, cfg: &PretrainConfig) -> Self {
        let (lo, hi) = cfg.scale_range;
        let scale = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let a = cfg.max_rotation_deg.to_radians();
        let angle = if a > 0.0 { rng.random_range(-a..a) } else { 0.0 };
        let flip = rng.random_bool(0.5);
        let (sw, sh) = (w as f64 * scale, h as f64 * scale);
        let mut pick = |side: f64| {
            let slack = side - crop as f64;
            if slack > 0.0 {
                rng.random_range(0.0..slack).floor()
            } else {
                (slack / 2.0).floor()
            }
        };
        let offset = (pick(sw), pick(sh));
        Self {
            scale,
            angle,
            flip,
            offset,
        }
    }

    /// Source position for crop pixel `(u, v)` of an image `w x h`.
    pub fn source(&self, u: usize, v: usize, w: usize, h: usize) -> (f64, f64) {
        let (sw, sh) = (w as f64 * self.scale, h as f64 * self.scale);
        let mut qx = self.offset.0 + u as f64;
        let qy = self.offset.1 + v as f64;
        if self.flip {
            qx = sw - 1.0 - qx;
        }
        let (cx, cy) = ((sw - 1.0) / 2.0, (sh - 1.0) / 2.0);
        let (s, c) = (-self.angle).sin_cos();
        let (dx, dy) = (qx - cx, qy - cy);
        let (rx, ry) = (c * dx - s * dy + cx, s * dx + c * dy + cy);
        ((rx + 0.5) / self.scale - 0.5, (ry + 0.5) / self.scale - 0.5)
    }

    pub fn apply(&self, img: &GrayImage, mask: &Mask, crop: usize) -> (GrayImage, SoftLabel) {
        let (w, h) = (img.width(), img.height());
        let mut out = Plane::new(crop, crop, 0.0f32);
        let mut water = Mask::new(crop, crop, false);
        let mut valid = Mask::new(crop, crop, false);
        for v in 0..crop {
            for u in 0..crop {
                let (sx, sy) = self.source(u, v, w, h);
                if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                    continue;
                }
                *out.get_mut(u, v) = img.sample_bilinear(sx as f32, sy as f32);
                *water.get_mut(u, v) = mask.at(sx.round() as usize, sy.round() as usize);
                *valid.get_mut(u, v) = true;
            }
        }
        let mut label = SoftLabel::from_mask(&water);
        label.validity = valid;
        (out, label)
    }
}

pub(crate) fn stack(images: &[GrayImage]) -> Tensor<f32> {
    let (w, h) = (images[0].width(), images[0].height());
    let mut data = Vec::with_capacity(images.len() * w * h);
    for i in images {
        data.extend_from_slice(i.data());
    }
    Tensor::from_vec(images.len(), 1, h, w, data).expect("uniform image sizes")
}

/// SGD-momentum training of every parameter on `(image, water mask)` pairs
/// with scale, rotation, flip and crop augmentation.
pub fn pretrain(model: &mut SegModel, data: &[(GrayImage, Mask)], cfg: &PretrainConfig) -> Result<PretrainReport> {
    if data.is_empty() {
        return Err(Error::invalid("pretraining dataset is empty"));
    }
    if cfg.crop == 0 || cfg.crop % STRIDE != 0 || cfg.batch == 0 {
        return Err(Error::InvalidConfig(format!("crop must be a positive multiple of {STRIDE} and batch >= 1")));
    }
    for (i, (img, m)) in data.iter().enumerate() {
        if !img.same_size(m) {
            return Err(Error::invalid(format!("sample {i}: image and mask sizes differ")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(SegModel::param_count(), cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut report = PretrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let mut imgs = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (img, mask) = &data[i];
                let aug = Augment::sample(&mut rng, img.width(), img.height(), cfg.crop, cfg);
                let (x, l) = aug.apply(img, mask, cfg.crop);
                imgs.push(x);
                labels.push(l);
            }
            let acts = model.forward_cached(&stack(&imgs))?;
            let (loss, dlogits) = match bce_loss(&acts.logits, &labels) {
                Ok(v) => v,
                Err(Error::TrainingSkipped(_)) => {
                    report.skipped_batches += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let grads = model.backward(&acts, &dlogits, GradScope::All);
            match opt.update(model.theta_mut(), &grads) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { count }) => {
                    log::warn!("epoch {epoch}: skipped batch with {count} non-finite gradients");
                    report.skipped_batches += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
            sum += loss;
            n += 1;
        }
        let mean = if n > 0 { sum / n as f64 } else { f64::NAN };
        log::info!("pretrain epoch {epoch}: loss {mean:.4}");
        report.epoch_losses.push(mean);
    }
    Ok(report)
}
