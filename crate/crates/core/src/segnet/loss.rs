use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::raster::{Mask, ProbabilityMap};

/// Per-pixel water / non-water targets. Pixels in `override_non_water`
/// carry `(0, 1)`; pixels outside `validity` are ignored by the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabel {
    pub y_water: ProbabilityMap,
    pub y_non_water: ProbabilityMap,
    pub override_non_water: Mask,
    pub validity: Mask,
}

impl SoftLabel {
    pub fn width(&self) -> usize {
        self.y_water.width()
    }

    pub fn height(&self) -> usize {
        self.y_water.height()
    }

    /// Hard labels from a binary water mask, everything valid.
    pub fn from_mask(water: &Mask) -> Self {
        Self {
            y_water: water.map(|&b| b as u8 as f32),
            y_non_water: water.map(|&b| (!b) as u8 as f32),
            override_non_water: water.map(|_| false),
            validity: water.map(|_| true),
        }
    }
}

/// Cross entropy between the channel softmax of `logits` and the
/// per-pixel renormalized targets, averaged over valid pixels.
///
/// Returns the loss and its gradient w.r.t. the logits. Pixels whose
/// targets sum to zero count as invalid.
pub fn bce_loss<T: Real>(logits: &Tensor<T>, labels: &[SoftLabel]) -> Result<(f64, Tensor<T>)> {
    if logits.c != 2 || labels.len() != logits.n {
        return Err(Error::invalid("bce_loss: need B x 2 logits and B labels"));
    }
    let p = logits.h * logits.w;
    for l in labels {
        if l.width() != logits.w || l.height() != logits.h || !l.y_water.same_size(&l.validity) || !l.y_non_water.same_size(&l.validity) {
            return Err(Error::invalid("bce_loss: label size differs from prediction"));
        }
    }
    let mut count = 0usize;
    let mut total = 0.0f64;
    let mut grad = Tensor::zeros(logits.n, 2, logits.h, logits.w);
    // First pass accumulates unscaled gradients; division by the valid
    // count happens once it is known.
    for (b, l) in labels.iter().enumerate() {
        let item = logits.item(b);
        let (z0, z1) = item.split_at(p);
        let g = grad.item_mut(b);
        for i in 0..p {
            if !l.validity.data()[i] {
                continue;
            }
            let (yw, yn) = (l.y_water.data()[i] as f64, l.y_non_water.data()[i] as f64);
            let s = yw + yn;
            if !(s > 1e-12) {
                continue;
            }
            let (tw, tn) = (T::from_f64(yw / s), T::from_f64(yn / s));
            let (a, c) = (z0[i], z1[i]);
            let m = a.max(c);
            let lse = m + ((a - m).exp() + (c - m).exp()).ln();
            let (lw, ln) = (a - lse, c - lse);
            total -= (tw * lw + tn * ln).as_f64();
            g[i] = lw.exp() - tw;
            g[p + i] = ln.exp() - tn;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::TrainingSkipped("no valid label pixels in batch".into()));
    }
    let inv = T::from_f64(1.0 / count as f64);
    grad.data.iter_mut().for_each(|v| *v *= inv);
    Ok((total / count as f64, grad))
}
