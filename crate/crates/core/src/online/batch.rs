use rand::seq::index;
use rand::Rng;

use super::{CueMaps, OnlineConfig};
use crate::error::{Error, Result};
use crate::geometry::{above_horizon_mask, HorizonEstimate};
use crate::imaging::{GrayImage, ThermalFrame};
use crate::raster::{Mask, Plane, Rect};

/// One buffered training image with the cues computed when it was inserted.
#[derive(Clone, Debug)]
pub struct BufferEntry {
    pub frame: ThermalFrame,
    /// Preprocessed network input.
    pub img: GrayImage,
    pub texture: Option<CueMaps>,
    pub motion: Option<CueMaps>,
    pub horizon: Option<HorizonEstimate>,
    pub sky: Option<Mask>,
}

impl BufferEntry {
    pub fn new(frame: ThermalFrame, img: GrayImage) -> Self {
        Self {
            frame,
            img,
            texture: None,
            motion: None,
            horizon: None,
            sky: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let same = |c: &Option<CueMaps>| c.as_ref().is_none_or(|c| c.p_water.same_size(&self.img) && c.p_non_water.same_size(&self.img));
        if !same(&self.texture) || !same(&self.motion) || self.sky.as_ref().is_some_and(|s| !s.same_size(&self.img)) {
            return Err(Error::invalid(format!("buffer entry {}: cue maps differ from image size", self.frame.frame_id)));
        }
        Ok(())
    }

    /// Union of the above-horizon region and the sky mask.
    pub fn override_mask(&self) -> Option<Mask> {
        let (w, h) = (self.img.width(), self.img.height());
        let horizon = self.horizon.as_ref().map(|e| above_horizon_mask(e, w, h));
        match (horizon, &self.sky) {
            (Some(a), Some(b)) => Some(a.zip_map(b, |&x, &y| x || y)),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b.clone()),
            (None, None) => None,
        }
    }
}

/// A crop of a buffer entry with every map cut and flipped identically.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub entry: usize,
    /// Window in the (possibly padded) entry image.
    pub window: Rect,
    pub flip: bool,
    /// The entry was smaller than the crop and got reflect-padded.
    pub padded: bool,
    pub img: GrayImage,
    pub texture: Option<CueMaps>,
    pub motion: Option<CueMaps>,
    pub override_mask: Option<Mask>,
}

fn center_pad<T: Copy>(p: &Plane<T>, cw: usize, ch: usize) -> Plane<T> {
    let (dw, dh) = (cw.saturating_sub(p.width()), ch.saturating_sub(p.height()));
    if dw == 0 && dh == 0 {
        return p.clone();
    }
    p.pad_reflect(dw / 2, dw - dw / 2, dh / 2, dh - dh / 2)
}

/// Cuts `window` out of `entry` (after center padding to at least the
/// crop size) and optionally mirrors everything.
pub fn crop_entry(entry: &BufferEntry, index: usize, window: Rect, flip: bool) -> TrainingSample {
    let (cw, ch) = (window.x + window.width, window.y + window.height);
    let padded = entry.img.width() < cw || entry.img.height() < ch;
    let cut = |p: &Plane<f32>| {
        let c = center_pad(p, cw, ch).crop(window);
        if flip {
            c.flip_horizontal()
        } else {
            c
        }
    };
    let cut_mask = |m: &Mask| {
        let c = center_pad(m, cw, ch).crop(window);
        if flip {
            c.flip_horizontal()
        } else {
            c
        }
    };
    TrainingSample {
        entry: index,
        window,
        flip,
        padded,
        img: cut(&entry.img),
        texture: entry.texture.as_ref().map(|c| c.transform(cut, cut_mask)),
        motion: entry.motion.as_ref().map(|c| c.transform(cut, cut_mask)),
        override_mask: entry.override_mask().as_ref().map(cut_mask),
    }
}

/// `cfg.iterations` batches of `cfg.batch` random crops with random
/// horizontal flips. Entries are drawn without replacement inside a batch
/// when the buffer is large enough.
pub fn create_batches(buffer: &[BufferEntry], cfg: &OnlineConfig, rng: &mut impl Rng) -> Result<Vec<Vec<TrainingSample>>> {
    if buffer.is_empty() {
        return Err(Error::invalid("create_batches: empty buffer"));
    }
    let (cw, ch) = cfg.crop;
    let mut batches = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let picks: Vec<usize> = if buffer.len() >= cfg.batch {
            index::sample(rng, buffer.len(), cfg.batch).into_vec()
        } else {
            (0..cfg.batch).map(|_| rng.random_range(0..buffer.len())).collect()
        };
        let batch = picks
            .into_iter()
            .map(|i| {
                let e = &buffer[i];
                let (w, h) = (e.img.width().max(cw), e.img.height().max(ch));
                let x = rng.random_range(0..=w - cw);
                let y = rng.random_range(0..=h - ch);
                let flip = rng.random_bool(0.5);
                crop_entry(e, i, Rect::new(x, y, cw, ch), flip)
            })
            .collect();
        batches.push(batch);
    }
    Ok(batches)
}
