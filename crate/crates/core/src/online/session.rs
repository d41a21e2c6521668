use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use super::{infer_and_clean, BufferEntry, CueMaps, OnlineConfig, OnlineTrainer, OverrideSource, SegMask};
use crate::error::Result;
use crate::geometry::{estimate_horizon, CameraModel, HorizonEstimate, SkyProvider};
use crate::imaging::{GrayImage, Preprocessor, ThermalFrame};
use crate::motion::{motion_probability, MotionCueParams};
use crate::raster::Mask;
use crate::segnet::SegModel;
use crate::texture::{texture_cue, TextureCueParams};

/// When frames enter the buffer and when training runs, in stream
/// positions (0-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TriggerPolicy {
    pub interval: u64,
    pub stride: u64,
    pub buffer_len: usize,
    pub extra: BTreeSet<u64>,
    /// Train once when the buffer first fills.
    pub fill_burst: bool,
}

impl TriggerPolicy {
    pub fn from_config(cfg: &OnlineConfig) -> Self {
        Self {
            interval: cfg.train_interval,
            stride: cfg.buffer_stride.max(1),
            buffer_len: cfg.buffer_len,
            extra: cfg.extra_triggers.clone(),
            fill_burst: true,
        }
    }

    pub fn inserts(&self, t: u64) -> bool {
        t % self.stride == 0
    }

    /// Position whose insertion fills the buffer for the first time.
    pub fn fill_position(&self) -> u64 {
        (self.buffer_len.max(1) as u64 - 1) * self.stride
    }

    pub fn trains(&self, t: u64) -> bool {
        (self.fill_burst && t == self.fill_position())
            || (self.interval > 0 && t > 0 && t % self.interval == 0)
            || self.extra.contains(&t)
    }

    /// Training positions within a stream of `n` frames.
    pub fn schedule(&self, n: u64) -> Vec<u64> {
        (0..n).filter(|&t| self.trains(t)).collect()
    }
}

/// Computes everything stored with a buffered frame: cues and
/// definite-non-water geometry.
#[derive(Clone)]
pub struct CueEngine {
    pub cfg: OnlineConfig,
    pub camera: Option<CameraModel>,
    pub sky: Option<Arc<dyn SkyProvider>>,
    pub motion_params: MotionCueParams,
}

impl std::fmt::Debug for CueEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CueEngine")
            .field("cfg", &self.cfg)
            .field("camera", &self.camera)
            .field("sky", &self.sky.is_some())
            .finish()
    }
}

impl CueEngine {
    pub fn new(cfg: &OnlineConfig, camera: Option<CameraModel>, sky: Option<Arc<dyn SkyProvider>>) -> Self {
        Self {
            cfg: cfg.clone(),
            camera,
            sky,
            motion_params: MotionCueParams {
                seed: cfg.seed,
                ..Default::default()
            },
        }
    }

    /// Horizon from the frame attitude, if both it and a camera exist.
    pub fn horizon(&self, frame: &ThermalFrame) -> Option<HorizonEstimate> {
        let cam = self.camera.as_ref()?;
        let imu = frame.attitude.as_ref()?;
        let cam = if cam.width == frame.width() {
            cam.clone()
        } else {
            cam.scaled(frame.width() as f64 / cam.width as f64)
        };
        Some(estimate_horizon(&cam, imu))
    }

    fn sky_mask(&self, frame: &ThermalFrame, img: &GrayImage) -> Option<Mask> {
        self.sky.as_ref()?.sky_mask(frame, img)
    }

    /// Horizon and sky mask according to the override source.
    pub fn geometry(&self, frame: &ThermalFrame, img: &GrayImage) -> (Option<HorizonEstimate>, Option<Mask>) {
        match self.cfg.override_source {
            OverrideSource::None => (None, None),
            OverrideSource::Sky => (None, self.sky_mask(frame, img)),
            OverrideSource::Horizon => match self.horizon(frame) {
                Some(h) => (Some(h), None),
                None => (None, self.sky_mask(frame, img)),
            },
        }
    }

    /// Horizon used to clean inference masks.
    pub fn cleanup_horizon(&self, frame: &ThermalFrame) -> Option<HorizonEstimate> {
        (self.cfg.override_source == OverrideSource::Horizon)
            .then(|| self.horizon(frame))
            .flatten()
    }

    pub fn texture(&self, img: &GrayImage) -> Option<CueMaps> {
        if !self.cfg.cues.texture {
            return None;
        }
        let (cw, ch) = (
            ((img.width() as f64 * self.cfg.cue_scale).round() as usize).max(1),
            ((img.height() as f64 * self.cfg.cue_scale).round() as usize).max(1),
        );
        let params = TextureCueParams {
            alpha_t: self.cfg.alpha_t,
            ..TextureCueParams::for_cue_size(cw, ch)
        };
        match texture_cue(img, &params, self.cfg.cue_scale) {
            Ok((pw, pn)) => Some(CueMaps::new(pw, pn)),
            Err(e) => {
                log::warn!("texture cue unavailable: {e}");
                None
            }
        }
    }

    pub fn motion(&self, prev: Option<&ThermalFrame>, curr: &ThermalFrame) -> Option<CueMaps> {
        if !self.cfg.cues.motion {
            return None;
        }
        let prev = prev?;
        let params = MotionCueParams {
            seed: self.motion_params.seed ^ curr.frame_id,
            ..self.motion_params.clone()
        };
        match motion_probability(prev, curr, &params, self.cfg.cue_scale) {
            Ok(m) => Some(CueMaps::new(m.p_water, m.p_non_water).with_validity(m.valid)),
            Err(e) => {
                log::debug!("motion cue unavailable for frame {}: {e}", curr.frame_id);
                None
            }
        }
    }

    pub fn build_entry(&self, frame: &ThermalFrame, img: &GrayImage, prev: Option<&ThermalFrame>) -> BufferEntry {
        let (horizon, sky) = self.geometry(frame, img);
        BufferEntry {
            texture: self.texture(img),
            motion: self.motion(prev, frame),
            horizon,
            sky,
            ..BufferEntry::new(frame.clone(), img.clone())
        }
    }
}

/// Per-frame bookkeeping for the diagnostics CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameRecord {
    pub index: u64,
    pub frame_id: u64,
    pub buffered: bool,
    pub texture: bool,
    pub motion: bool,
    pub override_available: bool,
    pub trained: bool,
    pub loss: Option<f64>,
    pub skipped: usize,
    pub preprocess_ms: f64,
    pub cue_ms: f64,
    pub train_ms: f64,
    pub infer_ms: f64,
}

#[derive(Clone, Debug)]
pub struct FrameOutput {
    pub mask: SegMask,
    /// The preprocessed frame the mask was inferred from.
    pub image: GrayImage,
    pub record: FrameRecord,
}

/// Single-threaded online loop: buffer, train on trigger, infer.
///
/// At position `t` the frame is buffered first (when `t` is on the
/// stride), then a triggered cycle runs, then the frame is segmented with
/// the updated student.
pub struct OnlineSession {
    pub preprocessor: Preprocessor,
    pub engine: CueEngine,
    pub trainer: OnlineTrainer,
    pub policy: TriggerPolicy,
    pub training: bool,
    history: VecDeque<ThermalFrame>,
    next: u64,
}

impl OnlineSession {
    pub fn new(model: SegModel, cfg: OnlineConfig, camera: Option<CameraModel>, sky: Option<Arc<dyn SkyProvider>>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            preprocessor: Preprocessor::default(),
            engine: CueEngine::new(&cfg, camera, sky),
            policy: TriggerPolicy::from_config(&cfg),
            trainer: OnlineTrainer::new(model, cfg)?,
            training: true,
            history: VecDeque::new(),
            next: 0,
        })
    }

    pub fn model(&self) -> &SegModel {
        &self.trainer.f
    }

    pub fn position(&self) -> u64 {
        self.next
    }

    pub fn process(&mut self, frame: ThermalFrame) -> Result<FrameOutput> {
        let t = self.next;
        let start = Instant::now();
        let img = self.preprocessor.apply(&frame)?;
        let mut rec = FrameRecord {
            index: t,
            frame_id: frame.frame_id,
            preprocess_ms: start.elapsed().as_secs_f64() * 1e3,
            ..Default::default()
        };
        let gap = self.trainer.cfg.motion_gap as usize;
        if self.training && self.policy.inserts(t) {
            let start = Instant::now();
            let prev = (self.history.len() == gap).then(|| &self.history[0]);
            let entry = self.engine.build_entry(&frame, &img, prev);
            rec.cue_ms = start.elapsed().as_secs_f64() * 1e3;
            rec.buffered = true;
            rec.texture = entry.texture.is_some();
            rec.motion = entry.motion.is_some();
            rec.override_available = entry.horizon.is_some() || entry.sky.is_some();
            self.trainer.push(entry);
        }
        if self.training && self.policy.trains(t) {
            let start = Instant::now();
            if let Some(d) = self.trainer.train()? {
                rec.trained = true;
                rec.loss = d.mean_loss();
                rec.skipped = d.skipped;
            }
            rec.train_ms = start.elapsed().as_secs_f64() * 1e3;
        }
        let start = Instant::now();
        let horizon = self.engine.cleanup_horizon(&frame);
        let mask = infer_and_clean(&self.trainer.f, &img, horizon.as_ref())?;
        rec.infer_ms = start.elapsed().as_secs_f64() * 1e3;

        self.history.push_back(frame);
        if self.history.len() > gap {
            self.history.pop_front();
        }
        self.next += 1;
        Ok(FrameOutput {
            mask,
            image: img,
            record: rec,
        })
    }
}

impl std::fmt::Debug for OnlineSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnlineSession").field("position", &self.next).field("policy", &self.policy).finish()
    }
}
