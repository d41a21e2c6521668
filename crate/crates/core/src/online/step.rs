use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{create_batches, merge_labels, BufferEntry, OnlineConfig};
use crate::error::{Error, Result};
use crate::raster::Plane;
use crate::segnet::{adam_step, bce_loss, momentum_update_model, stack, GradScope, OptimizerState, SegModel};

/// Outcome of one training cycle.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    /// Loss of every iteration that produced an update.
    pub losses: Vec<f64>,
    /// Iterations dropped for empty labels or non-finite gradients.
    pub skipped: usize,
}

impl StepDiagnostics {
    pub fn mean_loss(&self) -> Option<f64> {
        (!self.losses.is_empty()).then(|| self.losses.iter().sum::<f64>() / self.losses.len() as f64)
    }
}

/// One online cycle: `cfg.iterations` Adam steps on `f` against labels
/// merged from the teacher `g` and the buffered cues, then a single
/// momentum update `g <- lambda f + (1 - lambda) g`.
///
/// The teacher runs on the same crops as the student. With zero iterations
/// nothing changes, including `g`.
pub fn online_step(
    f: &mut SegModel,
    g: &mut SegModel,
    opt: &mut OptimizerState,
    buffer: &[BufferEntry],
    cfg: &OnlineConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepDiagnostics> {
    let mut diag = StepDiagnostics::default();
    if cfg.iterations == 0 {
        return Ok(diag);
    }
    for e in buffer {
        e.validate()?;
    }
    let batches = create_batches(buffer, cfg, rng)?;
    for batch in batches {
        let images: Vec<_> = batch.iter().map(|s| s.img.clone()).collect();
        let x = stack(&images);
        let pg = g.forward(&x)?;
        let (w, h) = (x.w, x.h);
        let labels = batch
            .iter()
            .enumerate()
            .map(|(b, s)| {
                let pw = Plane::from_vec(w, h, pg.plane(b, 0).to_vec()).expect("sized");
                let pn = Plane::from_vec(w, h, pg.plane(b, 1).to_vec()).expect("sized");
                merge_labels(&pw, &pn, s.motion.as_ref(), s.texture.as_ref(), cfg, s.override_mask.as_ref())
            })
            .collect::<Result<Vec<_>>>()?;
        let acts = f.forward_cached(&x)?;
        let (loss, dlogits) = match bce_loss(&acts.logits, &labels) {
            Ok(v) => v,
            Err(Error::TrainingSkipped(_)) => {
                diag.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let grads = f.backward(&acts, &dlogits, GradScope::Trainable);
        match adam_step(f, &grads, opt) {
            Ok(()) => diag.losses.push(loss),
            Err(Error::NonFiniteGradient { count }) => {
                log::warn!("online step: {count} non-finite gradient entries, iteration skipped");
                diag.skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    momentum_update_model(f, g, cfg.lambda)?;
    Ok(diag)
}

/// Student, teacher, optimizer, RNG and the image buffer, owned together
/// by whoever runs training.
#[derive(Clone, Debug)]
pub struct OnlineTrainer {
    pub f: SegModel,
    pub g: SegModel,
    pub opt: OptimizerState,
    pub buffer: VecDeque<BufferEntry>,
    pub cfg: OnlineConfig,
    rng: ChaCha8Rng,
    cycles: usize,
}

impl OnlineTrainer {
    /// Student and teacher both start from `pretrained`.
    pub fn new(pretrained: SegModel, cfg: OnlineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            f: pretrained.clone(),
            g: pretrained,
            opt: OptimizerState::for_model::<f32>(cfg.adam()),
            buffer: VecDeque::with_capacity(cfg.buffer_len),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6f6e_6c69_6e65),
            cfg,
            cycles: 0,
        })
    }

    /// Appends an entry, evicting the oldest when full.
    pub fn push(&mut self, entry: BufferEntry) {
        if self.buffer.len() == self.cfg.buffer_len {
            self.buffer.pop_front();
        }
        self.buffer.push_back(entry);
    }

    pub fn cycles(&self) -> usize {
        self.cycles
    }

    /// Runs one cycle on the current buffer; `None` while it is empty.
    pub fn train(&mut self) -> Result<Option<StepDiagnostics>> {
        if self.buffer.is_empty() {
            return Ok(None);
        }
        let buf = self.buffer.make_contiguous();
        let d = online_step(&mut self.f, &mut self.g, &mut self.opt, buf, &self.cfg, &mut self.rng)?;
        self.cycles += 1;
        Ok(Some(d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{BitDepth, ThermalFrame};
    use crate::online::{CueMaps, CueSet};
    use crate::raster::Mask;

    fn entry(id: u64, seed: u64) -> BufferEntry {
        let (w, h) = (48, 48);
        let frame = ThermalFrame::new(Plane::new(w, h, 0u16), BitDepth::Sixteen, id, 0).unwrap();
        let img = Plane::from_fn(w, h, |x, y| {
            if y > 24 {
                0.3
            } else {
                let s = (x as u64 * 31 + y as u64 * 17 + seed * 7) % 13;
                0.5 + s as f32 / 30.0
            }
        });
        let water: Mask = Plane::from_fn(w, h, |_, y| y > 24);
        let mut e = BufferEntry::new(frame, img);
        e.texture = Some(CueMaps::new(water.map(|&b| b as u8 as f32), water.map(|&b| (!b) as u8 as f32)));
        e
    }

    fn setup(iterations: usize, lambda: f64) -> (SegModel, SegModel, OptimizerState, Vec<BufferEntry>, OnlineConfig) {
        let cfg = OnlineConfig {
            iterations,
            lambda,
            crop: (32, 32),
            batch: 2,
            gamma: 1e-2,
            cues: CueSet::TEXTURE,
            ..Default::default()
        };
        let f = SegModel::build(1);
        let g = SegModel::build(2);
        let opt = OptimizerState::for_model::<f32>(cfg.adam());
        (f, g, opt, vec![entry(0, 1), entry(1, 2), entry(2, 3)], cfg)
    }

    #[test]
    fn zero_iterations_change_nothing() {
        let (mut f, mut g, mut opt, buf, cfg) = setup(0, 0.3);
        let (f0, g0) = (f.clone(), g.clone());
        let d = online_step(&mut f, &mut g, &mut opt, &buf, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(d.losses.is_empty());
        assert_eq!(f.theta(), f0.theta());
        assert_eq!(g.theta(), g0.theta());
    }

    #[test]
    fn lambda_endpoints() {
        let (mut f, mut g, mut opt, buf, cfg) = setup(2, 0.0);
        let g0 = g.clone();
        online_step(&mut f, &mut g, &mut opt, &buf, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(g.theta(), g0.theta());

        let (mut f, mut g, mut opt, buf, cfg) = setup(2, 1.0);
        online_step(&mut f, &mut g, &mut opt, &buf, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(g.theta(), f.theta());
    }

    #[test]
    fn frozen_partition_is_untouched() {
        let (mut f, mut g, mut opt, buf, cfg) = setup(3, 0.3);
        let before = f.frozen_checksum();
        let t0 = f.theta()[SegModel::trainable_range()].to_vec();
        let d = online_step(&mut f, &mut g, &mut opt, &buf, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(d.losses.len(), 3);
        assert_eq!(f.frozen_checksum(), before);
        assert_ne!(&f.theta()[SegModel::trainable_range()], &t0[..]);
    }

    #[test]
    fn loss_decreases_over_iterations() {
        let (mut f, mut g, mut opt, buf, cfg) = setup(16, 0.3);
        let d = online_step(&mut f, &mut g, &mut opt, &buf, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let first: f64 = d.losses[..8].iter().sum();
        let last: f64 = d.losses[8..].iter().sum();
        assert!(last < first, "{:?}", d.losses);
    }

    #[test]
    fn all_invalid_batches_are_counted() {
        let (mut f, mut g, mut opt, mut buf, mut cfg) = setup(2, 0.3);
        // Water only from motion, and motion valid nowhere.
        cfg.w = [0.0, 1.0, 0.0];
        cfg.cues = CueSet::MOTION;
        for e in &mut buf {
            e.motion = Some(CueMaps::new(Plane::new(48, 48, 1.0), Plane::new(48, 48, 0.0)).with_validity(Plane::new(48, 48, false)));
        }
        let f0 = f.clone();
        let d = online_step(&mut f, &mut g, &mut opt, &buf, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((d.skipped, d.losses.len()), (2, 0));
        assert_eq!(f.theta(), f0.theta());
    }

    #[test]
    fn trainer_buffer_evicts_oldest() {
        let (f, _, _, _, cfg) = setup(1, 0.3);
        let mut t = OnlineTrainer::new(f, OnlineConfig { buffer_len: 2, ..cfg }).unwrap();
        assert!(t.train().unwrap().is_none());
        for i in 0..3 {
            t.push(entry(i, i));
        }
        let ids: Vec<u64> = t.buffer.iter().map(|e| e.frame.frame_id).collect();
        assert_eq!(ids, vec![1, 2]);
        assert!(t.train().unwrap().is_some());
        assert_eq!(t.cycles(), 1);
    }
}
