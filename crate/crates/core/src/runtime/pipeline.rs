use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, RecvTimeoutError, TrySendError};

use super::snapshot::{SnapshotCell, WeightSnapshot};
use super::{lower_thread_priority, Pacer, RunSummary, RuntimeOptions, StreamContext};
use crate::error::{Error, Result};
use crate::imaging::{GrayImage, Preprocessor, ThermalFrame};
use crate::online::{infer_and_clean, BufferEntry, CueEngine, FrameOutput, FrameRecord, OnlineConfig, OnlineTrainer, TriggerPolicy};
use crate::segnet::SegModel;

struct CueJob {
    t: u64,
    frame: ThermalFrame,
    img: GrayImage,
    prev: Option<ThermalFrame>,
    insert: bool,
    train: bool,
}

struct TrainMsg {
    t: u64,
    entry: Option<BufferEntry>,
    cue_ms: f64,
    train: bool,
}

struct InferJob {
    t: u64,
    frame: ThermalFrame,
    img: GrayImage,
    /// Trainer progress required before inferring.
    need: Option<u64>,
    preprocess_ms: f64,
}

/// Trainer-side fields of a frame record.
struct TrainRecord {
    t: u64,
    buffered: bool,
    texture: bool,
    motion: bool,
    override_available: bool,
    trained: bool,
    loss: Option<f64>,
    skipped: usize,
    cue_ms: f64,
    train_ms: f64,
}

#[derive(Default)]
struct ProgressState {
    done: Option<u64>,
    failed: bool,
    finished: bool,
}

/// How far the trainer has got through its ordered message stream.
#[derive(Default)]
struct Progress {
    state: Mutex<ProgressState>,
    cv: Condvar,
}

impl Progress {
    fn update(&self, f: impl FnOnce(&mut ProgressState)) {
        f(&mut self.state.lock().unwrap_or_else(|e| e.into_inner()));
        self.cv.notify_all();
    }

    fn wait_for(&self, t: u64) -> Result<()> {
        let mut s = self.state.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if s.done.is_some_and(|d| d >= t) {
                return Ok(());
            }
            if s.failed || s.finished {
                return Err(Error::StageFailed {
                    stage: "inference",
                    reason: format!("trainer stopped before reaching frame {t}"),
                });
            }
            s = self.cv.wait(s).unwrap_or_else(|e| e.into_inner());
        }
    }
}

/// Marks the trainer finished, or failed when unwinding.
struct FinishGuard<'a>(&'a Progress);

impl Drop for FinishGuard<'_> {
    fn drop(&mut self) {
        let panicking = thread::panicking();
        self.0.update(|s| {
            s.finished = true;
            s.failed |= panicking;
        });
    }
}

fn stage_result<T>(stage: &'static str, r: thread::Result<Result<T>>) -> Result<T> {
    r.unwrap_or_else(|p| {
        let reason = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panicked".into());
        Err(Error::StageFailed { stage, reason })
    })
}

pub(super) fn run_concurrent<I, S>(
    frames: I,
    model: SegModel,
    cfg: &OnlineConfig,
    ctx: &StreamContext,
    opts: &RuntimeOptions,
    mut sink: S,
) -> Result<RunSummary>
where
    I: Iterator<Item = Result<ThermalFrame>> + Send,
    S: FnMut(FrameOutput) -> Result<()>,
{
    cfg.validate()?;
    let start = Instant::now();
    let cap = opts.queue_capacity.max(1);
    let policy = TriggerPolicy::from_config(cfg);
    let engine = CueEngine::new(cfg, ctx.camera.clone(), ctx.sky.clone());
    let mut trainer = OnlineTrainer::new(model.clone(), cfg.clone())?;
    let cell = SnapshotCell::new(WeightSnapshot::new(0, None, model));
    let progress = Progress::default();
    let pending_train = AtomicBool::new(false);
    let drops = AtomicUsize::new(0);
    let snapshots = AtomicUsize::new(1);
    let deterministic = opts.deterministic;
    let gap = cfg.motion_gap as usize;

    let (cue_tx, cue_rx) = bounded::<CueJob>(cap);
    let (train_tx, train_rx) = bounded::<TrainMsg>(cap);
    let (infer_tx, infer_rx) = bounded::<InferJob>(cap);
    let (out_tx, out_rx) = bounded::<FrameOutput>(cap);

    let (source_res, cue_res, train_res, infer_res, sink_res, mut outputs) = thread::scope(|s| {
        let source = s.spawn(|| -> Result<()> {
            let (cue_tx, infer_tx) = (cue_tx, infer_tx);
            let pre = Preprocessor::default();
            let mut pacer = Pacer::new(opts.pace_hz);
            let mut history: VecDeque<ThermalFrame> = VecDeque::new();
            let mut last_msg = None;
            for (t, frame) in frames.enumerate() {
                let t = t as u64;
                pacer.wait();
                let frame = frame?;
                let t0 = Instant::now();
                let img = pre.apply(&frame)?;
                let preprocess_ms = t0.elapsed().as_secs_f64() * 1e3;
                let insert = opts.training && policy.inserts(t);
                let train = opts.training && policy.trains(t);
                if insert || train {
                    let job = CueJob {
                        t,
                        frame: frame.clone(),
                        img: img.clone(),
                        prev: (history.len() == gap).then(|| history[0].clone()),
                        insert,
                        train,
                    };
                    if deterministic {
                        if cue_tx.send(job).is_err() {
                            return Ok(());
                        }
                        last_msg = Some(t);
                    } else {
                        match cue_tx.try_send(job) {
                            Ok(()) => {}
                            Err(TrySendError::Full(job)) => {
                                drops.fetch_add(1, Ordering::Relaxed);
                                if job.train {
                                    pending_train.store(true, Ordering::Release);
                                }
                            }
                            Err(TrySendError::Disconnected(_)) => return Ok(()),
                        }
                    }
                }
                let job = InferJob {
                    t,
                    frame: frame.clone(),
                    img,
                    need: if deterministic { last_msg } else { None },
                    preprocess_ms,
                };
                if infer_tx.send(job).is_err() {
                    return Ok(());
                }
                history.push_back(frame);
                if history.len() > gap {
                    history.pop_front();
                }
            }
            Ok(())
        });

        let cue = s.spawn(|| -> Result<()> {
            let (cue_rx, train_tx) = (cue_rx, train_tx);
            if opts.low_priority {
                lower_thread_priority();
            }
            for job in cue_rx {
                let t0 = Instant::now();
                let entry = job.insert.then(|| engine.build_entry(&job.frame, &job.img, job.prev.as_ref()));
                let msg = TrainMsg {
                    t: job.t,
                    entry,
                    cue_ms: t0.elapsed().as_secs_f64() * 1e3,
                    train: job.train,
                };
                if train_tx.send(msg).is_err() {
                    break;
                }
            }
            Ok(())
        });

        let train = s.spawn(|| -> Result<Vec<TrainRecord>> {
            let train_rx = train_rx;
            let _guard = FinishGuard(&progress);
            if opts.low_priority {
                lower_thread_priority();
            }
            let mut records = Vec::new();
            let cycle = |trainer: &mut OnlineTrainer, t: Option<u64>| -> Result<Option<(Option<f64>, usize, f64)>> {
                let t0 = Instant::now();
                let Some(d) = trainer.train()? else { return Ok(None) };
                cell.publish(WeightSnapshot::new(trainer.cycles(), t, trainer.f.clone()));
                snapshots.fetch_add(1, Ordering::Relaxed);
                Ok(Some((d.mean_loss(), d.skipped, t0.elapsed().as_secs_f64() * 1e3)))
            };
            let result = (|| -> Result<()> {
                loop {
                    let msg = if deterministic {
                        match train_rx.recv() {
                            Ok(m) => m,
                            Err(_) => break,
                        }
                    } else {
                        match train_rx.recv_timeout(Duration::from_millis(20)) {
                            Ok(m) => m,
                            Err(RecvTimeoutError::Timeout) => {
                                if pending_train.swap(false, Ordering::AcqRel) {
                                    cycle(&mut trainer, None)?;
                                }
                                continue;
                            }
                            Err(RecvTimeoutError::Disconnected) => break,
                        }
                    };
                    let mut rec = TrainRecord {
                        t: msg.t,
                        buffered: msg.entry.is_some(),
                        texture: false,
                        motion: false,
                        override_available: false,
                        trained: false,
                        loss: None,
                        skipped: 0,
                        cue_ms: msg.cue_ms,
                        train_ms: 0.0,
                    };
                    if let Some(e) = msg.entry {
                        rec.texture = e.texture.is_some();
                        rec.motion = e.motion.is_some();
                        rec.override_available = e.horizon.is_some() || e.sky.is_some();
                        trainer.push(e);
                    }
                    let wanted = msg.train | (!deterministic && pending_train.swap(false, Ordering::AcqRel));
                    if wanted {
                        if let Some((loss, skipped, ms)) = cycle(&mut trainer, Some(msg.t))? {
                            rec.trained = true;
                            rec.loss = loss;
                            rec.skipped = skipped;
                            rec.train_ms = ms;
                        }
                    }
                    records.push(rec);
                    progress.update(|s| s.done = Some(msg.t));
                }
                if pending_train.swap(false, Ordering::AcqRel) {
                    cycle(&mut trainer, None)?;
                }
                Ok(())
            })();
            if result.is_err() {
                progress.update(|s| s.failed = true);
            }
            result.map(|()| records)
        });

        let infer = s.spawn(|| -> Result<()> {
            let (infer_rx, out_tx) = (infer_rx, out_tx);
            let mut snap = cell.latest();
            snap.verify()?;
            for job in infer_rx {
                if let Some(need) = job.need {
                    progress.wait_for(need)?;
                }
                let latest = cell.latest();
                if !std::sync::Arc::ptr_eq(&latest, &snap) {
                    latest.verify()?;
                    snap = latest;
                }
                let t0 = Instant::now();
                let horizon = engine.cleanup_horizon(&job.frame);
                let mask = infer_and_clean(snap.model(), &job.img, horizon.as_ref())?;
                let record = FrameRecord {
                    index: job.t,
                    frame_id: job.frame.frame_id,
                    preprocess_ms: job.preprocess_ms,
                    infer_ms: t0.elapsed().as_secs_f64() * 1e3,
                    ..Default::default()
                };
                let out = FrameOutput {
                    mask,
                    image: job.img,
                    record,
                };
                if out_tx.send(out).is_err() {
                    break;
                }
            }
            Ok(())
        });

        let mut outputs = Vec::new();
        let mut sink_res = Ok(());
        for out in out_rx {
            outputs.push(out.record.clone());
            if let Err(e) = sink(out) {
                sink_res = Err(e);
                break;
            }
        }
        (
            stage_result("source", source.join()),
            stage_result("cue", cue.join()),
            stage_result("trainer", train.join()),
            stage_result("inference", infer.join()),
            sink_res,
            outputs,
        )
    });
    source_res?;
    cue_res?;
    let train_records = train_res?;
    infer_res?;
    sink_res?;

    let mut j = 0;
    for r in &mut outputs {
        while j < train_records.len() && train_records[j].t < r.index {
            j += 1;
        }
        if let Some(tr) = train_records.get(j).filter(|tr| tr.t == r.index) {
            r.buffered = tr.buffered;
            r.texture = tr.texture;
            r.motion = tr.motion;
            r.override_available = tr.override_available;
            r.trained = tr.trained;
            r.loss = tr.loss;
            r.skipped = tr.skipped;
            r.cue_ms = tr.cue_ms;
            r.train_ms = tr.train_ms;
        }
    }
    let final_snap = cell.latest();
    Ok(RunSummary {
        records: outputs,
        cycles: final_snap.version,
        cue_drops: drops.into_inner(),
        snapshots: snapshots.into_inner(),
        wall_s: start.elapsed().as_secs_f64(),
        final_checksum: final_snap.checksum(),
    })
}
