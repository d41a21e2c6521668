//! Streaming execution: a sequential reference loop and a concurrent
//! pipeline whose inference stage only ever reads published weight
//! snapshots, plus mask/diagnostic output and throughput benchmarking.

mod bench;
mod output;
mod pipeline;
mod snapshot;
mod watch;

pub use bench::{bench, BenchOptions, BenchReport, StageStats};
pub use output::{write_diagnostics_csv, MaskWriter};
pub use snapshot::{weights_checksum, SnapshotCell, WeightSnapshot};
pub use watch::DirectoryWatch;

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::Result;
use crate::geometry::{CameraModel, SkyProvider};
use crate::imaging::ThermalFrame;
use crate::online::{FrameOutput, FrameRecord, OnlineConfig, OnlineSession};
use crate::segnet::SegModel;

/// Default capacity of every inter-stage queue.
pub const QUEUE_CAPACITY: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExecMode {
    /// One thread, frame by frame. The reference for the concurrent path.
    Sequential,
    #[default]
    Concurrent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuntimeOptions {
    pub mode: ExecMode,
    /// Inference for frame `t` waits until every training cycle scheduled
    /// at or before `t` has been published, and cue work is never dropped.
    /// The result then matches the sequential loop exactly. Otherwise
    /// inference uses whatever snapshot is current.
    pub deterministic: bool,
    pub training: bool,
    pub queue_capacity: usize,
    /// Run cue and trainer workers at idle scheduling priority.
    pub low_priority: bool,
    /// Feed frames no faster than this, emulating a camera.
    pub pace_hz: Option<f64>,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        Self {
            mode: ExecMode::Concurrent,
            deterministic: true,
            training: true,
            queue_capacity: QUEUE_CAPACITY,
            low_priority: true,
            pace_hz: None,
        }
    }
}

/// Scene context shared by every stage.
#[derive(Clone, Default)]
pub struct StreamContext {
    pub camera: Option<CameraModel>,
    pub sky: Option<Arc<dyn SkyProvider>>,
}

impl std::fmt::Debug for StreamContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StreamContext")
            .field("camera", &self.camera)
            .field("sky", &self.sky.is_some())
            .finish()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    /// One record per frame, in stream order.
    pub records: Vec<FrameRecord>,
    pub cycles: usize,
    /// Cue jobs dropped under backpressure.
    pub cue_drops: usize,
    /// Snapshots published by the trainer, including the initial one.
    pub snapshots: usize,
    pub wall_s: f64,
    /// Checksum of the final inference weights.
    pub final_checksum: [u8; 32],
}

/// Runs `frames` through the online pipeline, calling `sink` once per frame
/// in stream order. The stream ends cleanly when `frames` is exhausted.
pub fn run_stream<I, S>(
    frames: I,
    model: SegModel,
    cfg: &OnlineConfig,
    ctx: &StreamContext,
    opts: &RuntimeOptions,
    sink: S,
) -> Result<RunSummary>
where
    I: Iterator<Item = Result<ThermalFrame>> + Send,
    S: FnMut(FrameOutput) -> Result<()>,
{
    match opts.mode {
        ExecMode::Sequential => run_sequential(frames, model, cfg, ctx, opts, sink),
        ExecMode::Concurrent => pipeline::run_concurrent(frames, model, cfg, ctx, opts, sink),
    }
}

fn run_sequential<I, S>(
    frames: I,
    model: SegModel,
    cfg: &OnlineConfig,
    ctx: &StreamContext,
    opts: &RuntimeOptions,
    mut sink: S,
) -> Result<RunSummary>
where
    I: Iterator<Item = Result<ThermalFrame>>,
    S: FnMut(FrameOutput) -> Result<()>,
{
    let start = Instant::now();
    let mut session = OnlineSession::new(model, cfg.clone(), ctx.camera.clone(), ctx.sky.clone())?;
    session.training = opts.training;
    let mut pacer = Pacer::new(opts.pace_hz);
    let mut records = Vec::new();
    for frame in frames {
        pacer.wait();
        let out = session.process(frame?)?;
        records.push(out.record.clone());
        sink(out)?;
    }
    let cycles = session.trainer.cycles();
    Ok(RunSummary {
        records,
        cycles,
        cue_drops: 0,
        snapshots: cycles + 1,
        wall_s: start.elapsed().as_secs_f64(),
        final_checksum: weights_checksum(session.model()),
    })
}

/// Deadline-based frame pacing.
pub(crate) struct Pacer {
    period: Option<Duration>,
    next: Option<Instant>,
}

impl Pacer {
    pub(crate) fn new(hz: Option<f64>) -> Self {
        Self {
            period: hz.filter(|h| *h > 0.0).map(|h| Duration::from_secs_f64(1.0 / h)),
            next: None,
        }
    }

    pub(crate) fn wait(&mut self) {
        let Some(p) = self.period else { return };
        let now = Instant::now();
        let due = self.next.unwrap_or(now);
        if due > now {
            std::thread::sleep(due - now);
        }
        // A late frame does not earn a burst afterwards.
        self.next = Some(due.max(now) + p);
    }
}

/// Moves the calling thread to idle scheduling, or the lowest nice level
/// where that is refused. Best effort.
pub(crate) fn lower_thread_priority() {
    #[cfg(target_os = "linux")]
    unsafe {
        // SAFETY: both calls only affect the calling thread's scheduling
        // attributes and take plain values.
        let param = libc::sched_param { sched_priority: 0 };
        if libc::sched_setscheduler(0, libc::SCHED_IDLE, &param) != 0 {
            let tid = libc::gettid();
            libc::setpriority(libc::PRIO_PROCESS, tid as libc::id_t, 19);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pacer_spaces_frames() {
        let mut p = Pacer::new(Some(200.0));
        let start = Instant::now();
        for _ in 0..5 {
            p.wait();
        }
        assert!(start.elapsed() >= Duration::from_millis(19));
        let mut free = Pacer::new(None);
        let start = Instant::now();
        for _ in 0..1000 {
            free.wait();
        }
        assert!(start.elapsed() < Duration::from_millis(50));
    }
}
