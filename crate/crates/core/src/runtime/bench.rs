use std::fmt::Write as _;
use std::time::Instant;

use super::{run_stream, ExecMode, RunSummary, RuntimeOptions, StreamContext};
use crate::error::{Error, Result};
use crate::imaging::{Preprocessor, ThermalFrame};
use crate::online::{infer_and_clean, FrameRecord, OnlineConfig};
use crate::raster::nearest_rank_sorted;
use crate::segnet::SegModel;

/// Fewest frames a benchmark accepts.
pub const MIN_BENCH_FRAMES: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOptions {
    /// Frame feed rate. `None` calibrates it to half the measured
    /// single-thread preprocess + inference throughput, which leaves the
    /// trainer room to run.
    pub pace_hz: Option<f64>,
    /// Training interval used for the trainer-active pass.
    pub train_interval: u64,
    /// `false` skips the trainer-active pass.
    pub trainer: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            pace_hz: None,
            train_interval: 10,
            trainer: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl StageStats {
    pub fn from_samples(samples: impl IntoIterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = samples.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        Self {
            count: v.len(),
            mean_ms: v.iter().sum::<f64>() / v.len() as f64,
            p95_ms: nearest_rank_sorted(&v, 0.95),
        }
    }

    /// Rate implied by the mean latency.
    pub fn rate_hz(&self) -> f64 {
        if self.mean_ms > 0.0 {
            1e3 / self.mean_ms
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub frames: usize,
    pub pace_hz: f64,
    pub preprocess: StageStats,
    pub cue: StageStats,
    pub train: StageStats,
    pub infer_idle: StageStats,
    pub infer_active: StageStats,
    /// Cue jobs completed per second of the active pass.
    pub cue_rate_hz: f64,
    pub online_update_rate_hz: f64,
    /// From mean inference latency with the trainer idle / active.
    pub inference_rate_idle_hz: f64,
    pub inference_rate_hz: f64,
    /// Masks delivered per second of wall time in the active pass.
    pub throughput_hz: f64,
    pub cycles: usize,
    pub cue_drops: usize,
}

impl BenchReport {
    pub fn active_idle_ratio(&self) -> f64 {
        if self.inference_rate_idle_hz > 0.0 {
            self.inference_rate_hz / self.inference_rate_idle_hz
        } else {
            0.0
        }
    }

    /// Inference keeps at least 80% of its idle rate while training.
    pub fn non_blocking(&self) -> bool {
        self.active_idle_ratio() >= 0.8
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames            {}", self.frames);
        let _ = writeln!(s, "feed rate         {:.2} Hz", self.pace_hz);
        for (name, st) in [
            ("preprocess", self.preprocess),
            ("cues", self.cue),
            ("train cycle", self.train),
            ("infer (idle)", self.infer_idle),
            ("infer (active)", self.infer_active),
        ] {
            let _ = writeln!(s, "{name:<17} n={:<5} mean {:>9.2} ms  p95 {:>9.2} ms", st.count, st.mean_ms, st.p95_ms);
        }
        let _ = writeln!(s, "cue rate          {:.3} Hz ({} dropped)", self.cue_rate_hz, self.cue_drops);
        let _ = writeln!(s, "online updates    {:.3} Hz ({} cycles)", self.online_update_rate_hz, self.cycles);
        let _ = writeln!(s, "inference         {:.2} Hz idle, {:.2} Hz active", self.inference_rate_idle_hz, self.inference_rate_hz);
        let _ = writeln!(s, "throughput        {:.2} Hz", self.throughput_hz);
        let _ = writeln!(
            s,
            "non-blocking      {} (active/idle {:.3})",
            if self.non_blocking() { "yes" } else { "NO" },
            self.active_idle_ratio()
        );
        s
    }
}

fn calibrate(frames: &[ThermalFrame], model: &SegModel) -> Result<f64> {
    let pre = Preprocessor::default();
    let n = frames.len().min(8);
    let start = Instant::now();
    for f in &frames[..n] {
        let img = pre.apply(f)?;
        infer_and_clean(model, &img, None)?;
    }
    let per_frame = start.elapsed().as_secs_f64() / n as f64;
    Ok(0.5 / per_frame.max(1e-6))
}

fn pass(
    frames: &[ThermalFrame],
    model: &SegModel,
    cfg: &OnlineConfig,
    ctx: &StreamContext,
    pace: f64,
    training: bool,
) -> Result<RunSummary> {
    let opts = RuntimeOptions {
        mode: ExecMode::Concurrent,
        deterministic: false,
        training,
        pace_hz: Some(pace),
        ..RuntimeOptions::default()
    };
    run_stream(frames.iter().cloned().map(Ok), model.clone(), cfg, ctx, &opts, |_| Ok(()))
}

fn stats(records: &[FrameRecord], f: impl Fn(&FrameRecord) -> Option<f64>) -> StageStats {
    StageStats::from_samples(records.iter().filter_map(f))
}

/// Streams `frames` once with the trainer idle and once with it busy, at
/// the same feed rate, and compares inference latency.
pub fn bench(
    frames: &[ThermalFrame],
    model: &SegModel,
    cfg: &OnlineConfig,
    ctx: &StreamContext,
    opts: &BenchOptions,
) -> Result<BenchReport> {
    if frames.len() < MIN_BENCH_FRAMES {
        return Err(Error::invalid(format!(
            "bench needs at least {MIN_BENCH_FRAMES} frames, got {}",
            frames.len()
        )));
    }
    let pace = match opts.pace_hz {
        Some(p) if p > 0.0 => p,
        Some(p) => return Err(Error::invalid(format!("pace must be positive, got {p}"))),
        None => calibrate(frames, model)?,
    };
    let idle = pass(frames, model, cfg, ctx, pace, false)?;
    let infer_idle = stats(&idle.records, |r| Some(r.infer_ms));
    let active = if opts.trainer {
        let cfg = OnlineConfig {
            train_interval: opts.train_interval,
            ..cfg.clone()
        };
        pass(frames, model, &cfg, ctx, pace, true)?
    } else {
        idle.clone()
    };
    let infer_active = stats(&active.records, |r| Some(r.infer_ms));
    let wall = active.wall_s.max(1e-9);
    let cues = active.records.iter().filter(|r| r.buffered).count();
    Ok(BenchReport {
        frames: frames.len(),
        pace_hz: pace,
        preprocess: stats(&active.records, |r| Some(r.preprocess_ms)),
        cue: stats(&active.records, |r| r.buffered.then_some(r.cue_ms)),
        train: stats(&active.records, |r| r.trained.then_some(r.train_ms)),
        inference_rate_idle_hz: infer_idle.rate_hz(),
        inference_rate_hz: infer_active.rate_hz(),
        infer_idle,
        infer_active,
        cue_rate_hz: if opts.trainer { cues as f64 / wall } else { 0.0 },
        online_update_rate_hz: if opts.trainer { active.cycles as f64 / wall } else { 0.0 },
        throughput_hz: active.records.len() as f64 / wall,
        cycles: if opts.trainer { active.cycles } else { 0 },
        cue_drops: active.cue_drops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_stats() {
        let s = StageStats::from_samples((1..=20).map(f64::from));
        assert_eq!(s.count, 20);
        assert_eq!(s.mean_ms, 10.5);
        assert_eq!(s.p95_ms, 19.0);
        assert!((s.rate_hz() - 1e3 / 10.5).abs() < 1e-12);
        assert_eq!(StageStats::from_samples([]).rate_hz(), 0.0);
    }

    #[test]
    fn too_few_frames() {
        let r = bench(&[], &SegModel::build(0), &OnlineConfig::default(), &StreamContext::default(), &BenchOptions::default());
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }
}
