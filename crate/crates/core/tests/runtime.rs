use std::sync::Arc;

use thermoseg::geometry::HeuristicSky;
use thermoseg::online::{CueSet, OnlineConfig, OverrideSource};
use thermoseg::runtime::{run_stream, ExecMode, RunSummary, RuntimeOptions, StreamContext};
use thermoseg::synth::{generate, SceneMode, SceneSpec};
use thermoseg::{Error, Mask, SegModel, ThermalFrame};

fn scene(mode: SceneMode, n: usize) -> (Vec<ThermalFrame>, StreamContext) {
    let spec = SceneSpec::new(mode, 96, 64, n, 7);
    let frames = generate(&spec).unwrap().into_iter().map(|f| f.frame).collect();
    let ctx = StreamContext {
        camera: Some(spec.camera()),
        sky: Some(Arc::new(HeuristicSky)),
    };
    (frames, ctx)
}

fn small_cfg() -> OnlineConfig {
    OnlineConfig {
        iterations: 2,
        batch: 2,
        buffer_len: 3,
        buffer_stride: 2,
        train_interval: 5,
        crop: (64, 48),
        cues: CueSet::ALL,
        override_source: OverrideSource::Horizon,
        seed: 11,
        ..OnlineConfig::default()
    }
}

fn run(frames: &[ThermalFrame], ctx: &StreamContext, opts: &RuntimeOptions) -> (Vec<(u64, Mask)>, RunSummary) {
    let mut masks = Vec::new();
    let summary = run_stream(frames.iter().cloned().map(Ok), SegModel::build(3), &small_cfg(), ctx, opts, |o| {
        masks.push((o.record.frame_id, o.mask));
        Ok(())
    })
    .unwrap();
    (masks, summary)
}

#[test]
fn concurrent_matches_sequential_bit_exactly() {
    let (frames, ctx) = scene(SceneMode::Coast, 14);
    let seq = RuntimeOptions {
        mode: ExecMode::Sequential,
        ..RuntimeOptions::default()
    };
    let (a, sa) = run(&frames, &ctx, &seq);
    let (b, sb) = run(&frames, &ctx, &RuntimeOptions::default());
    assert_eq!(a.len(), frames.len());
    assert_eq!(a, b);
    // fill burst at 4, interval at 5 and 10
    assert_eq!(sa.cycles, 3);
    assert_eq!(sb.cycles, 3);
    assert_eq!(sa.final_checksum, sb.final_checksum);
    assert_eq!(sb.snapshots, 4);
    assert_eq!(sb.cue_drops, 0);
    let trained: Vec<u64> = sb.records.iter().filter(|r| r.trained).map(|r| r.index).collect();
    assert_eq!(trained, vec![4, 5, 10]);
    assert!(sb.records.iter().filter(|r| r.buffered).all(|r| r.index % 2 == 0));
}

#[test]
fn masks_arrive_in_order_in_live_mode() {
    let (frames, ctx) = scene(SceneMode::River, 12);
    let live = RuntimeOptions {
        deterministic: false,
        queue_capacity: 1,
        ..RuntimeOptions::default()
    };
    let (masks, s) = run(&frames, &ctx, &live);
    let ids: Vec<u64> = masks.iter().map(|m| m.0).collect();
    assert_eq!(ids, frames.iter().map(|f| f.frame_id).collect::<Vec<_>>());
    assert_eq!(s.records.len(), 12);
    assert!(s.records.iter().enumerate().all(|(i, r)| r.index == i as u64));
}

#[test]
fn training_disabled_keeps_initial_weights() {
    let (frames, ctx) = scene(SceneMode::Lake, 6);
    let opts = RuntimeOptions {
        training: false,
        ..RuntimeOptions::default()
    };
    let (_, s) = run(&frames, &ctx, &opts);
    assert_eq!(s.cycles, 0);
    assert_eq!(s.final_checksum, thermoseg::runtime::weights_checksum(&SegModel::build(3)));
}

#[test]
fn sink_and_source_errors_abort() {
    let (frames, ctx) = scene(SceneMode::Lake, 6);
    let r = run_stream(
        frames.iter().cloned().map(Ok),
        SegModel::build(3),
        &small_cfg(),
        &ctx,
        &RuntimeOptions::default(),
        |o| {
            if o.record.index == 2 {
                Err(Error::InvalidInput("stop".into()))
            } else {
                Ok(())
            }
        },
    );
    assert!(matches!(r, Err(Error::InvalidInput(_))));

    let bad = frames
        .iter()
        .cloned()
        .map(Ok)
        .take(3)
        .chain(std::iter::once(Err(Error::InvalidInput("unreadable".into()))));
    let mut n = 0;
    let r = run_stream(bad, SegModel::build(3), &small_cfg(), &ctx, &RuntimeOptions::default(), |_| {
        n += 1;
        Ok(())
    });
    assert!(r.is_err());
    assert_eq!(n, 3);
}
