use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use thermoseg::geometry::HeuristicSky;
use thermoseg::imaging::Preprocessor;
use thermoseg::motion::{register_pair, MotionCueParams};
use thermoseg::online::{infer_and_clean, CueEngine, OnlineConfig, OnlineTrainer};
use thermoseg::synth::{generate, SceneMode, SceneSpec};
use thermoseg::texture::{texture_cue, TextureCueParams};
use thermoseg::SegModel;

fn scene(mode: SceneMode) -> (SceneSpec, Vec<thermoseg::synth::SynthFrame>) {
    let spec = SceneSpec::new(mode, 320, 256, 3, 1);
    let seq = generate(&spec).unwrap();
    (spec, seq)
}

fn stages(c: &mut Criterion) {
    let (spec, seq) = scene(SceneMode::River);
    let pre = Preprocessor::default();
    let img = pre.apply(&seq[1].frame).unwrap();
    let prev = pre.apply(&seq[0].frame).unwrap();
    let model = SegModel::build(0);

    c.bench_function("preprocess 320x256", |b| b.iter(|| pre.apply(black_box(&seq[1].frame)).unwrap()));
    c.bench_function("texture cue 320x256 @0.5", |b| {
        let p = TextureCueParams::for_cue_size(160, 128);
        b.iter(|| texture_cue(black_box(&img), &p, 0.5).unwrap())
    });
    c.bench_function("register pair 320x256", |b| {
        let p = MotionCueParams::default();
        b.iter(|| register_pair(black_box(&prev), &img, &p).unwrap())
    });
    c.bench_function("infer + cleanup 320x256", |b| b.iter(|| infer_and_clean(&model, black_box(&img), None).unwrap()));

    let cfg = OnlineConfig {
        iterations: 1,
        batch: 2,
        buffer_len: 2,
        crop: (160, 128),
        ..OnlineConfig::default()
    };
    let engine = CueEngine::new(&cfg, Some(spec.camera()), Some(Arc::new(HeuristicSky)));
    let entries: Vec<_> = seq[1..].iter().map(|f| engine.build_entry(&f.frame, &pre.apply(&f.frame).unwrap(), None)).collect();
    c.bench_function("online step 1x2 @160x128", |b| {
        b.iter_batched(
            || {
                let mut t = OnlineTrainer::new(model.clone(), cfg.clone()).unwrap();
                entries.iter().cloned().for_each(|e| t.push(e));
                t
            },
            |mut t| t.train().unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = stages
}
criterion_main!(benches);
