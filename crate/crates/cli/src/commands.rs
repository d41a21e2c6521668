use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use thermoseg::evalio::{format_table, load_sequence, run_ablation, write_report_csv, SequenceData, SequenceManifest};
use thermoseg::geometry::{read_camera_config, HeuristicSky, MaskDirSky, SkyProvider};
use thermoseg::imaging::{io, Preprocessor};
use thermoseg::online::{CueEngine, OnlineConfig};
use thermoseg::runtime::{bench, run_stream, write_diagnostics_csv, BenchOptions, DirectoryWatch, ExecMode, MaskWriter, RuntimeOptions, StreamContext};
use thermoseg::segnet::{pretrain, read_weights, write_weights, PretrainConfig};
use thermoseg::synth::{export, generate, SceneMode, SceneSpec};
use thermoseg::{GrayImage, Mask, SegModel, ThermalFrame};

use crate::{BenchCmd, CuesCmd, EvalCmd, PreprocessCmd, PretrainCmd, RunCmd, SynthArgs, SynthCmd};

fn load_model(weights: Option<&Path>, seed: u64) -> Result<SegModel> {
    match weights {
        Some(p) => Ok(read_weights(p)?),
        None => {
            log::warn!("no --weights given, starting from untrained weights");
            Ok(SegModel::build(seed))
        }
    }
}

fn read_frames(dir: &Path) -> Result<(SequenceManifest, Vec<ThermalFrame>)> {
    let m = SequenceManifest::from_dir(dir)?;
    let frames = load_sequence(&m)?.collect::<thermoseg::Result<Vec<_>>>()?;
    if frames.is_empty() {
        bail!("no frames found under {}", m.frames.display());
    }
    Ok((m, frames))
}

fn context(manifest: &SequenceManifest, sky_masks: Option<&Path>) -> Result<StreamContext> {
    let sky: Arc<dyn SkyProvider> = match sky_masks {
        Some(d) => Arc::new(MaskDirSky { dir: d.to_path_buf() }),
        None => Arc::new(HeuristicSky),
    };
    Ok(StreamContext {
        camera: manifest.camera.as_deref().map(read_camera_config).transpose()?,
        sky: Some(sky),
    })
}

fn create_dir(d: &Path) -> Result<()> {
    std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))
}

pub fn preprocess(cmd: &PreprocessCmd) -> Result<()> {
    let (_, frames) = read_frames(&cmd.input)?;
    create_dir(&cmd.out)?;
    let pre = Preprocessor::default();
    for f in &frames {
        let img = pre.apply(f)?;
        io::write_gray(&cmd.out.join(io::frame_file_name(f.frame_id)), &img)?;
    }
    println!("preprocessed {} frames into {}", frames.len(), cmd.out.display());
    Ok(())
}

pub fn cues(cmd: &CuesCmd) -> Result<()> {
    let cfg = cmd.config.resolve()?;
    let (m, frames) = read_frames(&cmd.input)?;
    let ctx = context(&m, None)?;
    let engine = CueEngine::new(&cfg, ctx.camera, ctx.sky);
    let (tdir, mdir) = (cmd.out.join("texture"), cmd.out.join("motion"));
    create_dir(&tdir)?;
    create_dir(&mdir)?;
    let pre = Preprocessor::default();
    let gap = cfg.motion_gap as usize;
    let (mut nt, mut nm) = (0, 0);
    for (i, f) in frames.iter().enumerate() {
        let name = io::frame_file_name(f.frame_id);
        let img = pre.apply(f)?;
        if let Some(t) = engine.texture(&img) {
            io::write_gray(&tdir.join(&name), &t.p_water)?;
            nt += 1;
        }
        let prev = i.checked_sub(gap).map(|j| &frames[j]);
        if let Some(c) = engine.motion(prev, f) {
            let valid = c.valid.clone();
            let pw = match &valid {
                Some(v) => c.p_water.zip_map(v, |&p, &ok| if ok { p } else { 0.0 }),
                None => c.p_water.clone(),
            };
            io::write_gray(&mdir.join(&name), &pw)?;
            nm += 1;
        }
    }
    println!("{} frames: {nt} texture maps, {nm} motion maps under {}", frames.len(), cmd.out.display());
    Ok(())
}

fn spec_from(a: &SynthArgs, mode: SceneMode, seed: u64) -> SceneSpec {
    SceneSpec::new(mode, a.width, a.height, a.frames, seed)
}

pub fn synth(cmd: &SynthCmd) -> Result<()> {
    let spec = spec_from(&cmd.scene, cmd.mode, cmd.seed);
    let seq = generate(&spec)?;
    export(&seq, &spec, &cmd.out)?;
    println!("wrote {} {} frames to {}", seq.len(), cmd.mode, cmd.out.display());
    Ok(())
}

pub fn pretrain_cmd(cmd: &PretrainCmd) -> Result<()> {
    let pre = Preprocessor::default();
    let mut data: Vec<(GrayImage, Mask)> = Vec::new();
    for dir in &cmd.data {
        let seq = SequenceData::from_dir(&dir.display().to_string(), dir)?;
        for f in &seq.frames {
            if let Some(m) = seq.annotations.get(&f.frame_id) {
                data.push((pre.apply(f)?, m.clone()));
            }
        }
    }
    for mode in &cmd.synth {
        for k in 0..cmd.scenes {
            let spec = spec_from(&cmd.scene, *mode, cmd.seed.wrapping_add(1000 + k as u64));
            for f in generate(&spec)? {
                data.push((pre.apply(&f.frame)?, f.truth_mask));
            }
        }
    }
    if data.is_empty() {
        bail!("no training data: pass --data with annotated sequences or --synth modes");
    }
    let mut model = match &cmd.init {
        Some(p) => read_weights(p)?,
        None => SegModel::build(cmd.seed),
    };
    let pcfg = PretrainConfig {
        epochs: cmd.epochs,
        batch: cmd.batch,
        crop: cmd.crop,
        lr: cmd.lr,
        seed: cmd.seed,
        ..PretrainConfig::default()
    };
    let report = pretrain(&mut model, &data, &pcfg)?;
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>3}  loss {l:.4}", e + 1);
    }
    write_weights(&model, &cmd.out)?;
    println!("{} samples, weights written to {}", data.len(), cmd.out.display());
    Ok(())
}

pub fn run(cmd: &RunCmd) -> Result<()> {
    let cfg = cmd.config.resolve()?;
    let model = load_model(cmd.weights.as_deref(), cfg.seed)?;
    let manifest = SequenceManifest::from_dir(&cmd.input)?;
    let ctx = context(&manifest, cmd.sky_masks.as_deref())?;
    let opts = RuntimeOptions {
        mode: if cmd.sequential { ExecMode::Sequential } else { ExecMode::Concurrent },
        deterministic: !cmd.live,
        training: !cmd.no_train,
        pace_hz: cmd.pace,
        ..RuntimeOptions::default()
    };
    let overlay = cmd.overlay.then(|| cmd.out.join("overlay"));
    let writer = MaskWriter::create(&cmd.out.join("masks"), overlay.as_deref())?;
    let sink = |o: thermoseg::online::FrameOutput| writer.write(&o);
    let summary = if cmd.watch {
        let watch = DirectoryWatch::new(manifest, Duration::from_millis(cmd.poll_ms), Duration::from_millis(cmd.idle_timeout_ms))?;
        run_stream(watch, model, &cfg, &ctx, &opts, sink)?
    } else {
        let frames = load_sequence(&manifest)?;
        run_stream(frames, model, &cfg, &ctx, &opts, sink)?
    };
    let diag = cmd.diagnostics.clone().unwrap_or_else(|| cmd.out.join("diagnostics.csv"));
    write_diagnostics_csv(&diag, &summary.records)?;
    println!(
        "{} masks, {} training cycles, {} cue drops, {:.1}s",
        summary.records.len(),
        summary.cycles,
        summary.cue_drops,
        summary.wall_s
    );
    Ok(())
}

fn eval_sequences(cmd: &EvalCmd) -> Result<Vec<SequenceData>> {
    let mut seqs = Vec::new();
    for s in &cmd.sequence {
        let (name, dir) = match s.split_once('=') {
            Some((n, d)) => (n.to_string(), PathBuf::from(d)),
            None => (Path::new(s).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| s.clone()), PathBuf::from(s)),
        };
        let seq = SequenceData::from_dir(&name, &dir)?;
        if seq.annotations.is_empty() {
            bail!("{}: no annotations to score", dir.display());
        }
        seqs.push(seq);
    }
    for mode in &cmd.synth {
        let spec = spec_from(&cmd.scene, *mode, cmd.config.seed.unwrap_or(0).wrapping_add(cmd.synth_seed));
        let frames = generate(&spec)?;
        seqs.push(SequenceData::from_synth(&mode.to_string(), &frames, &spec, cmd.annotate_first, cmd.annotate_every));
    }
    if seqs.is_empty() {
        bail!("nothing to evaluate: pass --sequence DIR or --synth MODES");
    }
    Ok(seqs)
}

pub fn eval(cmd: &EvalCmd) -> Result<()> {
    let cfg = cmd.config.resolve()?;
    let model = load_model(cmd.weights.as_deref(), cfg.seed)?;
    let seqs = eval_sequences(cmd)?;
    let reports = run_ablation(&seqs, &model, &cfg)?;
    if let Some(p) = &cmd.csv {
        write_report_csv(p, &reports)?;
    }
    print!("{}", format_table(&reports));
    Ok(())
}

pub fn bench_cmd(cmd: &BenchCmd) -> Result<()> {
    let cfg: OnlineConfig = cmd.config.resolve()?;
    let model = load_model(cmd.weights.as_deref(), cfg.seed)?;
    let (frames, ctx) = match &cmd.input {
        Some(dir) => {
            let (m, frames) = read_frames(dir)?;
            (frames, context(&m, None)?)
        }
        None => {
            let spec = spec_from(&cmd.scene, cmd.mode, cfg.seed);
            let frames = generate(&spec)?.into_iter().map(|f| f.frame).collect();
            let ctx = StreamContext {
                camera: Some(spec.camera()),
                sky: Some(Arc::new(HeuristicSky)),
            };
            (frames, ctx)
        }
    };
    let opts = BenchOptions {
        pace_hz: cmd.pace,
        train_interval: cmd.bench_train_interval,
        trainer: !cmd.no_trainer,
    };
    let report = bench(&frames, &model, &cfg, &ctx, &opts)?;
    print!("{}", report.to_text());
    Ok(())
}
