//! Sequence ingestion, mIoU scoring, and the cue/override ablation grid.

mod report;

pub use report::{format_table, write_report_csv};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::{read_camera_config, read_imu_csv, CameraModel, HeuristicSky, ImuStream, SkyProvider};
use crate::imaging::{io, ThermalFrame};
use crate::online::{CueSet, OnlineConfig, OnlineSession, OverrideSource, SegMask};
use crate::segnet::SegModel;
use crate::synth::{SceneSpec, SynthFrame};

/// Where a sequence's files live.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceManifest {
    pub frames: PathBuf,
    pub imu: Option<PathBuf>,
    pub camera: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub frame_rate: f64,
    /// Timestamp of index 0; later frames are spaced by `1 / frame_rate`.
    pub start_ns: u64,
}

pub const MANIFEST_FILE: &str = "sequence.txt";

impl SequenceManifest {
    /// Reads `dir/sequence.txt` when present; otherwise looks for
    /// `frames/` (or `images/`), `imu.csv`, `camera.txt` and `masks/` under
    /// `dir`, falling back to `dir` itself as the frame directory.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let existing = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        let mut m = Self {
            frames: existing("frames").or_else(|| existing("images")).unwrap_or_else(|| dir.to_path_buf()),
            imu: existing("imu.csv"),
            camera: existing("camera.txt"),
            annotations: existing("masks").or_else(|| existing("annotations")),
            frame_rate: 10.0,
            start_ns: 1_000_000_000,
        };
        let path = dir.join(MANIFEST_FILE);
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::from(e).at(&path))?;
            for line in text.lines() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::invalid(format!("expected key = value, got '{line}'")).at(&path))?;
                let (k, v) = (k.trim(), v.trim());
                let bad = || Error::invalid(format!("bad value for {k}: '{v}'")).at(&path);
                match k {
                    "frames" => m.frames = dir.join(v),
                    "imu" => m.imu = Some(dir.join(v)),
                    "camera" => m.camera = Some(dir.join(v)),
                    "annotations" => m.annotations = Some(dir.join(v)),
                    "frame_rate" => m.frame_rate = v.parse().map_err(|_| bad())?,
                    "start_ns" => m.start_ns = v.parse().map_err(|_| bad())?,
                    _ => log::warn!("{}: ignoring unknown key '{k}'", path.display()),
                }
            }
        }
        if !(m.frame_rate > 0.0) {
            return Err(Error::invalid("frame_rate must be positive").at(&path));
        }
        Ok(m)
    }

    pub fn timestamp(&self, index: u64) -> u64 {
        self.start_ns + (index as f64 * 1e9 / self.frame_rate).round() as u64
    }
}

/// Frames in index order, attitude attached from the IMU stream when one
/// exists. Per-file failures carry the sequence position.
pub struct SequenceReader {
    files: std::vec::IntoIter<(u64, PathBuf)>,
    manifest: SequenceManifest,
    imu: Option<ImuStream>,
    size: Option<(usize, usize)>,
    position: usize,
}

impl SequenceReader {
    pub fn manifest(&self) -> &SequenceManifest {
        &self.manifest
    }
}

impl Iterator for SequenceReader {
    type Item = Result<ThermalFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        let (index, path) = self.files.next()?;
        let pos = self.position;
        self.position += 1;
        let ts = self.manifest.timestamp(index);
        let frame = match io::read_frame(&path, index, ts) {
            Ok(f) => f,
            Err(e) => return Some(Err(Error::invalid(format!("sequence position {pos}: {e}")))),
        };
        let dims = (frame.width(), frame.height());
        match self.size {
            None => self.size = Some(dims),
            Some(s) if s != dims => {
                // Later frames cannot be trusted either.
                self.files = Vec::new().into_iter();
                return Some(Err(Error::StageFailed {
                    stage: "ingest",
                    reason: format!("frame {index} is {}x{}, sequence is {}x{}", dims.0, dims.1, s.0, s.1),
                }));
            }
            Some(_) => {}
        }
        let imu = self.imu.as_ref().and_then(|s| s.nearest(ts).cloned());
        Some(Ok(frame.with_attitude(imu)))
    }
}

pub fn load_sequence(manifest: &SequenceManifest) -> Result<SequenceReader> {
    let files = io::list_frames(&manifest.frames)?;
    let imu = manifest.imu.as_deref().map(read_imu_csv).transpose()?;
    Ok(SequenceReader {
        files: files.into_iter(),
        manifest: manifest.clone(),
        imu,
        size: None,
        position: 0,
    })
}

/// Annotation masks keyed by frame index. Fails if an annotation has no
/// matching frame file.
pub fn load_annotations(manifest: &SequenceManifest) -> Result<BTreeMap<u64, SegMask>> {
    let Some(dir) = &manifest.annotations else {
        return Ok(BTreeMap::new());
    };
    let frames: std::collections::BTreeSet<u64> = io::list_frames(&manifest.frames)?.into_iter().map(|(i, _)| i).collect();
    let mut out = BTreeMap::new();
    for (i, path) in io::list_frames(dir)? {
        if !frames.contains(&i) {
            return Err(Error::invalid(format!("annotation {} has no frame", path.display())));
        }
        out.insert(i, io::read_mask(&path)?);
    }
    Ok(out)
}

/// `(IoU_water, IoU_non_water, mIoU)`; a class absent from both masks
/// scores 1.
pub fn miou(pred: &SegMask, truth: &SegMask) -> Result<(f64, f64, f64)> {
    if !pred.same_size(truth) {
        return Err(Error::invalid(format!(
            "miou: prediction {}x{} vs truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let mut inter = [0usize; 2];
    let mut union = [0usize; 2];
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        for (c, want) in [true, false].into_iter().enumerate() {
            let (pc, tc) = (p == want, t == want);
            inter[c] += (pc && tc) as usize;
            union[c] += (pc || tc) as usize;
        }
    }
    let iou = |c: usize| if union[c] == 0 { 1.0 } else { inter[c] as f64 / union[c] as f64 };
    let (w, n) = (iou(0), iou(1));
    Ok((w, n, (w + n) / 2.0))
}

/// An in-memory sequence ready for replay.
#[derive(Clone)]
pub struct SequenceData {
    pub name: String,
    pub frames: Vec<ThermalFrame>,
    pub annotations: BTreeMap<u64, SegMask>,
    pub camera: Option<CameraModel>,
    pub sky: Option<Arc<dyn SkyProvider>>,
}

impl std::fmt::Debug for SequenceData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SequenceData")
            .field("name", &self.name)
            .field("frames", &self.frames.len())
            .field("annotations", &self.annotations.len())
            .finish()
    }
}

impl SequenceData {
    /// Reads a sequence directory; the heuristic sky provider is attached.
    pub fn from_dir(name: &str, dir: &Path) -> Result<Self> {
        let manifest = SequenceManifest::from_dir(dir)?;
        let frames = load_sequence(&manifest)?.collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: name.to_string(),
            annotations: load_annotations(&manifest)?,
            camera: manifest.camera.as_deref().map(read_camera_config).transpose()?,
            frames,
            sky: Some(Arc::new(HeuristicSky)),
        })
    }

    /// Annotates every `annotate_every`-th frame starting at `first`.
    pub fn from_synth(name: &str, seq: &[SynthFrame], spec: &SceneSpec, first: usize, annotate_every: usize) -> Self {
        let step = annotate_every.max(1);
        Self {
            name: name.to_string(),
            frames: seq.iter().map(|f| f.frame.clone()).collect(),
            annotations: seq
                .iter()
                .skip(first)
                .step_by(step)
                .map(|f| (f.frame.frame_id, f.truth_mask.clone()))
                .collect(),
            camera: Some(spec.camera()),
            sky: Some(Arc::new(HeuristicSky)),
        }
    }

    /// Stream positions of annotated frames.
    pub fn annotated_positions(&self) -> Vec<u64> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(_, f)| self.annotations.contains_key(&f.frame_id))
            .map(|(i, _)| i as u64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameScore {
    pub frame_id: u64,
    pub iou_water: f64,
    pub iou_non_water: f64,
    pub miou: f64,
}

/// Scores of one sequence under one setting.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub sequence: String,
    pub setting: String,
    pub frames: Vec<FrameScore>,
    /// Mean per-frame mIoU.
    pub miou: f64,
    pub cycles: usize,
    pub mean_infer_ms: f64,
    pub mean_train_ms: f64,
    pub wall_s: f64,
}

/// How a replay is run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub label: String,
    pub cfg: OnlineConfig,
    /// `false` gives the pretrained-only baseline.
    pub train: bool,
    /// Also train right before each annotated frame.
    pub train_before_annotated: bool,
}

/// Replays `seq` through the sequential online pipeline and scores every
/// annotated frame.
pub fn evaluate_run(seq: &SequenceData, model: &SegModel, run: &RunSettings) -> Result<EvalReport> {
    let start = Instant::now();
    let mut cfg = run.cfg.clone();
    if run.train_before_annotated {
        cfg.extra_triggers.extend(seq.annotated_positions());
    }
    let mut session = OnlineSession::new(model.clone(), cfg, seq.camera.clone(), seq.sky.clone())?;
    session.training = run.train;
    let mut frames = Vec::new();
    let (mut infer, mut train, mut trained) = (0.0, 0.0, 0usize);
    for f in &seq.frames {
        let id = f.frame_id;
        let out = session.process(f.clone())?;
        infer += out.record.infer_ms;
        if out.record.trained {
            train += out.record.train_ms;
            trained += 1;
        }
        if let Some(truth) = seq.annotations.get(&id) {
            let (w, n, m) = miou(&out.mask, truth)?;
            frames.push(FrameScore {
                frame_id: id,
                iou_water: w,
                iou_non_water: n,
                miou: m,
            });
        }
    }
    let mean = |v: f64, n: usize| if n == 0 { 0.0 } else { v / n as f64 };
    Ok(EvalReport {
        sequence: seq.name.clone(),
        setting: run.label.clone(),
        miou: mean(frames.iter().map(|f| f.miou).sum(), frames.len()),
        frames,
        cycles: session.trainer.cycles(),
        mean_infer_ms: mean(infer, seq.frames.len()),
        mean_train_ms: mean(train, trained),
        wall_s: start.elapsed().as_secs_f64(),
    })
}

/// Cue subsets of the ablation grid, in column order.
pub const ABLATION_CUES: [(&str, Option<CueSet>); 4] = [
    ("PT", None),
    ("PT+TC", Some(CueSet::TEXTURE)),
    ("PT+MC", Some(CueSet::MOTION)),
    ("PT+All", Some(CueSet::ALL)),
];

/// Override sources of the ablation grid, in column order.
pub const ABLATION_OVERRIDES: [OverrideSource; 3] = [OverrideSource::None, OverrideSource::Sky, OverrideSource::Horizon];

pub fn ablation_label(cues: &str, src: OverrideSource) -> String {
    let o = match src {
        OverrideSource::None => "none",
        OverrideSource::Sky => "sky",
        OverrideSource::Horizon => "horizon",
    };
    format!("{cues}/{o}")
}

/// The 12 settings of the grid derived from `base`.
pub fn ablation_settings(base: &OnlineConfig) -> Vec<RunSettings> {
    let mut out = Vec::new();
    for (name, cues) in ABLATION_CUES {
        for src in ABLATION_OVERRIDES {
            out.push(RunSettings {
                label: ablation_label(name, src),
                cfg: OnlineConfig {
                    cues: cues.unwrap_or(CueSet::NONE),
                    override_source: src,
                    ..base.clone()
                },
                train: cues.is_some(),
                train_before_annotated: true,
            });
        }
    }
    out
}

/// Every sequence under every grid setting.
pub fn run_ablation(seqs: &[SequenceData], model: &SegModel, base: &OnlineConfig) -> Result<Vec<EvalReport>> {
    let mut out = Vec::new();
    for run in ablation_settings(base) {
        for s in seqs {
            let r = evaluate_run(s, model, &run)?;
            log::info!("{} {}: mIoU {:.3} ({} cycles, {:.1}s)", s.name, run.label, r.miou, r.cycles, r.wall_s);
            out.push(r);
        }
    }
    Ok(out)
}
