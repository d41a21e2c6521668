use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::segnet::{AdamConfig, STRIDE};

/// What marks definite non-water in the labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OverrideSource {
    None,
    Sky,
    /// IMU horizon, falling back to the sky provider for attitude-less frames.
    Horizon,
}

impl FromStr for OverrideSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "sky" => Ok(Self::Sky),
            "imu" | "horizon" => Ok(Self::Horizon),
            other => Err(Error::InvalidConfig(format!("unknown override source '{other}' (none|sky|imu)"))),
        }
    }
}

impl fmt::Display for OverrideSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Sky => "sky",
            Self::Horizon => "imu",
        })
    }
}

/// Which self-supervision cues feed the labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct CueSet {
    pub texture: bool,
    pub motion: bool,
}

impl CueSet {
    pub const NONE: CueSet = CueSet { texture: false, motion: false };
    pub const TEXTURE: CueSet = CueSet { texture: true, motion: false };
    pub const MOTION: CueSet = CueSet { texture: false, motion: true };
    pub const ALL: CueSet = CueSet { texture: true, motion: true };
}

impl FromStr for CueSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = CueSet::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "texture" | "tc" => set.texture = true,
                "motion" | "mc" => set.motion = true,
                "all" => set = CueSet::ALL,
                "none" => {}
                other => return Err(Error::InvalidConfig(format!("unknown cue '{other}' (texture|motion|all|none)"))),
            }
        }
        Ok(set)
    }
}

impl fmt::Display for CueSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.texture, self.motion) {
            (true, true) => f.write_str("texture,motion"),
            (true, false) => f.write_str("texture"),
            (false, true) => f.write_str("motion"),
            (false, false) => f.write_str("none"),
        }
    }
}

/// Knobs of the online adaptation loop.
///
/// Merge weights are ordered `(teacher, motion, texture)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineConfig {
    /// Adam iterations per training cycle (N).
    pub iterations: usize,
    /// Buffer capacity (L).
    pub buffer_len: usize,
    pub batch: usize,
    /// Momentum-teacher mixing factor.
    pub lambda: f64,
    /// Adam learning rate.
    pub gamma: f64,
    pub weight_decay: f64,
    pub w: [f32; 3],
    pub xi: [f32; 3],
    /// Training crop `(width, height)`; both multiples of 16.
    pub crop: (usize, usize),
    pub train_interval: u64,
    pub buffer_stride: u64,
    /// Downscale factor applied before cue computation.
    pub cue_scale: f64,
    pub alpha_t: f32,
    pub cues: CueSet,
    pub override_source: OverrideSource,
    /// Distance in frames between the two images of a motion pair.
    pub motion_gap: u64,
    /// Extra stream positions that trigger a training cycle.
    pub extra_triggers: BTreeSet<u64>,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            iterations: 8,
            buffer_len: 8,
            batch: 4,
            lambda: 0.3,
            gamma: 1e-3,
            weight_decay: 1e-4,
            w: [1.0, 1.0, 1.0],
            xi: [1.0, 0.0, 1.0],
            crop: (320, 320),
            train_interval: 120,
            buffer_stride: 4,
            cue_scale: 0.5,
            alpha_t: 10.0,
            cues: CueSet::TEXTURE,
            override_source: OverrideSource::Horizon,
            motion_gap: 1,
            extra_triggers: BTreeSet::new(),
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "iterations",
    "buffer_len",
    "batch",
    "lambda",
    "gamma",
    "weight_decay",
    "cue_weights_w",
    "cue_weights_xi",
    "crop",
    "train_interval",
    "buffer_stride",
    "cue_scale",
    "alpha_t",
    "cues",
    "horizon",
    "motion_gap",
    "extra_triggers",
    "seed",
];

impl OnlineConfig {
    /// Teacher weight plus the weights of enabled cues, per class.
    pub fn active_weight_sums(&self) -> (f32, f32) {
        let on = |i: usize| match i {
            0 => true,
            1 => self.cues.motion,
            _ => self.cues.texture,
        };
        let sum = |v: &[f32; 3]| (0..3).filter(|&i| on(i)).map(|i| v[i]).sum::<f32>();
        (sum(&self.w), sum(&self.xi))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.iterations == 0 || self.buffer_len == 0 || self.batch == 0 {
            return bad("iterations, buffer_len and batch must be >= 1".into());
        }
        if self.w.iter().chain(&self.xi).any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return bad("merge weights must be finite and >= 0".into());
        }
        let (sw, sx) = self.active_weight_sums();
        if !(sw > 0.0) || !(sx > 0.0) {
            return bad(format!("each class needs a positive weight on an active source (w sum {sw}, xi sum {sx})"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must be in [0, 1], got {}", self.lambda));
        }
        if !(self.gamma > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("gamma must be > 0 and weight_decay >= 0".into());
        }
        let (cw, ch) = self.crop;
        if cw == 0 || ch == 0 || cw % STRIDE != 0 || ch % STRIDE != 0 {
            return bad(format!("crop {cw}x{ch} must be positive multiples of {STRIDE}"));
        }
        if self.buffer_stride == 0 || self.motion_gap == 0 {
            return bad("buffer_stride and motion_gap must be >= 1".into());
        }
        if !(self.cue_scale > 0.0 && self.cue_scale <= 1.0) {
            return bad(format!("cue_scale must be in (0, 1], got {}", self.cue_scale));
        }
        if !(self.alpha_t > 0.0) {
            return bad(format!("alpha_t must be > 0, got {}", self.alpha_t));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.gamma,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Sets one field from its config-file key and textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse '{v}'")))
        }
        match key.trim() {
            "iterations" => self.iterations = num(key, v)?,
            "buffer_len" => self.buffer_len = num(key, v)?,
            "batch" => self.batch = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "cue_weights_w" => self.w = parse_triple(key, v)?,
            "cue_weights_xi" => self.xi = parse_triple(key, v)?,
            "crop" => self.crop = parse_size(v)?,
            "train_interval" => self.train_interval = num(key, v)?,
            "buffer_stride" => self.buffer_stride = num(key, v)?,
            "cue_scale" => self.cue_scale = num(key, v)?,
            "alpha_t" => self.alpha_t = num(key, v)?,
            "cues" => self.cues = v.parse()?,
            "horizon" => self.override_source = v.parse()?,
            "motion_gap" => self.motion_gap = num(key, v)?,
            "extra_triggers" => {
                self.extra_triggers = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_>>()?
            }
            "seed" => self.seed = num(key, v)?,
            other => return Err(Error::InvalidConfig(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config_string(&self) -> String {
        let list = |v: &[f32; 3]| format!("{},{},{}", v[0], v[1], v[2]);
        let triggers: Vec<String> = self.extra_triggers.iter().map(u64::to_string).collect();
        let values = [
            self.iterations.to_string(),
            self.buffer_len.to_string(),
            self.batch.to_string(),
            self.lambda.to_string(),
            self.gamma.to_string(),
            self.weight_decay.to_string(),
            list(&self.w),
            list(&self.xi),
            format!("{}x{}", self.crop.0, self.crop.1),
            self.train_interval.to_string(),
            self.buffer_stride.to_string(),
            self.cue_scale.to_string(),
            self.alpha_t.to_string(),
            self.cues.to_string(),
            self.override_source.to_string(),
            self.motion_gap.to_string(),
            triggers.join(","),
            self.seed.to_string(),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_config_string()).map_err(|e| Error::from(e).at(path))
    }
}

fn parse_triple(key: &str, v: &str) -> Result<[f32; 3]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::InvalidConfig(format!("{key}: expected three comma-separated values")));
    }
    let mut out = [0.0f32; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse '{p}'")))?;
    }
    Ok(out)
}

/// `WxH` or a single side for square crops.
pub fn parse_size(v: &str) -> Result<(usize, usize)> {
    let err = || Error::InvalidConfig(format!("cannot parse size '{v}' (expected WxH)"));
    match v.split_once(['x', 'X']) {
        Some((a, b)) => Ok((a.trim().parse().map_err(|_| err())?, b.trim().parse().map_err(|_| err())?)),
        None => {
            let s = v.trim().parse().map_err(|_| err())?;
            Ok((s, s))
        }
    }
}
