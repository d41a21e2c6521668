use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use thermoseg::OnlineConfig;

/// Online-loop overrides, applied on top of `--config` (if any).
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// Run configuration file (key = value lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<String>,
    #[arg(long)]
    pub buffer_len: Option<String>,
    #[arg(long)]
    pub batch: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<String>,
    /// Label weights for teacher, motion, texture, e.g. 1,1,1.
    #[arg(long)]
    pub cue_weights_w: Option<String>,
    /// Non-water weights for teacher, motion, texture, e.g. 1,0,1.
    #[arg(long)]
    pub cue_weights_xi: Option<String>,
    /// Training crop as WxH.
    #[arg(long)]
    pub crop: Option<String>,
    #[arg(long)]
    pub train_interval: Option<String>,
    #[arg(long)]
    pub buffer_stride: Option<String>,
    #[arg(long)]
    pub cue_scale: Option<String>,
    #[arg(long)]
    pub alpha_t: Option<String>,
    /// texture, motion, texture,motion or none.
    #[arg(long)]
    pub cues: Option<String>,
    /// Definite-non-water source: imu, sky or none.
    #[arg(long)]
    pub horizon: Option<String>,
    #[arg(long)]
    pub motion_gap: Option<String>,
    /// Extra training positions, comma separated.
    #[arg(long)]
    pub extra_triggers: Option<String>,
    #[arg(long, env = thermoseg::SEED_ENV)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<OnlineConfig> {
        let mut cfg = match &self.config {
            Some(p) => OnlineConfig::read(p)?,
            None => OnlineConfig::default(),
        };
        let pairs = [
            ("iterations", &self.iterations),
            ("buffer_len", &self.buffer_len),
            ("batch", &self.batch),
            ("lambda", &self.lambda),
            ("gamma", &self.gamma),
            ("weight_decay", &self.weight_decay),
            ("cue_weights_w", &self.cue_weights_w),
            ("cue_weights_xi", &self.cue_weights_xi),
            ("crop", &self.crop),
            ("train_interval", &self.train_interval),
            ("buffer_stride", &self.buffer_stride),
            ("cue_scale", &self.cue_scale),
            ("alpha_t", &self.alpha_t),
            ("cues", &self.cues),
            ("horizon", &self.horizon),
            ("motion_gap", &self.motion_gap),
            ("extra_triggers", &self.extra_triggers),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v).with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use thermoseg::online::{CueSet, OverrideSource};

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "train_interval = 60\nlambda = 0.5\n").unwrap();
        let a = ConfigArgs {
            config: Some(p),
            lambda: Some("0.1".into()),
            cues: Some("texture,motion".into()),
            horizon: Some("sky".into()),
            cue_weights_xi: Some("1,0,1".into()),
            seed: Some(9),
            ..Default::default()
        };
        let cfg = a.resolve().unwrap();
        assert_eq!(cfg.train_interval, 60);
        assert_eq!(cfg.lambda, 0.1);
        assert_eq!(cfg.cues, CueSet::ALL);
        assert_eq!(cfg.override_source, OverrideSource::Sky);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn bad_flag_names_the_flag() {
        let a = ConfigArgs {
            buffer_len: Some("x".into()),
            ..Default::default()
        };
        let e = format!("{:#}", a.resolve().unwrap_err());
        assert!(e.contains("--buffer-len"), "{e}");
    }
}
