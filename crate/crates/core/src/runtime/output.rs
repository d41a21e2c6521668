use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::io;
use crate::online::{FrameOutput, FrameRecord};

/// Writes each mask as `frame_NNNNNN.png` with values {0, 255}, and
/// optionally an overlay PNG of the same name under `overlay_dir`.
#[derive(Clone, Debug)]
pub struct MaskWriter {
    pub dir: PathBuf,
    pub overlay_dir: Option<PathBuf>,
}

impl MaskWriter {
    pub fn create(dir: &Path, overlay_dir: Option<&Path>) -> Result<Self> {
        for d in std::iter::once(dir).chain(overlay_dir) {
            std::fs::create_dir_all(d).map_err(|e| Error::from(e).at(d))?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            overlay_dir: overlay_dir.map(Path::to_path_buf),
        })
    }

    pub fn write(&self, out: &FrameOutput) -> Result<()> {
        let name = io::frame_file_name(out.record.frame_id);
        io::write_mask(&self.dir.join(&name), &out.mask)?;
        if let Some(d) = &self.overlay_dir {
            io::write_overlay(&d.join(&name), &out.image, &out.mask)?;
        }
        Ok(())
    }
}

/// Per-frame diagnostics, one row per record.
pub fn write_diagnostics_csv(path: &Path, records: &[FrameRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::from(e).at(path))?;
    w.write_record([
        "index",
        "frame_id",
        "buffered",
        "texture",
        "motion",
        "override",
        "trained",
        "loss",
        "skipped",
        "preprocess_ms",
        "cue_ms",
        "train_ms",
        "infer_ms",
    ])?;
    let flag = |b: bool| if b { "1" } else { "0" }.to_string();
    for r in records {
        w.write_record([
            r.index.to_string(),
            r.frame_id.to_string(),
            flag(r.buffered),
            flag(r.texture),
            flag(r.motion),
            flag(r.override_available),
            flag(r.trained),
            r.loss.map(|l| format!("{l:.6}")).unwrap_or_default(),
            r.skipped.to_string(),
            format!("{:.3}", r.preprocess_ms),
            format!("{:.3}", r.cue_ms),
            format!("{:.3}", r.train_ms),
            format!("{:.3}", r.infer_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}
