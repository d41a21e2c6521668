//! The online adaptation loop: buffered frames with precomputed cues,
//! label merging with a momentum teacher, Adam updates of the trainable
//! decoder, and mask post-processing.

mod batch;
mod clean;
mod config;
mod merge;
mod session;
mod step;

pub use batch::{create_batches, crop_entry, BufferEntry, TrainingSample};
pub use clean::{argmax_mask, clean_mask, infer_and_clean, postprocess, smooth_mask};
pub use config::{parse_size, CueSet, OnlineConfig, OverrideSource};
pub use merge::{merge_labels, CueMaps};
pub use session::{CueEngine, FrameOutput, FrameRecord, OnlineSession, TriggerPolicy};
pub use step::{online_step, OnlineTrainer, StepDiagnostics};

/// Binary water mask (`true` = water).
pub type SegMask = crate::raster::Mask;
