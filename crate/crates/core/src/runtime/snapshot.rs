use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::segnet::SegModel;

/// SHA-256 over every parameter's little-endian bytes.
pub fn weights_checksum(model: &SegModel) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in model.theta() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

/// Immutable weights published by the trainer.
#[derive(Debug)]
pub struct WeightSnapshot {
    /// Training cycles completed when this was taken.
    pub version: usize,
    /// Stream position of the cycle, `None` for the initial weights.
    pub position: Option<u64>,
    model: SegModel,
    checksum: [u8; 32],
}

impl WeightSnapshot {
    pub fn new(version: usize, position: Option<u64>, model: SegModel) -> Self {
        let checksum = weights_checksum(&model);
        Self {
            version,
            position,
            model,
            checksum,
        }
    }

    pub fn model(&self) -> &SegModel {
        &self.model
    }

    pub fn checksum(&self) -> [u8; 32] {
        self.checksum
    }

    pub fn verify(&self) -> Result<()> {
        if weights_checksum(&self.model) != self.checksum {
            return Err(Error::StageFailed {
                stage: "inference",
                reason: format!("weight snapshot {} failed its checksum", self.version),
            });
        }
        Ok(())
    }
}

/// Latest published snapshot. Readers clone the `Arc` under a short lock, so
/// they never wait for a training cycle.
#[derive(Debug)]
pub struct SnapshotCell(Mutex<Arc<WeightSnapshot>>);

impl SnapshotCell {
    pub fn new(initial: WeightSnapshot) -> Self {
        Self(Mutex::new(Arc::new(initial)))
    }

    pub fn publish(&self, snap: WeightSnapshot) {
        let snap = Arc::new(snap);
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) = snap;
    }

    pub fn latest(&self) -> Arc<WeightSnapshot> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_tracks_every_parameter() {
        let m = SegModel::build(1);
        let s = WeightSnapshot::new(0, None, m.clone());
        assert!(s.verify().is_ok());
        let mut bad = WeightSnapshot::new(0, None, m);
        let last = bad.model.theta().len() - 1;
        bad.model.theta_mut()[last] += 1.0;
        assert!(bad.verify().is_err());
    }

    #[test]
    fn readers_see_whole_snapshots() {
        let cell = Arc::new(SnapshotCell::new(WeightSnapshot::new(0, None, SegModel::build(1))));
        let writer = {
            let cell = cell.clone();
            std::thread::spawn(move || {
                for v in 1..20 {
                    let mut m = SegModel::build(1);
                    m.theta_mut().iter_mut().for_each(|x| *x += v as f32);
                    cell.publish(WeightSnapshot::new(v, Some(v as u64), m));
                }
            })
        };
        let mut last = 0;
        for _ in 0..200 {
            let s = cell.latest();
            s.verify().unwrap();
            assert!(s.version >= last);
            last = s.version;
        }
        writer.join().unwrap();
        assert_eq!(cell.latest().version, 19);
    }
}
