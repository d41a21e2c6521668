use std::collections::VecDeque;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use crate::error::Result;
use crate::evalio::SequenceManifest;
use crate::geometry::{read_imu_csv, ImuStream};
use crate::imaging::{io, ThermalFrame};

/// Reads attempts on a file that is still being written.
const READ_ATTEMPTS: usize = 5;

/// Live source: polls a frame directory and yields new frames in index
/// order until nothing new has appeared for `idle_timeout`.
///
/// A frame whose index is not above the last one yielded is ignored.
#[derive(Debug)]
pub struct DirectoryWatch {
    manifest: SequenceManifest,
    imu: Option<ImuStream>,
    pub poll: Duration,
    pub idle_timeout: Duration,
    queue: VecDeque<(u64, PathBuf)>,
    last: Option<u64>,
    last_activity: Instant,
    attempts: usize,
}

impl DirectoryWatch {
    pub fn new(manifest: SequenceManifest, poll: Duration, idle_timeout: Duration) -> Result<Self> {
        let imu = manifest.imu.as_deref().map(read_imu_csv).transpose()?;
        Ok(Self {
            manifest,
            imu,
            poll,
            idle_timeout,
            queue: VecDeque::new(),
            last: None,
            last_activity: Instant::now(),
            attempts: 0,
        })
    }

    fn rescan(&mut self) -> Result<()> {
        let newest_queued = self.queue.back().map(|q| q.0).or(self.last);
        for (i, p) in io::list_frames(&self.manifest.frames)? {
            if newest_queued.is_none_or(|n| i > n) {
                self.queue.push_back((i, p));
            }
        }
        Ok(())
    }
}

impl Iterator for DirectoryWatch {
    type Item = Result<ThermalFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some((i, path)) = self.queue.front().cloned() {
                let ts = self.manifest.timestamp(i);
                match io::read_frame(&path, i, ts) {
                    Ok(frame) => {
                        self.queue.pop_front();
                        self.last = Some(i);
                        self.last_activity = Instant::now();
                        self.attempts = 0;
                        let att = self.imu.as_ref().and_then(|s| s.nearest(ts).cloned());
                        return Some(Ok(frame.with_attitude(att)));
                    }
                    Err(e) => {
                        self.attempts += 1;
                        if self.attempts >= READ_ATTEMPTS {
                            self.queue.pop_front();
                            self.attempts = 0;
                            return Some(Err(e));
                        }
                        std::thread::sleep(self.poll);
                        continue;
                    }
                }
            }
            if let Err(e) = self.rescan() {
                return Some(Err(e));
            }
            if self.queue.is_empty() {
                if self.last_activity.elapsed() >= self.idle_timeout {
                    return None;
                }
                std::thread::sleep(self.poll);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::BitDepth;
    use crate::raster::Plane;

    fn put(dir: &std::path::Path, id: u64) {
        let f = ThermalFrame::new(Plane::new(40, 40, id as u16), BitDepth::Sixteen, id, 0).unwrap();
        io::write_frame(&dir.join(io::frame_file_name(id)), &f).unwrap();
    }

    #[test]
    fn follows_a_growing_directory() {
        let dir = tempfile::tempdir().unwrap();
        put(dir.path(), 1);
        put(dir.path(), 0);
        let m = SequenceManifest::from_dir(dir.path()).unwrap();
        let mut w = DirectoryWatch::new(m, Duration::from_millis(5), Duration::from_millis(300)).unwrap();
        let path = dir.path().to_path_buf();
        let writer = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(60));
            put(&path, 2);
        });
        let ids: Vec<u64> = w.by_ref().map(|f| f.unwrap().frame_id).collect();
        writer.join().unwrap();
        assert_eq!(ids, vec![0, 1, 2]);
        assert!(w.next().is_none());
    }
}
