use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{Net, SegModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TSEG";
pub const FORMAT_VERSION: u32 = 1;

fn manifest_bytes() -> Vec<u8> {
    let mut m = Vec::new();
    let layers = SegModel::layers();
    m.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in layers {
        m.push(l.name.len() as u8);
        m.extend_from_slice(l.name.as_bytes());
        for v in [l.shape.cin, l.shape.cout, l.shape.k, l.shape.stride] {
            m.extend_from_slice(&(v as u32).to_le_bytes());
        }
        m.push(l.relu as u8);
        m.push(l.frozen as u8);
    }
    m
}

/// `TSEG | version | manifest | count | sha256(manifest, payload) | payload`
/// with the payload as little-endian f32.
pub fn save_weights(model: &SegModel) -> Vec<u8> {
    let manifest = manifest_bytes();
    let payload: Vec<u8> = model.theta().iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut h = Sha256::new();
    h.update(&manifest);
    h.update(&payload);
    let digest = h.finalize();
    let mut out = Vec::with_capacity(payload.len() + manifest.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&(model.theta().len() as u64).to_le_bytes());
    out.extend_from_slice(&digest);
    out.extend_from_slice(&payload);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::WeightFormat("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_weights(bytes: &[u8]) -> Result<SegModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::WeightFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::WeightFormat(format!("unsupported version {version}")));
    }
    let mlen = r.u32()? as usize;
    let manifest = r.take(mlen)?;
    if manifest != manifest_bytes().as_slice() {
        return Err(Error::WeightFormat("layer manifest does not match this architecture".into()));
    }
    let count = r.u64()? as usize;
    if count != SegModel::param_count() {
        return Err(Error::WeightFormat(format!("{count} parameters, expected {}", SegModel::param_count())));
    }
    let digest = r.take(32)?;
    let payload = r.take(count * 4)?;
    if r.pos != bytes.len() {
        return Err(Error::WeightFormat("trailing bytes".into()));
    }
    let mut h = Sha256::new();
    h.update(manifest);
    h.update(payload);
    if h.finalize().as_slice() != digest {
        return Err(Error::WeightFormat("digest mismatch".into()));
    }
    let theta = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Net::from_theta(theta)
}

pub fn write_weights(model: &SegModel, path: &Path) -> Result<()> {
    std::fs::write(path, save_weights(model)).map_err(|e| Error::from(e).at(path))
}

pub fn read_weights(path: &Path) -> Result<SegModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
    load_weights(&bytes).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::Tensor;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = SegModel::build(5);
        let back = load_weights(&save_weights(&m)).unwrap();
        assert_eq!(m.theta().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), back.theta().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let x = Tensor::from_vec(1, 1, 32, 32, (0..1024).map(|i| (i % 9) as f32 / 8.0).collect()).unwrap();
        assert_eq!(m.forward(&x).unwrap(), back.forward(&x).unwrap());
    }

    #[test]
    fn truncation_is_detected() {
        let b = save_weights(&SegModel::build(5));
        for cut in [3, 20, b.len() - 1] {
            assert!(matches!(load_weights(&b[..cut]), Err(Error::WeightFormat(_))));
        }
    }

    #[test]
    fn corruption_is_detected() {
        let mut b = save_weights(&SegModel::build(5));
        let n = b.len();
        b[n - 5] ^= 0x10;
        assert!(matches!(load_weights(&b), Err(Error::WeightFormat(m)) if m.contains("digest")));
        let mut b = save_weights(&SegModel::build(5));
        b[4] = 9;
        assert!(matches!(load_weights(&b), Err(Error::WeightFormat(m)) if m.contains("version")));
        let mut b = save_weights(&SegModel::build(5));
        b[17] ^= 1; // inside the first layer name
        assert!(matches!(load_weights(&b), Err(Error::WeightFormat(m)) if m.contains("manifest")));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.tseg");
        let m = SegModel::build(8);
        write_weights(&m, &p).unwrap();
        assert_eq!(read_weights(&p).unwrap(), m);
    }
}
