//! Frame, mask and preview image files.
//!
//! Sequences are directories of single-channel PNG or TIFF files named
//! `frame_NNNNNN.{png,tif,tiff}`; bit depth comes from the file header.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::{BitDepth, GrayImage, ThermalFrame};
use crate::error::{Error, Result};
use crate::raster::{Mask, Plane};

pub fn frame_file_name(index: u64) -> String {
    format!("frame_{index:06}.png")
}

/// Parse the numeric index out of `frame_NNNNNN.ext`.
pub fn parse_frame_index(path: &Path) -> Option<u64> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !matches!(ext.as_str(), "png" | "tif" | "tiff") {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    stem.strip_prefix("frame_")?.parse().ok()
}

/// Frame files in `dir`, sorted by index.
pub fn list_frames(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::from(e).at(dir))? {
        let path = entry?.path();
        if let Some(i) = parse_frame_index(&path) {
            out.push((i, path));
        }
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out)
}

fn decode(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::from(e).at(path))
}

pub fn read_frame(path: &Path, frame_id: u64, timestamp_ns: u64) -> Result<ThermalFrame> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (data, depth) = match img {
        DynamicImage::ImageLuma8(b) => (b.into_raw().into_iter().map(u16::from).collect(), BitDepth::Eight),
        DynamicImage::ImageLuma16(b) => (b.into_raw(), BitDepth::Sixteen),
        other => {
            return Err(Error::invalid(format!("expected single-channel image, got {:?}", other.color())).at(path));
        }
    };
    let pixels = Plane::from_vec(w, h, data)?;
    ThermalFrame::new(pixels, depth, frame_id, timestamp_ns).map_err(|e| e.at(path))
}

pub fn write_frame(path: &Path, frame: &ThermalFrame) -> Result<()> {
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let res = match frame.bit_depth {
        BitDepth::Sixteen => {
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_raw(w, h, frame.pixels.data().to_vec()).expect("sized buffer");
            buf.save(path)
        }
        BitDepth::Eight => {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w, h, frame.pixels.data().iter().map(|&v| v as u8).collect())
                    .expect("sized buffer");
            buf.save(path)
        }
    };
    res.map_err(|e| Error::from(e).at(path))
}

pub fn write_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let bytes = img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, bytes).expect("sized buffer");
    buf.save(path).map_err(|e| Error::from(e).at(path))
}

/// 8-bit mask file with values {0, 255}.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_gray(path, &mask.map(|&b| if b { 1.0 } else { 0.0 }))
}

/// The gray image with water pixels tinted blue.
pub fn write_overlay(path: &Path, img: &GrayImage, mask: &Mask) -> Result<()> {
    if !img.same_size(mask) {
        return Err(Error::invalid("overlay: image and mask sizes differ"));
    }
    let mut bytes = Vec::with_capacity(img.len() * 3);
    for (&v, &water) in img.data().iter().zip(mask.data()) {
        let g = v.clamp(0.0, 1.0) * 255.0;
        let px = if water { [0.5 * g, 0.5 * g, 0.5 * g + 127.5] } else { [g, g, g] };
        bytes.extend(px.map(|c| c.round() as u8));
    }
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, bytes).expect("sized buffer");
    buf.save(path).map_err(|e| Error::from(e).at(path))
}

/// Any pixel above mid-gray counts as set.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = decode(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Plane::from_vec(w, h, img.into_raw().into_iter().map(|v| v > 127).collect())
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        other => other.into_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
    };
    Plane::from_vec(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip_16_and_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let px = Plane::from_fn(40, 33, |x, y| (x * 1000 + y * 7) as u16);
        let f = ThermalFrame::new(px, BitDepth::Sixteen, 3, 0).unwrap();
        let p = dir.path().join(frame_file_name(3));
        write_frame(&p, &f).unwrap();
        let back = read_frame(&p, 3, 0).unwrap();
        assert_eq!(back, f);

        let px8 = Plane::from_fn(32, 32, |x, y| ((x + y) % 256) as u16);
        let f8 = ThermalFrame::new(px8, BitDepth::Eight, 4, 0).unwrap();
        let p8 = dir.path().join(frame_file_name(4));
        write_frame(&p8, &f8).unwrap();
        assert_eq!(read_frame(&p8, 4, 0).unwrap().bit_depth, BitDepth::Eight);
    }

    #[test]
    fn tiff_frames_are_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("frame_000002.tiff");
        let data: Vec<u16> = (0..32 * 32).map(|i| (i * 50) as u16).collect();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(32, 32, data.clone()).unwrap();
        buf.save(&p).unwrap();
        let f = read_frame(&p, 2, 0).unwrap();
        assert_eq!(f.pixels.data(), &data[..]);
        assert_eq!(f.bit_depth, BitDepth::Sixteen);
    }

    #[test]
    fn listing_is_index_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for i in [10u64, 2, 7] {
            let f = ThermalFrame::new(Plane::new(32, 32, i as u16), BitDepth::Sixteen, i, 0).unwrap();
            write_frame(&dir.path().join(frame_file_name(i)), &f).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let idx: Vec<u64> = list_frames(dir.path()).unwrap().into_iter().map(|(i, _)| i).collect();
        assert_eq!(idx, vec![2, 7, 10]);
    }

    #[test]
    fn mask_files_are_binary() {
        let dir = tempfile::tempdir().unwrap();
        let m = Plane::from_fn(9, 5, |x, y| (x + y) % 3 == 0);
        let p = dir.path().join("m.png");
        write_mask(&p, &m).unwrap();
        let raw = image::open(&p).unwrap().into_luma8();
        assert!(raw.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
        assert_eq!(read_mask(&p).unwrap(), m);
    }
}
