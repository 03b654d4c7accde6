//! Raster containers, atomic file writes and previews.
//!
//! Both raster kinds share a 14-byte header: a 4-byte magic (`SQRI` for
//! `f32` depth, `SQIM` for `u16` ids), a `u16` version, then `u32` width
//! and height. The row-major payload follows. Everything is little-endian.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::render::{InstanceMaskImage, RangeImage};

pub const RANGE_MAGIC: [u8; 4] = *b"SQRI";
pub const MASK_MAGIC: [u8; 4] = *b"SQIM";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 14;

/// Depth that maps to full scale in PNG previews.
pub const PREVIEW_DEPTH: f32 = 256.0;

fn header(magic: [u8; 4], width: u32, height: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out
}

/// Validates the header and returns `(width, height, payload)`.
fn split_header(bytes: &[u8], magic: [u8; 4], elem: usize) -> std::result::Result<(u32, u32, &[u8]), String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if bytes[..4] != magic {
        return Err(format!(
            "magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(&magic)
        ));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let width = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
    let want = (width as u64) * (height as u64) * elem as u64;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != want {
        return Err(format!(
            "payload has {} bytes, {width}x{height} needs {want}",
            payload.len()
        ));
    }
    Ok((width, height, payload))
}

pub fn encode_range(img: &RangeImage) -> Vec<u8> {
    let mut out = header(RANGE_MAGIC, img.width, img.height);
    out.reserve(img.depth.len() * 4);
    for v in &img.depth {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_range(bytes: &[u8]) -> std::result::Result<RangeImage, String> {
    let (w, h, payload) = split_header(bytes, RANGE_MAGIC, 4)?;
    let depth = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(RangeImage { width: w, height: h, depth })
}

pub fn encode_mask(img: &InstanceMaskImage) -> Vec<u8> {
    let mut out = header(MASK_MAGIC, img.width, img.height);
    out.reserve(img.ids.len() * 2);
    for v in &img.ids {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_mask(bytes: &[u8]) -> std::result::Result<InstanceMaskImage, String> {
    let (w, h, payload) = split_header(bytes, MASK_MAGIC, 2)?;
    let ids = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(InstanceMaskImage { width: w, height: h, ids })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn format_error(path: &Path) -> impl FnOnce(String) -> Error + '_ {
    move |reason| Error::Format { path: path.to_path_buf(), reason }
}

pub fn read_range(path: impl AsRef<Path>) -> Result<RangeImage> {
    let path = path.as_ref();
    decode_range(&read_bytes(path)?).map_err(format_error(path))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<InstanceMaskImage> {
    let path = path.as_ref();
    decode_mask(&read_bytes(path)?).map_err(format_error(path))
}

pub fn write_range(path: impl AsRef<Path>, img: &RangeImage) -> Result<()> {
    write_atomic(path, &encode_range(img))
}

pub fn write_mask(path: impl AsRef<Path>, img: &InstanceMaskImage) -> Result<()> {
    write_atomic(path, &encode_mask(img))
}

pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    write_atomic_with(path, |f| f.write_all(bytes))
}

/// Runs `fill` against a temporary file in the destination directory and
/// renames it over `path` only if `fill` succeeds. On failure the temporary
/// is removed and any previous file at `path` is left untouched.
pub fn write_atomic_with<F>(path: impl AsRef<Path>, fill: F) -> Result<()>
where
    F: FnOnce(&mut File) -> std::io::Result<()>,
{
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".sqrec-")
        .suffix(".tmp")
        .tempfile_in(&dir)
        .map_err(|e| Error::io(&dir, e))?;
    fill(tmp.as_file_mut()).map_err(|e| Error::io(path, e))?;
    tmp.as_file_mut().flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    Ok(serde_json::from_slice(&read_bytes(path)?)?)
}

/// 16-bit grayscale PNG of a depth raster, depth `[0, 256]` mapped linearly
/// to `[0, 65535]`. Preview only; never read back.
pub fn encode_depth_png(img: &RangeImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        let mut data = Vec::with_capacity(img.depth.len() * 2);
        for &d in &img.depth {
            data.extend_from_slice(&preview_level(d).to_be_bytes());
        }
        writer.write_image_data(&data).map_err(|e| Error::Png(e.to_string()))?;
        writer.finish().map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn preview_level(depth: f32) -> u16 {
    let t = if depth.is_finite() { (depth / PREVIEW_DEPTH).clamp(0.0, 1.0) } else { 0.0 };
    (t * 65535.0).round() as u16
}

pub fn write_depth_png(path: impl AsRef<Path>, img: &RangeImage) -> Result<()> {
    write_atomic(path, &encode_depth_png(img)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let img = RangeImage::from_vec(2, 1, vec![1.0, -0.5]).unwrap();
        let b = encode_range(&img);
        assert_eq!(&b[..4], b"SQRI");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..10], &[2, 0, 0, 0]);
        assert_eq!(&b[10..14], &[1, 0, 0, 0]);
        assert_eq!(&b[14..18], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 14 + 8);
        assert_eq!(decode_range(&b).unwrap(), img);
    }

    #[test]
    fn malformed_inputs_rejected() {
        let m = InstanceMaskImage::from_vec(3, 2, vec![0, 1, 2, 3, 4, 65535]).unwrap();
        let b = encode_mask(&m);
        assert_eq!(decode_mask(&b).unwrap(), m);
        assert!(decode_range(&b).is_err());
        assert!(decode_mask(&b[..b.len() - 1]).is_err());
        assert!(decode_mask(&b[..10]).is_err());
        let mut v2 = b.clone();
        v2[4] = 2;
        assert!(decode_mask(&v2).is_err());
    }

    #[test]
    fn preview_levels() {
        assert_eq!(preview_level(0.0), 0);
        assert_eq!(preview_level(128.0), 32768);
        assert_eq!(preview_level(256.0), 65535);
        assert_eq!(preview_level(300.0), 65535);
    }

    #[test]
    fn failed_write_keeps_old_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.sqri");
        write_atomic(&p, b"old").unwrap();
        let r = write_atomic_with(&p, |f| {
            f.write_all(b"partial")?;
            Err(std::io::Error::other("interrupted"))
        });
        assert!(r.is_err());
        assert_eq!(std::fs::read(&p).unwrap(), b"old");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
