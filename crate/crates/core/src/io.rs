//! On-disk formats: PNG/PGM images, `DPTH` depth maps and `HMAP`
//! elevation grids.
//!
//! Binary formats are little-endian with a 12-byte header:
//! `magic[4] | width u32 | height u32`. Height grids append a `spacing f32`
//! before the `f32` payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{DepthMap, GrayImage, RgbImage};

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";
pub const HEIGHTMAP_MAGIC: &[u8; 4] = b"HMAP";

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn check_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&m)
        )));
    }
    Ok(())
}

fn ensure_eof(r: &mut impl Read) -> Result<()> {
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(())
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DEPTH_MAGIC)?;
    w.write_all(&(depth.width as u32).to_le_bytes())?;
    w.write_all(&(depth.height as u32).to_le_bytes())?;
    for d in &depth.data {
        w.write_all(&(*d as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, DEPTH_MAGIC)?;
    let width = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let data = read_f32s(&mut r, width * height)?.into_iter().map(f64::from).collect();
    ensure_eof(&mut r)?;
    DepthMap::new(width, height, data)
}

/// Raw elevation grid as stored in an `HMAP` file.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightGrid {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
    pub heights: Vec<f64>,
}

pub fn write_heightmap(path: impl AsRef<Path>, grid: &HeightGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(HEIGHTMAP_MAGIC)?;
    w.write_all(&(grid.width as u32).to_le_bytes())?;
    w.write_all(&(grid.height as u32).to_le_bytes())?;
    w.write_all(&(grid.spacing as f32).to_le_bytes())?;
    for h in &grid.heights {
        w.write_all(&(*h as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_heightmap(path: impl AsRef<Path>) -> Result<HeightGrid> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, HEIGHTMAP_MAGIC)?;
    let width = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let spacing = f64::from(read_f32s(&mut r, 1)?[0]);
    let heights: Vec<f64> = read_f32s(&mut r, width * height)?.into_iter().map(f64::from).collect();
    ensure_eof(&mut r)?;
    if !(spacing > 0.0) || heights.iter().any(|h| !h.is_finite()) {
        return Err(Error::Format("invalid spacing or non-finite height".into()));
    }
    Ok(HeightGrid {
        width,
        height,
        spacing,
        heights,
    })
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let mut buf = Vec::with_capacity(img.data.len() * 3);
    for p in &img.data {
        buf.extend(p.iter().map(|&c| to_u8(f64::from(c))));
    }
    image::save_buffer(path, &buf, img.width as u32, img.height as u32, image::ColorType::Rgb8)?;
    Ok(())
}

pub fn write_gray_png(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let buf: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    image::save_buffer(path, &buf, img.width() as u32, img.height() as u32, image::ColorType::L8)?;
    Ok(())
}

/// Reads any PNG (8 or 16 bit, gray or colour) as RGB in `[0, 1]`.
pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let img = image::open(path)?.into_rgb32f();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| [p.0[0], p.0[1], p.0[2]]).collect();
    Ok(RgbImage {
        width: w as usize,
        height: h as usize,
        data,
    })
}

/// Binary 8-bit PGM (`P5`).
pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", img.width(), img.height())?;
    let buf: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_pgm(&bytes)
}

fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let bad = |m: &str| Error::Format(format!("pgm: {m}"));
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|c| !c.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(bad("only binary P5 is supported"));
    }
    let width: usize = token()?.parse().map_err(|_| bad("width"))?;
    let height: usize = token()?.parse().map_err(|_| bad("height"))?;
    let maxval: u32 = token()?.parse().map_err(|_| bad("maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit maxval is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let raster = bytes
        .get(start..start + width * height)
        .ok_or_else(|| bad("truncated raster"))?;
    let maxval = f64::from(maxval);
    GrayImage::new(width, height, raster.iter().map(|&b| f64::from(b) / maxval).collect())
}

/// Reads a PGM or PNG by extension into intensities.
pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path),
        _ => Ok(crate::image::to_grayscale(&read_rgb_png(path)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.dpth");
        let depth = DepthMap::new(3, 2, vec![1.0, 2.5, 0.0, 4.0, 5.0, 6.25]).unwrap();
        write_depth(&path, &depth).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"DPTH");
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), 12 + 6 * 4);
        assert_eq!(&bytes[16..20], &2.5f32.to_le_bytes());
        assert_eq!(read_depth(&path).unwrap(), depth);
    }

    #[test]
    fn depth_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.dpth");
        std::fs::write(&path, b"HMAP\x01\0\0\0\x01\0\0\0\0\0\x80\x3f").unwrap();
        assert!(matches!(read_depth(&path), Err(Error::Format(_))));
        std::fs::write(&path, b"DPTH\x02\0\0\0\x01\0\0\0\0\0\x80\x3f").unwrap();
        assert!(read_depth(&path).is_err());
    }

    #[test]
    fn heightmap_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.hmap");
        let grid = HeightGrid {
            width: 2,
            height: 2,
            spacing: 0.5,
            heights: vec![1.0, 2.0, 3.0, -4.0],
        };
        write_heightmap(&path, &grid).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"HMAP");
        assert_eq!(&bytes[12..16], &0.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 16);
        assert_eq!(read_heightmap(&path).unwrap(), grid);
    }

    #[test]
    fn pgm_and_png_roundtrip_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(7, 5, |x, y| ((x * 5 + y * 11) % 256) as f64 / 255.0);
        let pgm = dir.path().join("a.pgm");
        write_pgm(&pgm, &img).unwrap();
        assert_eq!(read_gray(&pgm).unwrap(), img);
        let png = dir.path().join("a.png");
        write_gray_png(&png, &img).unwrap();
        let back = read_gray(&png).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pgm_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }
}
