//! Grayscale image files: PNG, binary/ASCII PGM and raw van Hateren frames.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, GrayImage, Luma};

use crate::error::{Error, Result};
use crate::grid::{Grid, RealGrid};

/// Size in bytes of a raw van Hateren frame (1536×1024, 16-bit big-endian).
pub const VAN_HATEREN_BYTES: usize = 1536 * 1024 * 2;
pub const VAN_HATEREN_WIDTH: usize = 1536;
pub const VAN_HATEREN_HEIGHT: usize = 1024;

const PNG_MAGIC: &[u8] = b"\x89PNG";

/// Reads a grayscale image as linear intensities. 16-bit values are kept
/// as stored.
pub fn load_image(path: impl AsRef<Path>) -> Result<RealGrid> {
    let path = path.as_ref();
    let data = fs::read(path)?;
    decode_image(&data).map_err(|e| match e {
        Error::UnsupportedFormat(m) => Error::UnsupportedFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Decodes an in-memory image file; see [`load_image`].
pub fn decode_image(data: &[u8]) -> Result<RealGrid> {
    if data.starts_with(PNG_MAGIC) {
        return decode_png(data);
    }
    if data.starts_with(b"P5") || data.starts_with(b"P2") {
        return decode_pgm(data);
    }
    if data.len() == VAN_HATEREN_BYTES {
        return Ok(decode_raw_be16(data, VAN_HATEREN_WIDTH, VAN_HATEREN_HEIGHT));
    }
    Err(Error::UnsupportedFormat(format!(
        "unrecognized header and size of {} bytes",
        data.len()
    )))
}

fn decode_png(data: &[u8]) -> Result<RealGrid> {
    let img = image::load_from_memory_with_format(data, image::ImageFormat::Png)
        .map_err(|e| Error::malformed("PNG file", e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f64> = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLuma16(g) => g.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| f64::from(p.0[0])).collect(),
        DynamicImage::ImageLumaA16(g) => g.pixels().map(|p| f64::from(p.0[0])).collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{:?} PNG; only grayscale is accepted",
                other.color()
            )))
        }
    };
    Grid::from_vec(w, h, values)
}

/// Whitespace-separated header tokens with `#` comments; returns the tokens
/// and the offset just past the single whitespace byte after the last one.
fn pgm_header(data: &[u8], count: usize) -> Result<(Vec<usize>, usize)> {
    let mut pos = 2;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        while pos < data.len() && (data[pos].is_ascii_whitespace() || data[pos] == b'#') {
            if data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < data.len() && data[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::malformed("PGM header", "missing or non-numeric field"));
        }
        let v = std::str::from_utf8(&data[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::malformed("PGM header", "field out of range"))?;
        out.push(v);
    }
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(Error::malformed("PGM header", "no separator before pixel data"));
    }
    Ok((out, pos + 1))
}

fn decode_pgm(data: &[u8]) -> Result<RealGrid> {
    let binary = data[1] == b'5';
    let (fields, start) = pgm_header(data, 3)?;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::malformed(
            "PGM header",
            format!("{w}×{h} with maxval {maxval}"),
        ));
    }
    let n = w * h;
    let body = &data[start..];
    let values: Vec<f64> = if binary {
        let bytes = if maxval < 256 { 1 } else { 2 };
        if body.len() < n * bytes {
            return Err(Error::malformed(
                "PGM file",
                format!("truncated: {} of {} pixel bytes", body.len(), n * bytes),
            ));
        }
        if bytes == 1 {
            body[..n].iter().map(|&b| f64::from(b)).collect()
        } else {
            body[..2 * n]
                .chunks_exact(2)
                .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])))
                .collect()
        }
    } else {
        let text = std::str::from_utf8(body)
            .map_err(|_| Error::malformed("PGM file", "non-ASCII pixel data"))?;
        let vals: Vec<f64> = text
            .split_ascii_whitespace()
            .take(n)
            .map(|t| t.parse::<u32>().map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::malformed("PGM file", e.to_string()))?;
        if vals.len() < n {
            return Err(Error::malformed(
                "PGM file",
                format!("truncated: {} of {n} pixels", vals.len()),
            ));
        }
        vals
    };
    if values.iter().any(|&v| v > maxval as f64) {
        return Err(Error::malformed("PGM file", format!("pixel exceeds maxval {maxval}")));
    }
    Grid::from_vec(w, h, values)
}

fn decode_raw_be16(data: &[u8], w: usize, h: usize) -> RealGrid {
    let values = data
        .chunks_exact(2)
        .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])))
        .collect();
    Grid::from_vec(w, h, values).expect("size checked by caller")
}

/// Writes a binary 16-bit PGM. Values are rounded and clamped to `0..=65535`.
pub fn write_pgm16(path: impl AsRef<Path>, image: &RealGrid) -> Result<()> {
    image.ensure_finite("PGM output")?;
    let mut out = Vec::with_capacity(image.len() * 2 + 32);
    write!(out, "P5\n{} {}\n65535\n", image.width(), image.height())?;
    for &v in image.as_slice() {
        out.extend_from_slice(&(v.round().clamp(0.0, 65535.0) as u16).to_be_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Linear map of `[lo, hi]` onto 8 bits; the image's own range when `None`.
pub fn to_gray8(image: &RealGrid, range: Option<(f64, f64)>) -> GrayImage {
    let (lo, hi) = range.unwrap_or_else(|| image.min_max());
    let span = hi - lo;
    GrayImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let v = image[(x as usize, y as usize)];
        let t = if span > 0.0 { (v - lo) / span } else { 0.5 };
        Luma([(t.clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

/// Saves a contrast-normalized 8-bit PNG.
pub fn save_png(path: impl AsRef<Path>, image: &RealGrid, range: Option<(f64, f64)>) -> Result<()> {
    image.ensure_finite("PNG output")?;
    to_gray8(image, range).save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Tiles images into a grid with `columns` per row and a `gap`-pixel white
/// border; each tile is normalized to its own range.
pub fn montage(tiles: &[RealGrid], columns: usize, gap: usize) -> Result<GrayImage> {
    if tiles.is_empty() || columns == 0 {
        return Err(Error::InvalidConfig("montage needs tiles and at least one column".into()));
    }
    let tw = tiles.iter().map(|t| t.width()).max().unwrap_or(0);
    let th = tiles.iter().map(|t| t.height()).max().unwrap_or(0);
    let cols = columns.min(tiles.len());
    let rows = tiles.len().div_ceil(cols);
    let w = cols * tw + (cols + 1) * gap;
    let h = rows * th + (rows + 1) * gap;
    let mut out = GrayImage::from_pixel(w as u32, h as u32, Luma([255]));
    for (i, tile) in tiles.iter().enumerate() {
        let g = to_gray8(tile, None);
        let x0 = gap + (i % cols) * (tw + gap);
        let y0 = gap + (i / cols) * (th + gap);
        for (x, y, p) in g.enumerate_pixels() {
            out.put_pixel(x0 as u32 + x, y0 as u32 + y, *p);
        }
    }
    Ok(out)
}
