//! PNG encoding and the deterministic image operations the stub backends use.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{PipelineError, Result};

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| PipelineError::Image(e.to_string()))?;
    Ok(buf.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map(|d| d.to_rgb8())
        .map_err(|e| PipelineError::Image(e.to_string()))
}

/// PNG from a packed row-major RGB buffer.
pub fn encode_rgb(width: u32, height: u32, rgb: Vec<u8>) -> Result<Vec<u8>> {
    let img = RgbImage::from_raw(width, height, rgb)
        .ok_or_else(|| PipelineError::Image(format!("buffer does not hold {width}x{height} RGB pixels")))?;
    encode_png(&img)
}

/// `(width, height, rgb)` of a PNG.
pub fn decode_rgb(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let img = decode_png(bytes)?;
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw()))
}

pub fn read_png(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| PipelineError::io(format!("reading {}", path.display()), e))
}

/// Writes through a temporary file so readers never see a partial image.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(format!("creating {}", dir.display()), e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| PipelineError::io(format!("writing {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(format!("renaming to {}", path.display()), e))
}

/// RGB color from 24 bits of a hash.
pub fn hash_color(h: u64) -> Rgb<u8> {
    Rgb([(h & 0xff) as u8, ((h >> 8) & 0xff) as u8, ((h >> 16) & 0xff) as u8])
}

/// Side length of every stub-rendered image.
pub const STUB_SIZE: u32 = 64;

/// Vertical gradient background with a motif whose shape and colors come
/// from `motif` and whose placement comes from `layout`.
pub fn render_scene(layout: u64, motif: Option<u64>) -> RgbImage {
    let top = hash_color(layout);
    let bottom = hash_color(layout >> 24);
    let mut img = RgbImage::from_fn(STUB_SIZE, STUB_SIZE, |_, y| {
        let f = y as f64 / (STUB_SIZE - 1) as f64;
        Rgb(std::array::from_fn(|c| (top[c] as f64 * (1.0 - f) + bottom[c] as f64 * f).round() as u8))
    });
    if let Some(m) = motif {
        let (cx, cy) = (16 + (layout >> 48) % 32, 16 + (layout >> 56) % 32);
        draw_motif(&mut img, m, cx as i64, cy as i64);
    }
    img
}

fn draw_motif(img: &mut RgbImage, m: u64, cx: i64, cy: i64) {
    let fg = hash_color(m);
    let accent = hash_color(m >> 24);
    let radius = 8 + (m >> 48) as i64 % 6;
    let shape = (m >> 56) % 3;
    for y in (cy - radius).max(0)..(cy + radius).min(STUB_SIZE as i64) {
        for x in (cx - radius).max(0)..(cx + radius).min(STUB_SIZE as i64) {
            let (dx, dy) = (x - cx, y - cy);
            let inside = match shape {
                0 => dx * dx + dy * dy <= radius * radius,
                1 => dx.abs() + dy.abs() <= radius,
                _ => true,
            };
            if inside {
                let stripe = ((x + y) / 3) % 2 == 0;
                img.put_pixel(x as u32, y as u32, if stripe { fg } else { accent });
            }
        }
    }
}

/// Central crop scaled back to full size, tinted by `tint`.
pub fn extract_region(img: &RgbImage, tint: u64) -> RgbImage {
    let (w, h) = img.dimensions();
    let (cw, ch) = ((w / 2).max(1), (h / 2).max(1));
    let (x0, y0) = ((w - cw) / 2, (h - ch) / 2);
    let t = hash_color(tint);
    RgbImage::from_fn(w, h, |x, y| {
        let p = img.get_pixel(x0 + x * cw / w, y0 + y * ch / h);
        Rgb(std::array::from_fn(|c| ((p[c] as u16 * 3 + t[c] as u16) / 4) as u8))
    })
}

/// Rotates the color channels inside one quadrant chosen by `selector`.
pub fn recolor_quadrant(img: &RgbImage, selector: u64) -> RgbImage {
    let (w, h) = img.dimensions();
    let q = selector % 4;
    let (qx, qy) = ((q % 2) as u32 * w / 2, (q / 2) as u32 * h / 2);
    let mut out = img.clone();
    for y in qy..(qy + h / 2) {
        for x in qx..(qx + w / 2) {
            let p = img.get_pixel(x, y);
            out.put_pixel(x, y, Rgb([p[2], p[0], 255 - p[1]]));
        }
    }
    out
}

/// Per-pixel mean of same-sized images, then blended toward `tint`.
pub fn blend(images: &[RgbImage], tint: u64) -> RgbImage {
    let t = hash_color(tint);
    RgbImage::from_fn(STUB_SIZE, STUB_SIZE, |x, y| {
        let mut acc = [0u32; 3];
        for img in images {
            let (w, h) = img.dimensions();
            let p = img.get_pixel(x * w / STUB_SIZE, y * h / STUB_SIZE);
            for c in 0..3 {
                acc[c] += p[c] as u32;
            }
        }
        let n = images.len().max(1) as u32;
        Rgb(std::array::from_fn(|c| ((acc[c] / n * 3 + t[c] as u32) / 4) as u8))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let img = render_scene(42, Some(7));
        let bytes = encode_png(&img).unwrap();
        assert_eq!(decode_png(&bytes).unwrap(), img);
        assert_eq!(encode_png(&img).unwrap(), bytes);
    }

    #[test]
    fn operations_are_deterministic_and_visible() {
        let img = render_scene(1, Some(2));
        assert_eq!(extract_region(&img, 3), extract_region(&img, 3));
        assert_ne!(recolor_quadrant(&img, 0), img);
        assert_eq!(blend(std::slice::from_ref(&img), 5).dimensions(), (STUB_SIZE, STUB_SIZE));
    }

    #[test]
    fn garbage_is_not_a_png() {
        assert!(decode_png(b"not an image").is_err());
    }
}
