//! Fixed mapping between latent values and 8-bit RGB pixels.
//!
//! Channels 0..3 map to R, G, B through `byte = round((clamp(v, -2, 2) + 2) / 4 · 255)`;
//! each token becomes a `cell × cell` block.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LATENT_RANGE: f64 = 2.0;

pub fn value_to_byte(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(-LATENT_RANGE, LATENT_RANGE) };
    ((v + LATENT_RANGE) / (2.0 * LATENT_RANGE) * 255.0).round() as u8
}

pub fn byte_to_value(b: u8) -> f64 {
    b as f64 / 255.0 * 2.0 * LATENT_RANGE - LATENT_RANGE
}

/// Renders a `[h·w, C]` latent as packed RGB bytes of size `(w·cell) × (h·cell)`.
/// Missing channels render as mid-grey.
pub fn latent_to_rgb(tokens: &Tensor, height: usize, width: usize, cell: usize) -> Result<Vec<u8>> {
    if tokens.rows() != height * width || cell == 0 {
        return Err(Error::dim("latent_to_rgb", tokens.shape(), &[height * width]));
    }
    let (pw, ph) = (width * cell, height * cell);
    let mut out = vec![0u8; pw * ph * 3];
    for py in 0..ph {
        for px in 0..pw {
            let row = tokens.row((py / cell) * width + px / cell);
            for ch in 0..3 {
                out[(py * pw + px) * 3 + ch] = value_to_byte(row.get(ch).copied().unwrap_or(0.0));
            }
        }
    }
    Ok(out)
}

/// Block-averages an RGB image down to a `grid_h × grid_w` latent. Channel 3
/// (when present) carries luminance; further channels are zero.
pub fn rgb_to_latent(rgb: &[u8], width: usize, height: usize, grid_h: usize, grid_w: usize, channels: usize) -> Result<Tensor> {
    if rgb.len() != width * height * 3 || width < grid_w || height < grid_h || grid_h == 0 || grid_w == 0 {
        return Err(Error::Layout(format!(
            "cannot reduce a {width}x{height} image to a {grid_h}x{grid_w} grid"
        )));
    }
    let mut t = Tensor::zeros(&[grid_h * grid_w, channels]);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let (y0, y1) = (gy * height / grid_h, (gy + 1) * height / grid_h);
            let (x0, x1) = (gx * width / grid_w, (gx + 1) * width / grid_w);
            let mut acc = [0.0f64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += rgb[(y * width + x) * 3 + c] as f64;
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            let mean = acc.map(|a| a / n);
            let luma = 0.299 * mean[0] + 0.587 * mean[1] + 0.114 * mean[2];
            for ch in 0..channels.min(4) {
                let b = if ch < 3 { mean[ch] } else { luma };
                t.set(gy * grid_w + gx, ch, byte_to_value(b.round() as u8));
            }
        }
    }
    Ok(t)
}
