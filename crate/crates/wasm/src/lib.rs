//! Browser demo bindings. The plain functions hold the logic; the
//! `wasm_bindgen` wrappers only convert errors.

use refmix_core::attention::{mixed_attention_forward, AttentionParams, BranchTag, BranchTokens, SourceKv};
use refmix_core::dit::{dual_branch_generate, DitConfig, DitParams, DualBranchRequest, SamplerConfig};
use refmix_core::encoding::{assign_coordinates, check_injectivity, image_spans, EncodingScheme, ImageGrid};
use refmix_core::render::latent_to_rgb;
use refmix_core::SeededRng;
use wasm_bindgen::prelude::*;

pub const DEMO_GRID: usize = 8;
pub const DEMO_CELL: usize = 4;
const MAX_GRIDS: usize = 6;
const MAX_SIDE: usize = 16;

/// Token coordinates for `HxW,HxW,...` as JSON:
/// `{"tokens":[{"image":0,"idx":0,"y":0,"x":0},...],"collisions":n}`.
pub fn layout_json(grids: &str, scheme: u8) -> Result<String, String> {
    let dims = grids
        .split(',')
        .map(|g| {
            let (h, w) = g.trim().split_once('x').ok_or_else(|| format!("`{g}` is not HxW"))?;
            let h: usize = h.trim().parse().map_err(|_| format!("bad height in `{g}`"))?;
            let w: usize = w.trim().parse().map_err(|_| format!("bad width in `{g}`"))?;
            if !(1..=MAX_SIDE).contains(&h) || !(1..=MAX_SIDE).contains(&w) {
                return Err(format!("`{g}`: sides must be 1-{MAX_SIDE}"));
            }
            Ok((h, w))
        })
        .collect::<Result<Vec<_>, String>>()?;
    if dims.len() > MAX_GRIDS {
        return Err(format!("at most {MAX_GRIDS} images"));
    }
    let scheme = EncodingScheme::from_number(scheme).map_err(|e| e.to_string())?;
    let grids: Vec<ImageGrid> = dims
        .iter()
        .enumerate()
        .map(|(i, &(h, w))| ImageGrid::new(i, h, w))
        .collect::<refmix_core::Result<_>>()
        .map_err(|e| e.to_string())?;
    let coords = assign_coordinates(0, &grids, scheme).map_err(|e| e.to_string())?;
    let spans = image_spans(0, &grids).map_err(|e| e.to_string())?;
    let collisions = check_injectivity(&coords, &spans).len();
    let tokens: Vec<_> = spans
        .iter()
        .flat_map(|s| (s.start..s.end).map(move |t| (s.image_index, t)))
        .map(|(image, t)| serde_json::json!({"image": image, "idx": coords[t].idx, "y": coords[t].y, "x": coords[t].x}))
        .collect();
    Ok(serde_json::json!({"tokens": tokens, "collisions": collisions}).to_string())
}

/// Head-averaged attention weights of target tokens over
/// `[target; source]` keys.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[wasm_bindgen]
impl Heatmap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major, `rows × cols`.
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
}

pub fn heatmap(seed: u64, target_tokens: usize, source_tokens: usize, temperature: f64) -> Result<Heatmap, String> {
    if !(1..=16).contains(&target_tokens) || source_tokens > 16 {
        return Err("target tokens must be 1-16 and source tokens 0-16".into());
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err("temperature must be positive".into());
    }
    let (d, heads) = (8, 2);
    let mut rng = SeededRng::new(seed);
    let tokens = BranchTokens::new(rng.normal(&[0, d]), rng.normal(&[target_tokens, d]), BranchTag::Target).map_err(|e| e.to_string())?;
    let params = AttentionParams::random(&mut rng, d, heads, 1.0 / temperature).map_err(|e| e.to_string())?;
    let source = if source_tokens == 0 {
        SourceKv::empty(d, 0)
    } else {
        SourceKv::new(rng.normal(&[source_tokens, d]), rng.normal(&[source_tokens, d]), 0).map_err(|e| e.to_string())?
    };
    let (_, cache) = mixed_attention_forward(&tokens, &source, &params).map_err(|e| e.to_string())?;
    let probs = cache.probs();
    let (rows, cols) = (probs[0].rows(), probs[0].cols());
    let mut values = vec![0.0; rows * cols];
    for p in probs {
        for (v, x) in values.iter_mut().zip(p.data()) {
            *v += x / probs.len() as f64;
        }
    }
    Ok(Heatmap { rows, cols, values })
}

/// Target and source images side by side as RGBA, `2·side × side` pixels
/// with `side = DEMO_GRID · DEMO_CELL`.
pub fn dual_branch_pixels(target_prompt: &str, source_prompt: &str, mixing: bool, seed: u64, steps: usize) -> Result<Vec<u8>, String> {
    if !(1..=32).contains(&steps) {
        return Err("steps must be 1-32".into());
    }
    let params = DitParams::init(DitConfig::default(), &mut SeededRng::derive(seed, &[0])).map_err(|e| e.to_string())?;
    let sampler = SamplerConfig::uniform(steps, seed).map_err(|e| e.to_string())?;
    let request = DualBranchRequest {
        target_prompt: target_prompt.into(),
        source_prompt: source_prompt.into(),
        mixing,
        height: DEMO_GRID,
        width: DEMO_GRID,
    };
    let out = dual_branch_generate(&request, &sampler, &params).map_err(|e| e.to_string())?;
    let render = |t| latent_to_rgb(t, DEMO_GRID, DEMO_GRID, DEMO_CELL).map_err(|e| e.to_string());
    let (tar, src) = (render(out.target.tokens())?, render(out.source.tokens())?);
    let side = DEMO_GRID * DEMO_CELL;
    let mut rgba = Vec::with_capacity(2 * side * side * 4);
    for y in 0..side {
        for img in [&tar, &src] {
            for px in img[y * side * 3..(y + 1) * side * 3].chunks(3) {
                rgba.extend_from_slice(&[px[0], px[1], px[2], 255]);
            }
        }
    }
    Ok(rgba)
}

#[wasm_bindgen(js_name = encodeLayout)]
pub fn encode_layout(grids: &str, scheme: u8) -> Result<String, JsError> {
    layout_json(grids, scheme).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = attentionHeatmap)]
pub fn attention_heatmap(seed: u32, target_tokens: usize, source_tokens: usize, temperature: f64) -> Result<Heatmap, JsError> {
    heatmap(seed as u64, target_tokens, source_tokens, temperature).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = dualBranch)]
pub fn dual_branch(target_prompt: &str, source_prompt: &str, mixing: bool, seed: u32, steps: usize) -> Result<Vec<u8>, JsError> {
    dual_branch_pixels(target_prompt, source_prompt, mixing, seed as u64, steps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = demoSide)]
pub fn demo_side() -> usize {
    DEMO_GRID * DEMO_CELL
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_reports_collisions() {
        let v: serde_json::Value = serde_json::from_str(&layout_json("2x2,2x2", 1).unwrap()).unwrap();
        assert_eq!(v["collisions"], 4);
        assert_eq!(v["tokens"].as_array().unwrap().len(), 8);
        let v: serde_json::Value = serde_json::from_str(&layout_json("2x2,2x2", 4).unwrap()).unwrap();
        assert_eq!(v["collisions"], 0);
        assert!(layout_json("0x2", 4).is_err());
        assert!(layout_json("2x2", 5).is_err());
    }

    #[test]
    fn heatmap_rows_are_distributions() {
        let h = heatmap(1, 4, 3, 1.0).unwrap();
        assert_eq!((h.rows(), h.cols()), (4, 7));
        for r in h.values().chunks(7) {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dual_branch_source_ignores_mixing() {
        let side = demo_side();
        let on = dual_branch_pixels("a cat in a scarf", "a scarf", true, 3, 4).unwrap();
        let off = dual_branch_pixels("a cat in a scarf", "a scarf", false, 3, 4).unwrap();
        assert_eq!(on.len(), 2 * side * side * 4);
        let right = |v: &[u8]| (0..side).flat_map(|y| v[(y * 2 * side + side) * 4..(y * 2 * side + 2 * side) * 4].to_vec()).collect::<Vec<u8>>();
        assert_eq!(right(&on), right(&off));
        assert_ne!(on, off);
    }
}
