//! Per-token `(idx, y, x)` coordinates for packed text + multi-image sequences,
//! and multi-axis rotary position encoding over those coordinates.
//!
//! Two independent switches give the four encoding schemes:
//!
//! | scheme | index channel | position shift |
//! |--------|---------------|----------------|
//! | 1      | off           | off            |
//! | 2      | off           | on             |
//! | 3      | on            | off            |
//! | 4      | on            | on (default)   |
//!
//! The index channel carries the image ordinal. The shift offsets each image's
//! spatial coordinates by the cumulative extent of every image before it, so
//! no two images share a coordinate.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One image's token grid. Index 0 is the target/noise image; references
/// follow as 1..=R in user order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageGrid {
    pub image_index: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageGrid {
    pub fn new(image_index: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Layout(format!(
                "image {image_index} has an empty grid {height}x{width}"
            )));
        }
        Ok(Self {
            image_index,
            height,
            width,
        })
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TokenCoordinate {
    pub idx: usize,
    pub y: usize,
    pub x: usize,
}

impl TokenCoordinate {
    pub const ORIGIN: TokenCoordinate = TokenCoordinate { idx: 0, y: 0, x: 0 };

    pub fn new(idx: usize, y: usize, x: usize) -> Self {
        Self { idx, y, x }
    }

    fn axis(&self, axis: usize) -> usize {
        match axis {
            0 => self.idx,
            1 => self.y,
            _ => self.x,
        }
    }
}

/// Axis that accumulates the shift offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftAxis {
    #[default]
    Width,
    Height,
}

impl FromStr for ShiftAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "width" | "x" => Ok(ShiftAxis::Width),
            "height" | "y" => Ok(ShiftAxis::Height),
            other => Err(Error::Config(format!("unknown shift axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingScheme {
    pub index_encoding: bool,
    pub position_shift: bool,
    pub shift_axis: ShiftAxis,
}

impl Default for EncodingScheme {
    fn default() -> Self {
        Self::from_number(4).expect("scheme 4 exists")
    }
}

impl EncodingScheme {
    pub fn new(index_encoding: bool, position_shift: bool) -> Self {
        Self {
            index_encoding,
            position_shift,
            shift_axis: ShiftAxis::Width,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Self::new(false, false)),
            2 => Ok(Self::new(false, true)),
            3 => Ok(Self::new(true, false)),
            4 => Ok(Self::new(true, true)),
            other => Err(Error::Config(format!("encoding scheme must be 1-4, got {other}"))),
        }
    }

    pub fn number(&self) -> u8 {
        match (self.index_encoding, self.position_shift) {
            (false, false) => 1,
            (false, true) => 2,
            (true, false) => 3,
            (true, true) => 4,
        }
    }

    pub fn with_shift_axis(mut self, axis: ShiftAxis) -> Self {
        self.shift_axis = axis;
        self
    }
}

impl fmt::Display for EncodingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scheme {}", self.number())
    }
}

/// Token range `[start, end)` occupied by one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageSpan {
    pub image_index: usize,
    pub start: usize,
    pub end: usize,
}

/// Grids sorted by index, after checking indices are distinct and 0..n.
pub fn ordered_grids(grids: &[ImageGrid]) -> Result<Vec<ImageGrid>> {
    if grids.is_empty() {
        return Err(Error::Layout("at least one image grid is required".into()));
    }
    let mut sorted = grids.to_vec();
    sorted.sort_by_key(|g| g.image_index);
    for pair in sorted.windows(2) {
        if pair[0].image_index == pair[1].image_index {
            return Err(Error::Layout(format!(
                "duplicate image index {}",
                pair[0].image_index
            )));
        }
    }
    for (expected, g) in sorted.iter().enumerate() {
        if g.image_index != expected {
            return Err(Error::Layout(format!(
                "image indices must be contiguous from 0; missing {expected}"
            )));
        }
        if g.area() == 0 {
            return Err(Error::Layout(format!("image {expected} has an empty grid")));
        }
    }
    Ok(sorted)
}

/// Image spans in packing order (after `text_len` text tokens).
pub fn image_spans(text_len: usize, grids: &[ImageGrid]) -> Result<Vec<ImageSpan>> {
    let mut start = text_len;
    Ok(ordered_grids(grids)?
        .into_iter()
        .map(|g| {
            let span = ImageSpan {
                image_index: g.image_index,
                start,
                end: start + g.area(),
            };
            start = span.end;
            span
        })
        .collect())
}

/// Coordinates for a text span followed by every grid in index order,
/// row-major within each grid. Text tokens sit at the origin.
pub fn assign_coordinates(
    text_len: usize,
    grids: &[ImageGrid],
    scheme: EncodingScheme,
) -> Result<Vec<TokenCoordinate>> {
    let grids = ordered_grids(grids)?;
    let total: usize = text_len + grids.iter().map(ImageGrid::area).sum::<usize>();
    let mut coords = Vec::with_capacity(total);
    coords.resize(text_len, TokenCoordinate::ORIGIN);
    let mut offset = 0;
    for g in &grids {
        let idx = if scheme.index_encoding { g.image_index } else { 0 };
        let shift = if scheme.position_shift { offset } else { 0 };
        for r in 0..g.height {
            for c in 0..g.width {
                coords.push(match scheme.shift_axis {
                    ShiftAxis::Width => TokenCoordinate::new(idx, r, c + shift),
                    ShiftAxis::Height => TokenCoordinate::new(idx, r + shift, c),
                });
            }
        }
        offset += match scheme.shift_axis {
            ShiftAxis::Width => g.width,
            ShiftAxis::Height => g.height,
        };
    }
    Ok(coords)
}

/// Two image tokens from different images that share a coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Collision {
    pub first_token: usize,
    pub second_token: usize,
    pub first_image: usize,
    pub second_image: usize,
    pub coordinate: TokenCoordinate,
}

/// Every cross-image pair of image tokens with identical coordinates.
/// Text tokens are ignored. An empty result means the layout is injective.
pub fn check_injectivity(coords: &[TokenCoordinate], spans: &[ImageSpan]) -> Vec<Collision> {
    let mut by_coord: HashMap<TokenCoordinate, Vec<(usize, usize)>> = HashMap::new();
    for span in spans {
        for tok in span.start..span.end.min(coords.len()) {
            by_coord.entry(coords[tok]).or_default().push((tok, span.image_index));
        }
    }
    let mut out = Vec::new();
    for (coord, toks) in &by_coord {
        for (i, &(ta, ia)) in toks.iter().enumerate() {
            for &(tb, ib) in &toks[i + 1..] {
                if ia != ib {
                    out.push(Collision {
                        first_token: ta.min(tb),
                        second_token: ta.max(tb),
                        first_image: if ta < tb { ia } else { ib },
                        second_image: if ta < tb { ib } else { ia },
                        coordinate: *coord,
                    });
                }
            }
        }
    }
    out.sort_by_key(|c| (c.first_token, c.second_token));
    out
}

/// Channel layout for rotary encoding over the three coordinate axes.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeTable {
    head_dim: usize,
    /// Channel counts for the idx, y and x axes, in that order.
    groups: [usize; 3],
    base: f64,
}

impl RopeTable {
    pub const DEFAULT_BASE: f64 = 10_000.0;

    pub fn new(head_dim: usize, groups: [usize; 3], base: f64) -> Result<Self> {
        if groups.iter().any(|g| g % 2 != 0) {
            return Err(Error::Config(format!("rotary group sizes must be even, got {groups:?}")));
        }
        if groups.iter().sum::<usize>() != head_dim || head_dim == 0 {
            return Err(Error::Config(format!(
                "rotary groups {groups:?} must sum to head_dim {head_dim}"
            )));
        }
        if !(base > 1.0) {
            return Err(Error::Config(format!("rotary base must exceed 1, got {base}")));
        }
        Ok(Self {
            head_dim,
            groups,
            base,
        })
    }

    /// idx and y get a quarter of the channels each, x the remaining half
    /// (rounded to even sizes).
    pub fn for_head_dim(head_dim: usize) -> Result<Self> {
        let quarter = 2 * (head_dim / 8);
        Self::new(head_dim, [quarter, quarter, head_dim.saturating_sub(2 * quarter)], Self::DEFAULT_BASE)
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn groups(&self) -> [usize; 3] {
        self.groups
    }

    fn rotate(&self, x: &Tensor, coords: &[TokenCoordinate], direction: f64) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.head_dim {
            return Err(Error::dim("rope_rotate", x.shape(), &[coords.len(), self.head_dim]));
        }
        if x.rows() != coords.len() {
            return Err(Error::dim("rope_rotate", x.shape(), &[coords.len(), self.head_dim]));
        }
        let mut out = x.clone();
        for (t, coord) in coords.iter().enumerate() {
            let row = out.row_mut(t);
            let mut offset = 0;
            for (axis, &size) in self.groups.iter().enumerate() {
                let pos = coord.axis(axis) as f64;
                for j in 0..size / 2 {
                    let freq = self.base.powf(-(2.0 * j as f64) / size as f64);
                    let (sin, cos) = (direction * pos * freq).sin_cos();
                    let (a, b) = (row[offset + 2 * j], row[offset + 2 * j + 1]);
                    row[offset + 2 * j] = a * cos - b * sin;
                    row[offset + 2 * j + 1] = a * sin + b * cos;
                }
                offset += size;
            }
        }
        Ok(out)
    }
}

/// Rotates channel pairs `(2j, 2j+1)` of each axis group by
/// `coordinate · base^(-2j / group_size)`.
pub fn rope_rotate(x: &Tensor, coords: &[TokenCoordinate], table: &RopeTable) -> Result<Tensor> {
    table.rotate(x, coords, 1.0)
}

/// Inverse (transpose) of [`rope_rotate`]; also its backward pass.
pub fn rope_rotate_inverse(x: &Tensor, coords: &[TokenCoordinate], table: &RopeTable) -> Result<Tensor> {
    table.rotate(x, coords, -1.0)
}

/// Applies [`rope_rotate`] to each head block of a `[L, heads·head_dim]` matrix.
pub fn rope_rotate_heads(x: &Tensor, coords: &[TokenCoordinate], table: &RopeTable, inverse: bool) -> Result<Tensor> {
    let hd = table.head_dim();
    if !x.cols().is_multiple_of(hd) {
        return Err(Error::dim("rope_rotate_heads", x.shape(), &[coords.len(), hd]));
    }
    let mut out = Tensor::zeros(x.shape());
    for h in 0..x.cols() / hd {
        let block = x.slice_cols(h * hd, (h + 1) * hd)?;
        let rotated = table.rotate(&block, coords, if inverse { -1.0 } else { 1.0 })?;
        out.set_cols(h * hd, &rotated)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn grids(dims: &[(usize, usize)]) -> Vec<ImageGrid> {
        dims.iter()
            .enumerate()
            .map(|(i, &(h, w))| ImageGrid::new(i, h, w).unwrap())
            .collect()
    }

    #[test]
    fn scheme_numbers_round_trip() {
        for n in 1..=4 {
            assert_eq!(EncodingScheme::from_number(n).unwrap().number(), n);
        }
        assert_eq!(EncodingScheme::default().number(), 4);
        assert!(EncodingScheme::from_number(5).is_err());
    }

    #[test]
    fn scheme4_reference_offset() {
        let c = assign_coordinates(2, &grids(&[(2, 2), (2, 2)]), EncodingScheme::default()).unwrap();
        assert_eq!(c.len(), 10);
        assert_eq!(c[0], TokenCoordinate::ORIGIN);
        assert_eq!(c[1], TokenCoordinate::ORIGIN);
        // target (0,0) then ref1 (0,0)
        assert_eq!(c[2], TokenCoordinate::new(0, 0, 0));
        assert_eq!(c[6], TokenCoordinate::new(1, 0, 2));
        assert_eq!(c[9], TokenCoordinate::new(1, 1, 3));
    }

    #[test]
    fn scheme1_collides() {
        let g = grids(&[(2, 2), (2, 2)]);
        let c = assign_coordinates(2, &g, EncodingScheme::from_number(1).unwrap()).unwrap();
        assert_eq!(c[2], c[6]);
        let spans = image_spans(2, &g).unwrap();
        assert_eq!(check_injectivity(&c, &spans).len(), 4);
    }

    #[test]
    fn scheme2_cumulative_width() {
        let g = grids(&[(2, 2), (2, 2), (2, 2)]);
        let c = assign_coordinates(0, &g, EncodingScheme::from_number(2).unwrap()).unwrap();
        assert_eq!(c[8], TokenCoordinate::new(0, 0, 4));
    }

    #[test]
    fn scheme3_disambiguates_by_index() {
        let g = grids(&[(3, 2), (3, 2)]);
        let c = assign_coordinates(1, &g, EncodingScheme::from_number(3).unwrap()).unwrap();
        assert!(check_injectivity(&c, &image_spans(1, &g).unwrap()).is_empty());
    }

    #[test]
    fn height_shift_knob() {
        let g = grids(&[(2, 3), (2, 3)]);
        let s = EncodingScheme::from_number(2).unwrap().with_shift_axis(ShiftAxis::Height);
        let c = assign_coordinates(0, &g, s).unwrap();
        assert_eq!(c[6], TokenCoordinate::new(0, 2, 0));
        assert!(check_injectivity(&c, &image_spans(0, &g).unwrap()).is_empty());
    }

    #[test]
    fn duplicate_or_gapped_indices_rejected() {
        let dup = vec![ImageGrid::new(0, 2, 2).unwrap(), ImageGrid::new(0, 1, 1).unwrap()];
        assert!(matches!(
            assign_coordinates(0, &dup, EncodingScheme::default()),
            Err(Error::Layout(_))
        ));
        let gap = vec![ImageGrid::new(0, 2, 2).unwrap(), ImageGrid::new(2, 1, 1).unwrap()];
        assert!(matches!(
            assign_coordinates(0, &gap, EncodingScheme::default()),
            Err(Error::Layout(_))
        ));
        assert!(ImageGrid::new(0, 0, 2).is_err());
    }

    #[test]
    fn unordered_input_is_packed_by_index() {
        let g = vec![ImageGrid::new(1, 1, 1).unwrap(), ImageGrid::new(0, 1, 2).unwrap()];
        let c = assign_coordinates(0, &g, EncodingScheme::default()).unwrap();
        assert_eq!(c, vec![
            TokenCoordinate::new(0, 0, 0),
            TokenCoordinate::new(0, 0, 1),
            TokenCoordinate::new(1, 0, 2),
        ]);
    }

    #[test]
    fn rope_zero_coordinates_is_identity() {
        let mut rng = SeededRng::new(1);
        let x = rng.normal(&[3, 8]);
        let t = RopeTable::for_head_dim(8).unwrap();
        assert_eq!(rope_rotate(&x, &[TokenCoordinate::ORIGIN; 3], &t).unwrap(), x);
    }

    #[test]
    fn rope_preserves_pair_norms() {
        let mut rng = SeededRng::new(2);
        let x = rng.normal(&[4, 16]);
        let coords: Vec<_> = (0..4).map(|i| TokenCoordinate::new(i, 2 * i + 1, 3 * i + 2)).collect();
        let t = RopeTable::for_head_dim(16).unwrap();
        let y = rope_rotate(&x, &coords, &t).unwrap();
        for r in 0..4 {
            for p in 0..8 {
                let a = x.at(r, 2 * p).hypot(x.at(r, 2 * p + 1));
                let b = y.at(r, 2 * p).hypot(y.at(r, 2 * p + 1));
                assert!((a - b).abs() < 1e-12);
            }
        }
        let back = rope_rotate_inverse(&y, &coords, &t).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn rope_relative_phase() {
        let mut rng = SeededRng::new(3);
        let q = rng.normal(&[1, 8]);
        let k = rng.normal(&[1, 8]);
        let t = RopeTable::for_head_dim(8).unwrap();
        let dot = |c1: TokenCoordinate, c2: TokenCoordinate| {
            let a = rope_rotate(&q, &[c1], &t).unwrap();
            let b = rope_rotate(&k, &[c2], &t).unwrap();
            a.row(0).iter().zip(b.row(0)).map(|(x, y)| x * y).sum::<f64>()
        };
        let base = dot(TokenCoordinate::new(1, 2, 5), TokenCoordinate::new(0, 1, 1));
        let shifted = dot(TokenCoordinate::new(4, 9, 12), TokenCoordinate::new(3, 8, 8));
        assert!((base - shifted).abs() < 1e-10);
    }

    #[test]
    fn rope_rejects_odd_groups() {
        assert!(matches!(RopeTable::new(8, [3, 1, 4], 10_000.0), Err(Error::Config(_))));
        assert!(RopeTable::new(8, [2, 2, 2], 10_000.0).is_err());
        assert_eq!(RopeTable::for_head_dim(8).unwrap().groups(), [2, 2, 4]);
    }
}
