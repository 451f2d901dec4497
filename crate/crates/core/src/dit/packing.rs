use crate::encoding::{assign_coordinates, EncodingScheme, ImageGrid, TokenCoordinate};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default cap on reference images per sequence.
pub const MAX_REFERENCES: usize = 5;

/// A latent image as a row-major token grid, one row per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    height: usize,
    width: usize,
    tokens: Tensor,
}

impl LatentGrid {
    pub fn new(height: usize, width: usize, tokens: Tensor) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Layout(format!("latent grid {height}x{width} is empty")));
        }
        if tokens.shape().len() != 2 || tokens.rows() != height * width {
            return Err(Error::dim("LatentGrid", tokens.shape(), &[height * width, 0]));
        }
        Ok(Self {
            height,
            width,
            tokens,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.tokens.cols()
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn into_tokens(self) -> Tensor {
        self.tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanKind {
    Text,
    Noise,
    /// Reference image with its 1-based image index.
    Reference(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub kind: SpanKind,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Text, noise and reference tokens in one sequence, with their spans and
/// coordinates. Rows live in the feature space of the latents (the text
/// embedding shares that width); the model embeds them to `d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedSequence {
    tokens: Tensor,
    spans: Vec<Span>,
    coords: Vec<TokenCoordinate>,
    grids: Vec<ImageGrid>,
    scheme: EncodingScheme,
}

/// Packs `text → noise → references` and assigns coordinates under `scheme`.
/// Reference tokens are copied unchanged.
pub fn pack_sequence(
    text: &Tensor,
    noise: &LatentGrid,
    references: &[LatentGrid],
    scheme: EncodingScheme,
) -> Result<PackedSequence> {
    pack_sequence_capped(text, noise, references, scheme, MAX_REFERENCES)
}

pub fn pack_sequence_capped(
    text: &Tensor,
    noise: &LatentGrid,
    references: &[LatentGrid],
    scheme: EncodingScheme,
    max_references: usize,
) -> Result<PackedSequence> {
    if references.len() > max_references {
        return Err(Error::Contract(format!(
            "{} reference images exceed the cap of {max_references}",
            references.len()
        )));
    }
    let channels = noise.channels();
    if text.shape().len() != 2 || text.cols() != channels {
        return Err(Error::dim("pack_sequence", text.shape(), noise.tokens().shape()));
    }
    for r in references {
        if r.channels() != channels {
            return Err(Error::dim("pack_sequence", r.tokens().shape(), noise.tokens().shape()));
        }
    }
    let mut grids = vec![ImageGrid::new(0, noise.height(), noise.width())?];
    for (i, r) in references.iter().enumerate() {
        grids.push(ImageGrid::new(i + 1, r.height(), r.width())?);
    }
    let coords = assign_coordinates(text.rows(), &grids, scheme)?;

    let mut parts: Vec<&Tensor> = vec![text, noise.tokens()];
    parts.extend(references.iter().map(LatentGrid::tokens));
    let tokens = Tensor::concat_rows(&parts)?;

    let mut spans = Vec::with_capacity(2 + references.len());
    let mut start = 0;
    let mut push = |kind, len| {
        spans.push(Span {
            kind,
            start,
            end: start + len,
        });
        start += len;
    };
    push(SpanKind::Text, text.rows());
    push(SpanKind::Noise, noise.height() * noise.width());
    for (i, r) in references.iter().enumerate() {
        push(SpanKind::Reference(i + 1), r.height() * r.width());
    }
    Ok(PackedSequence {
        tokens,
        spans,
        coords,
        grids,
        scheme,
    })
}

impl PackedSequence {
    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.tokens.cols()
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn coords(&self) -> &[TokenCoordinate] {
        &self.coords
    }

    pub fn grids(&self) -> &[ImageGrid] {
        &self.grids
    }

    pub fn scheme(&self) -> EncodingScheme {
        self.scheme
    }

    pub fn text_span(&self) -> Span {
        self.spans[0]
    }

    pub fn noise_span(&self) -> Span {
        self.spans[1]
    }

    pub fn reference_spans(&self) -> &[Span] {
        &self.spans[2..]
    }

    pub fn reference_count(&self) -> usize {
        self.spans.len() - 2
    }

    pub fn noise_grid(&self) -> ImageGrid {
        self.grids[0]
    }

    pub fn noise_tokens(&self) -> Tensor {
        let s = self.noise_span();
        self.tokens.slice_rows(s.start, s.end).expect("span within sequence")
    }

    /// Copy of this sequence with the noise span replaced.
    pub fn with_noise(&self, noise: &Tensor) -> Result<PackedSequence> {
        let s = self.noise_span();
        if noise.shape() != [s.len(), self.channels()] {
            return Err(Error::dim("with_noise", noise.shape(), &[s.len(), self.channels()]));
        }
        let mut out = self.clone();
        let c = self.channels();
        out.tokens.data_mut()[s.start * c..s.end * c].copy_from_slice(noise.data());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn grid(rng: &mut SeededRng, h: usize, w: usize, c: usize) -> LatentGrid {
        LatentGrid::new(h, w, rng.normal(&[h * w, c])).unwrap()
    }

    #[test]
    fn no_references_is_plain_layout() {
        let mut rng = SeededRng::new(1);
        let text = rng.normal(&[3, 4]);
        let noise = grid(&mut rng, 2, 2, 4);
        let p = pack_sequence(&text, &noise, &[], EncodingScheme::default()).unwrap();
        assert_eq!(p.len(), 7);
        assert_eq!(p.reference_count(), 0);
        assert_eq!(p.tokens(), &Tensor::concat_rows(&[&text, noise.tokens()]).unwrap());
        assert!(p.coords()[..3].iter().all(|c| *c == TokenCoordinate::ORIGIN));
    }

    #[test]
    fn two_references_layout() {
        let mut rng = SeededRng::new(2);
        let text = rng.normal(&[2, 4]);
        let noise = grid(&mut rng, 2, 2, 4);
        let refs = [grid(&mut rng, 2, 2, 4), grid(&mut rng, 2, 2, 4)];
        let p = pack_sequence(&text, &noise, &refs, EncodingScheme::default()).unwrap();
        assert_eq!(p.len(), 2 + 4 + 8);
        assert_eq!(p.coords()[6], TokenCoordinate::new(1, 0, 2));
        assert_eq!(p.coords()[10], TokenCoordinate::new(2, 0, 4));
        assert_eq!(p.reference_spans()[1], Span { kind: SpanKind::Reference(2), start: 10, end: 14 });
        assert_eq!(p.noise_tokens(), noise.tokens().clone());
        let r2 = p.reference_spans()[1];
        assert_eq!(&p.tokens().slice_rows(r2.start, r2.end).unwrap(), refs[1].tokens());
    }

    #[test]
    fn reference_cap_enforced() {
        let mut rng = SeededRng::new(3);
        let text = rng.normal(&[1, 2]);
        let noise = grid(&mut rng, 1, 1, 2);
        let refs: Vec<_> = (0..6).map(|_| grid(&mut rng, 1, 1, 2)).collect();
        assert!(matches!(
            pack_sequence(&text, &noise, &refs, EncodingScheme::default()),
            Err(Error::Contract(_))
        ));
        assert!(pack_sequence_capped(&text, &noise, &refs, EncodingScheme::default(), 6).is_ok());
    }

    #[test]
    fn with_noise_replaces_only_noise_span() {
        let mut rng = SeededRng::new(4);
        let text = rng.normal(&[1, 3]);
        let noise = grid(&mut rng, 2, 1, 3);
        let refs = [grid(&mut rng, 1, 2, 3)];
        let p = pack_sequence(&text, &noise, &refs, EncodingScheme::default()).unwrap();
        let fresh = rng.normal(&[2, 3]);
        let q = p.with_noise(&fresh).unwrap();
        assert_eq!(q.noise_tokens(), fresh);
        assert_eq!(q.tokens().slice_rows(0, 1).unwrap(), text);
        assert_eq!(q.tokens().slice_rows(3, 5).unwrap(), refs[0].tokens().clone());
    }
}
