#![allow(clippy::needless_range_loop)]

mod support;

use proptest::prelude::*;
use refmix_core::dit::{pack_sequence, LatentGrid, SpanKind};
use refmix_core::encoding::{assign_coordinates, check_injectivity, image_spans, EncodingScheme, ImageGrid};
use refmix_core::Tensor;
use support::oracles::brute_force_collisions;

fn grids(dims: &[(usize, usize)]) -> Vec<ImageGrid> {
    dims.iter().enumerate().map(|(i, &(h, w))| ImageGrid::new(i, h, w).unwrap()).collect()
}

fn collisions(dims: &[(usize, usize)], scheme: EncodingScheme) -> usize {
    let g = grids(dims);
    let coords = assign_coordinates(2, &g, scheme).unwrap();
    check_injectivity(&coords, &image_spans(2, &g).unwrap()).len()
}

#[test]
fn two_image_layouts_exhaustive() {
    let all: Vec<(usize, usize)> = (1..=8).flat_map(|h| (1..=8).map(move |w| (h, w))).collect();
    for &a in &all {
        for &b in &all {
            for n in 2..=4 {
                assert_eq!(collisions(&[a, b], EncodingScheme::from_number(n).unwrap()), 0, "{a:?} {b:?} scheme {n}");
            }
            let c1 = collisions(&[a, b], EncodingScheme::from_number(1).unwrap());
            let overlap = a.0.min(b.0) * a.1.min(b.1);
            assert_eq!(c1, overlap, "{a:?} {b:?}");
        }
    }
}

#[test]
fn up_to_five_images_over_shape_palette() {
    let palette = [(1, 1), (1, 8), (8, 1), (2, 3), (3, 5), (8, 8)];
    for n in 1..=5usize {
        let mut idx = vec![0usize; n];
        loop {
            let dims: Vec<_> = idx.iter().map(|&i| palette[i]).collect();
            for s in 2..=4 {
                assert_eq!(collisions(&dims, EncodingScheme::from_number(s).unwrap()), 0, "{dims:?} scheme {s}");
            }
            if n >= 2 {
                assert!(collisions(&dims, EncodingScheme::from_number(1).unwrap()) >= 1);
            }
            let mut k = 0;
            while k < n && idx[k] == palette.len() - 1 {
                idx[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
            idx[k] += 1;
        }
    }
}

proptest! {
    #[test]
    fn library_count_matches_brute_force(
        dims in prop::collection::vec((1usize..=8, 1usize..=8), 1..=5),
        scheme in 1u8..=4,
        text in 0usize..4,
    ) {
        let g = grids(&dims);
        let s = EncodingScheme::from_number(scheme).unwrap();
        let coords = assign_coordinates(text, &g, s).unwrap();
        let spans = image_spans(text, &g).unwrap();
        let mut image_of = vec![None; coords.len()];
        for span in &spans {
            for t in span.start..span.end {
                image_of[t] = Some(span.image_index);
            }
        }
        prop_assert_eq!(check_injectivity(&coords, &spans).len(), brute_force_collisions(&coords, &image_of));
        prop_assert!(coords[..text].iter().all(|c| c.idx == 0 && c.y == 0 && c.x == 0));
    }
}

#[test]
fn every_scheme_selectable_through_packing() {
    let lat = |h: usize, w: usize| LatentGrid::new(h, w, Tensor::zeros(&[h * w, 2])).unwrap();
    for n in 1..=4 {
        let scheme = EncodingScheme::from_number(n).unwrap();
        let p = pack_sequence(&Tensor::zeros(&[1, 2]), &lat(2, 2), &[lat(2, 2)], scheme).unwrap();
        assert_eq!(p.scheme(), scheme);
        let first_ref = p.reference_spans()[0];
        assert_eq!(first_ref.kind, SpanKind::Reference(1));
        let c = p.coords()[first_ref.start];
        let want = match n {
            1 => (0, 0, 0),
            2 => (0, 0, 2),
            3 => (1, 0, 0),
            _ => (1, 0, 2),
        };
        assert_eq!((c.idx, c.y, c.x), want, "scheme {n}");
    }
}
