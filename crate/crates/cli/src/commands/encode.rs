use std::io::Write;

use refmix_core::encoding::{assign_coordinates, check_injectivity, image_spans, EncodingScheme, ImageGrid};

use crate::error::{CliError, Result};

/// Parses `HxW,HxW,...`; the first grid is the target, the rest references.
pub fn parse_grids(s: &str) -> Result<Vec<(usize, usize)>> {
    let bad = |part: &str, why: &str| CliError::Usage(format!("bad grid `{part}` in `{s}`: {why} (expected HxW, e.g. 4x4,2x2)"));
    s.split(',')
        .map(|part| {
            let part = part.trim();
            let (h, w) = part.split_once(['x', 'X']).ok_or_else(|| bad(part, "missing `x`"))?;
            let h: usize = h.trim().parse().map_err(|_| bad(part, "height is not a number"))?;
            let w: usize = w.trim().parse().map_err(|_| bad(part, "width is not a number"))?;
            if h == 0 || w == 0 {
                return Err(bad(part, "dimensions must be at least 1"));
            }
            Ok((h, w))
        })
        .collect()
}

pub struct Inspection {
    pub tokens: usize,
    pub collisions: usize,
}

/// Writes `token,idx,y,x` rows for every token and counts cross-image
/// coordinate collisions.
pub fn encode_inspect(grids: &[(usize, usize)], scheme: EncodingScheme, text_len: usize, out: &mut impl Write) -> Result<Inspection> {
    let grids: Vec<ImageGrid> = grids
        .iter()
        .enumerate()
        .map(|(i, &(h, w))| ImageGrid::new(i, h, w))
        .collect::<refmix_core::Result<_>>()?;
    let coords = assign_coordinates(text_len, &grids, scheme)?;
    let spans = image_spans(text_len, &grids)?;
    let collisions = check_injectivity(&coords, &spans).len();
    let mut write_rows = || -> std::io::Result<()> {
        writeln!(out, "token,idx,y,x")?;
        for (t, c) in coords.iter().enumerate() {
            writeln!(out, "{t},{},{},{}", c.idx, c.y, c.x)?;
        }
        Ok(())
    };
    // A closed pipe (`| head`) just means the reader has seen enough.
    match write_rows() {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            return Err(CliError::Usage(format!("writing output: {e}")));
        }
        _ => {}
    }
    Ok(Inspection {
        tokens: coords.len(),
        collisions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_strings() {
        assert_eq!(parse_grids("4x4, 2x3").unwrap(), vec![(4, 4), (2, 3)]);
        for bad in ["0x2", "2", "ax2", "2x", ""] {
            assert!(matches!(parse_grids(bad), Err(CliError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn collision_counts() {
        let g = parse_grids("2x2,2x2").unwrap();
        let mut buf = Vec::new();
        let one = encode_inspect(&g, EncodingScheme::from_number(1).unwrap(), 0, &mut buf).unwrap();
        assert_eq!((one.tokens, one.collisions), (8, 4));
        let four = encode_inspect(&g, EncodingScheme::from_number(4).unwrap(), 0, &mut Vec::new()).unwrap();
        assert_eq!(four.collisions, 0);
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(5), Some("4,0,0,0"));
    }
}
