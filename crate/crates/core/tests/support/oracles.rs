//! Reference computations written independently of the library's kernels.
//! Shared by the core property tests and the acceptance suite.
#![allow(dead_code)]

use refmix_core::encoding::TokenCoordinate;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &refmix_core::Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Neumaier-compensated sum.
pub fn comp_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn naive_matmul(a: &Mat, b: &Mat) -> Mat {
    let n = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| (0..n).map(|j| comp_sum(row.iter().enumerate().map(|(p, v)| v * b[p][j]))).collect())
        .collect()
}

/// `x · Wᵀ` with W stored `[out, in]`.
pub fn linear(x: &Mat, w: &Mat) -> Mat {
    x.iter()
        .map(|row| w.iter().map(|wr| comp_sum(row.iter().zip(wr).map(|(a, b)| a * b))).collect())
        .collect()
}

/// Target-branch attention straight from the formula: queries are the
/// target's noise then text tokens, keys/values are target noise, target
/// text, then source noise; per-head scale `1/√d`; output projected by W_o.
#[allow(clippy::too_many_arguments)]
pub fn oracle_mixed_attention(
    noise: &Mat,
    text: &Mat,
    src_k: &Mat,
    src_v: &Mat,
    wq: &Mat,
    wk: &Mat,
    wv: &Mat,
    wo: &Mat,
    heads: usize,
) -> Mat {
    let x: Mat = noise.iter().chain(text.iter()).cloned().collect();
    let q = linear(&x, wq);
    let mut k = linear(&x, wk);
    let mut v = linear(&x, wv);
    k.extend(src_k.iter().cloned());
    v.extend(src_v.iter().cloned());
    let dm = wq.len();
    let d = dm / heads;
    let mut concat = vec![vec![0.0; dm]; q.len()];
    for h in 0..heads {
        let cols = h * d..(h + 1) * d;
        for (i, qi) in q.iter().enumerate() {
            let logits: Vec<f64> = k
                .iter()
                .map(|kj| comp_sum(cols.clone().map(|c| qi[c] * kj[c])) / (d as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z = comp_sum(e.iter().copied());
            for c in cols.clone() {
                concat[i][c] = comp_sum(e.iter().zip(&v).map(|(w, vj)| w / z * vj[c]));
            }
        }
    }
    linear(&concat, wo)
}

/// Every cross-image pair of equal coordinates, by brute force over pairs.
pub fn brute_force_collisions(coords: &[TokenCoordinate], image_of: &[Option<usize>]) -> usize {
    let mut n = 0;
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            if let (Some(a), Some(b)) = (image_of[i], image_of[j]) {
                if a != b && coords[i] == coords[j] {
                    n += 1;
                }
            }
        }
    }
    n
}

/// Central difference `(f(x+h) − f(x−h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error with an absolute floor so that exactly-zero gradients
/// compare on absolute terms.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
