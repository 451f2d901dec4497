//! Multi-head attention with source-branch feature mixing.
//!
//! The target branch attends over the concatenation of its own keys/values
//! (noise tokens, then text tokens) and the noise-token keys/values captured
//! from the source branch at the same layer:
//!
//! ```text
//! Q = [Qn_tar; Qt_tar]   K = [Kn_tar; Kt_tar; Kn_src]   V = [Vn_tar; Vt_tar; Vn_src]
//! out = concat_h(softmax(Q_h K_hᵀ / √d) V_h) · W_oᵀ
//! ```
//!
//! `d` is the per-head dimension. With an empty [`SourceKv`] this is ordinary
//! full self-attention over the target tokens.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{softmax_rows, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchTag {
    Target,
    Source,
}

/// Text and noise tokens of one generation branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchTokens {
    text: Tensor,
    noise: Tensor,
    tag: BranchTag,
}

impl BranchTokens {
    pub fn new(text: Tensor, noise: Tensor, tag: BranchTag) -> Result<Self> {
        if text.shape().len() != 2 || noise.shape().len() != 2 {
            return Err(Error::dim("BranchTokens", text.shape(), noise.shape()));
        }
        if text.cols() != noise.cols() {
            return Err(Error::dim("BranchTokens", text.shape(), noise.shape()));
        }
        if text.rows() + noise.rows() == 0 {
            return Err(Error::Contract("branch has neither text nor noise tokens".into()));
        }
        Ok(Self { text, noise, tag })
    }

    pub fn text(&self) -> &Tensor {
        &self.text
    }

    pub fn noise(&self) -> &Tensor {
        &self.noise
    }

    pub fn tag(&self) -> BranchTag {
        self.tag
    }

    pub fn d_model(&self) -> usize {
        self.noise.cols()
    }

    /// Tokens in attention order: noise rows first, then text rows.
    pub fn stacked(&self) -> Tensor {
        Tensor::concat_rows(&[&self.noise, &self.text]).expect("validated widths")
    }
}

/// Projection weights of one attention layer, stored `[d_out, d_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    num_heads: usize,
}

impl AttentionParams {
    pub fn new(w_q: Tensor, w_k: Tensor, w_v: Tensor, w_o: Tensor, num_heads: usize) -> Result<Self> {
        let d = w_q.shape().first().copied().unwrap_or(0);
        for w in [&w_q, &w_k, &w_v, &w_o] {
            if w.shape() != [d, d] {
                return Err(Error::dim("AttentionParams", &[d, d], w.shape()));
            }
        }
        if num_heads == 0 || d == 0 || d % num_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d} must be a positive multiple of num_heads {num_heads}"
            )));
        }
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_o,
            num_heads,
        })
    }

    /// Gaussian weights with standard deviation `std`.
    pub fn random(rng: &mut SeededRng, d_model: usize, num_heads: usize, std: f64) -> Result<Self> {
        let mut w = || rng.normal(&[d_model, d_model]).scale(std);
        let (q, k, v, o) = (w(), w(), w(), w());
        Self::new(q, k, v, o, num_heads)
    }

    pub fn zeros(d_model: usize, num_heads: usize) -> Result<Self> {
        let z = Tensor::zeros(&[d_model, d_model]);
        Self::new(z.clone(), z.clone(), z.clone(), z, num_heads)
    }

    pub fn d_model(&self) -> usize {
        self.w_q.rows()
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn head_dim(&self) -> usize {
        self.d_model() / self.num_heads
    }

    fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for w in [&self.w_q, &self.w_k, &self.w_v, &self.w_o] {
            for v in w.data() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h ^ self.num_heads as u64
    }
}

/// Noise-token keys/values captured from the source branch at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceKv {
    pub k: Tensor,
    pub v: Tensor,
    pub layer_id: usize,
}

impl SourceKv {
    pub fn new(k: Tensor, v: Tensor, layer_id: usize) -> Result<Self> {
        if k.shape().len() != 2 || k.shape() != v.shape() {
            return Err(Error::Contract(format!(
                "source key/value shapes differ: {:?} vs {:?}",
                k.shape(),
                v.shape()
            )));
        }
        Ok(Self { k, v, layer_id })
    }

    /// No source tokens: mixing disabled for this layer.
    pub fn empty(d_model: usize, layer_id: usize) -> Self {
        Self {
            k: Tensor::zeros(&[0, d_model]),
            v: Tensor::zeros(&[0, d_model]),
            layer_id,
        }
    }

    pub fn len(&self) -> usize {
        self.k.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat projections, noise rows first then text rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Qkv {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
}

pub fn project_qkv(tokens: &BranchTokens, params: &AttentionParams) -> Result<Qkv> {
    if tokens.d_model() != params.d_model() {
        return Err(Error::dim(
            "project_qkv",
            tokens.noise().shape(),
            params.w_q.shape(),
        ));
    }
    let x = tokens.stacked();
    Ok(Qkv {
        q: x.matmul_t(&params.w_q)?,
        k: x.matmul_t(&params.w_k)?,
        v: x.matmul_t(&params.w_v)?,
    })
}

/// Per-head attention result before the output projection.
#[derive(Debug, Clone)]
pub struct HeadsForward {
    /// `[L_q, d_model]`, heads concatenated along columns.
    pub heads: Tensor,
    /// One `[L_q, L_k]` row-stochastic matrix per head.
    pub probs: Vec<Tensor>,
}

/// `softmax(Q_h K_hᵀ / √d) V_h` for every head, concatenated.
pub fn attend_heads(q: &Tensor, k: &Tensor, v: &Tensor, num_heads: usize) -> Result<HeadsForward> {
    let dm = q.cols();
    if k.cols() != dm || v.cols() != dm || k.rows() != v.rows() {
        return Err(Error::dim("attend_heads", k.shape(), v.shape()));
    }
    if num_heads == 0 || !dm.is_multiple_of(num_heads) {
        return Err(Error::Config(format!("{dm} not divisible into {num_heads} heads")));
    }
    let d = dm / num_heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut heads = Tensor::zeros(&[q.rows(), dm]);
    let mut probs = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let (lo, hi) = (h * d, (h + 1) * d);
        let qh = q.slice_cols(lo, hi)?;
        let kh = k.slice_cols(lo, hi)?;
        let vh = v.slice_cols(lo, hi)?;
        let p = softmax_rows(&qh.matmul_t(&kh)?.scale(scale))?;
        heads.set_cols(lo, &p.matmul(&vh)?)?;
        probs.push(p);
    }
    Ok(HeadsForward { heads, probs })
}

/// Gradients of [`attend_heads`] with respect to its q, k, v inputs.
pub fn attend_heads_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    probs: &[Tensor],
    grad_heads: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let num_heads = probs.len();
    let dm = q.cols();
    let d = dm / num_heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut dq = Tensor::zeros(q.shape());
    let mut dk = Tensor::zeros(k.shape());
    let mut dv = Tensor::zeros(v.shape());
    for (h, p) in probs.iter().enumerate() {
        let (lo, hi) = (h * d, (h + 1) * d);
        let qh = q.slice_cols(lo, hi)?;
        let kh = k.slice_cols(lo, hi)?;
        let vh = v.slice_cols(lo, hi)?;
        let go = grad_heads.slice_cols(lo, hi)?;
        let dp = go.matmul_t(&vh)?;
        dv.set_cols(lo, &p.t_matmul(&go)?)?;
        // softmax Jacobian, row by row
        let mut ds = Tensor::zeros(p.shape());
        for i in 0..p.rows() {
            let dot: f64 = p.row(i).iter().zip(dp.row(i)).map(|(a, b)| a * b).sum();
            for j in 0..p.cols() {
                ds.set(i, j, p.at(i, j) * (dp.at(i, j) - dot) * scale);
            }
        }
        dq.set_cols(lo, &ds.matmul(&kh)?)?;
        dk.set_cols(lo, &ds.t_matmul(&qh)?)?;
    }
    Ok((dq, dk, dv))
}

/// Mixing attention over pre-computed projections.
pub fn mixed_attention(qkv: &Qkv, source: &SourceKv, params: &AttentionParams) -> Result<Tensor> {
    Ok(mixed_core(qkv, source, params)?.0)
}

fn mixed_core(qkv: &Qkv, source: &SourceKv, params: &AttentionParams) -> Result<(Tensor, Tensor, Tensor, HeadsForward)> {
    if source.k.shape() != source.v.shape() {
        return Err(Error::Contract(format!(
            "source key length {} != value length {}",
            source.k.rows(),
            source.v.rows()
        )));
    }
    let dm = params.d_model();
    for t in [&qkv.q, &qkv.k, &qkv.v] {
        if t.cols() != dm {
            return Err(Error::dim("mixed_attention", t.shape(), params.w_o.shape()));
        }
    }
    if source.k.cols() != dm {
        return Err(Error::dim("mixed_attention", source.k.shape(), params.w_o.shape()));
    }
    let k_all = Tensor::concat_rows(&[&qkv.k, &source.k])?;
    let v_all = Tensor::concat_rows(&[&qkv.v, &source.v])?;
    let fwd = attend_heads(&qkv.q, &k_all, &v_all, params.num_heads())?;
    let out = fwd.heads.matmul_t(&params.w_o)?;
    Ok((out, k_all, v_all, fwd))
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Tensor,
    qkv: Qkv,
    k_all: Tensor,
    v_all: Tensor,
    forward: HeadsForward,
    target_len: usize,
    out_shape: Vec<usize>,
    fingerprint: u64,
}

impl AttentionCache {
    /// Attention weights per head, `[L_target, L_target + L_source]`.
    pub fn probs(&self) -> &[Tensor] {
        &self.forward.probs
    }

    pub fn qkv(&self) -> &Qkv {
        &self.qkv
    }
}

/// Projects `tokens`, attends with mixing, and keeps a cache for
/// [`attention_backward`].
pub fn mixed_attention_forward(
    tokens: &BranchTokens,
    source: &SourceKv,
    params: &AttentionParams,
) -> Result<(Tensor, AttentionCache)> {
    let qkv = project_qkv(tokens, params)?;
    let (out, k_all, v_all, forward) = mixed_core(&qkv, source, params)?;
    let cache = AttentionCache {
        x: tokens.stacked(),
        target_len: qkv.q.rows(),
        qkv,
        k_all,
        v_all,
        forward,
        out_shape: out.shape().to_vec(),
        fingerprint: params.fingerprint(),
    };
    Ok((out, cache))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    /// Gradient for the input tokens, noise rows first.
    pub d_tokens: Tensor,
    pub d_q: Tensor,
    pub d_k: Tensor,
    pub d_v: Tensor,
    pub d_k_src: Tensor,
    pub d_v_src: Tensor,
    pub d_w_q: Tensor,
    pub d_w_k: Tensor,
    pub d_w_v: Tensor,
    pub d_w_o: Tensor,
}

/// Analytic gradients of a scalar loss given `∂loss/∂out = grad_out`.
///
/// `params` must be the weights the cache was produced with; anything else is
/// reported as a stale cache.
pub fn attention_backward(
    cache: &AttentionCache,
    params: &AttentionParams,
    grad_out: &Tensor,
) -> Result<AttentionGrads> {
    if cache.fingerprint != params.fingerprint() {
        return Err(Error::Contract("stale attention cache: parameters changed since forward".into()));
    }
    if grad_out.shape() != cache.out_shape.as_slice() {
        return Err(Error::Contract(format!(
            "grad_out shape {:?} does not match cached output {:?}",
            grad_out.shape(),
            cache.out_shape
        )));
    }
    let d_w_o = grad_out.t_matmul(&cache.forward.heads)?;
    let d_heads = grad_out.matmul(&params.w_o)?;
    let (d_q, d_k_all, d_v_all) = attend_heads_backward(
        &cache.qkv.q,
        &cache.k_all,
        &cache.v_all,
        &cache.forward.probs,
        &d_heads,
    )?;
    let l = cache.target_len;
    let l_all = d_k_all.rows();
    let d_k = d_k_all.slice_rows(0, l)?;
    let d_k_src = d_k_all.slice_rows(l, l_all)?;
    let d_v = d_v_all.slice_rows(0, l)?;
    let d_v_src = d_v_all.slice_rows(l, l_all)?;

    let d_w_q = d_q.t_matmul(&cache.x)?;
    let d_w_k = d_k.t_matmul(&cache.x)?;
    let d_w_v = d_v.t_matmul(&cache.x)?;
    let mut d_tokens = d_q.matmul(&params.w_q)?;
    d_tokens.add_assign(&d_k.matmul(&params.w_k)?)?;
    d_tokens.add_assign(&d_v.matmul(&params.w_v)?)?;
    Ok(AttentionGrads {
        d_tokens,
        d_q,
        d_k,
        d_v,
        d_k_src,
        d_v_src,
        d_w_q,
        d_w_k,
        d_w_v,
        d_w_o,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens(rng: &mut SeededRng, lt: usize, ln: usize, d: usize) -> BranchTokens {
        BranchTokens::new(rng.normal(&[lt, d]), rng.normal(&[ln, d]), BranchTag::Target).unwrap()
    }

    #[test]
    fn identity_projection_puts_noise_first() {
        let text = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let noise = Tensor::from_rows(&[[3.0, 4.0], [5.0, 6.0]]).unwrap();
        let t = BranchTokens::new(text, noise, BranchTag::Target).unwrap();
        let i = Tensor::eye(2);
        let p = AttentionParams::new(i.clone(), i.clone(), i.clone(), i, 1).unwrap();
        let qkv = project_qkv(&t, &p).unwrap();
        assert_eq!(qkv.q.data(), &[3.0, 4.0, 5.0, 6.0, 1.0, 2.0]);
    }

    #[test]
    fn zero_weights_zero_projections() {
        let mut rng = SeededRng::new(1);
        let t = tokens(&mut rng, 2, 3, 4);
        let qkv = project_qkv(&t, &AttentionParams::zeros(4, 2).unwrap()).unwrap();
        for m in [&qkv.q, &qkv.k, &qkv.v] {
            assert_eq!(m.max_abs(), 0.0);
            assert_eq!(m.shape(), &[5, 4]);
        }
    }

    #[test]
    fn projection_matches_matmul() {
        let mut rng = SeededRng::new(2);
        let t = tokens(&mut rng, 1, 3, 8);
        let p = AttentionParams::random(&mut rng, 8, 2, 0.5).unwrap();
        let qkv = project_qkv(&t, &p).unwrap();
        let x = Tensor::concat_rows(&[t.noise(), t.text()]).unwrap();
        let want = x.matmul(&p.w_k.transpose().unwrap()).unwrap();
        assert!(qkv.k.max_abs_diff(&want).unwrap() <= 1e-12);
    }

    #[test]
    fn singleton_key_returns_projected_value() {
        let mut rng = SeededRng::new(3);
        let t = BranchTokens::new(Tensor::zeros(&[0, 4]), rng.normal(&[1, 4]), BranchTag::Target).unwrap();
        let p = AttentionParams::random(&mut rng, 4, 2, 1.0).unwrap();
        let qkv = project_qkv(&t, &p).unwrap();
        let out = mixed_attention(&qkv, &SourceKv::empty(4, 0), &p).unwrap();
        let want = qkv.v.matmul_t(&p.w_o).unwrap();
        assert!(out.max_abs_diff(&want).unwrap() < 1e-14);
    }

    #[test]
    fn mismatched_source_is_a_contract_error() {
        let mut rng = SeededRng::new(4);
        let t = tokens(&mut rng, 1, 2, 4);
        let p = AttentionParams::random(&mut rng, 4, 1, 1.0).unwrap();
        let qkv = project_qkv(&t, &p).unwrap();
        let bad = SourceKv {
            k: Tensor::zeros(&[2, 4]),
            v: Tensor::zeros(&[3, 4]),
            layer_id: 0,
        };
        assert!(matches!(mixed_attention(&qkv, &bad, &p), Err(Error::Contract(_))));
        assert!(SourceKv::new(Tensor::zeros(&[2, 4]), Tensor::zeros(&[3, 4]), 0).is_err());
    }

    #[test]
    fn zero_cotangent_zero_gradients() {
        let mut rng = SeededRng::new(5);
        let t = tokens(&mut rng, 2, 2, 4);
        let p = AttentionParams::random(&mut rng, 4, 2, 1.0).unwrap();
        let src = SourceKv::new(rng.normal(&[2, 4]), rng.normal(&[2, 4]), 0).unwrap();
        let (out, cache) = mixed_attention_forward(&t, &src, &p).unwrap();
        let g = attention_backward(&cache, &p, &Tensor::zeros(out.shape())).unwrap();
        for m in [&g.d_w_q, &g.d_w_k, &g.d_w_v, &g.d_w_o, &g.d_tokens, &g.d_k_src] {
            assert_eq!(m.max_abs(), 0.0);
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = SeededRng::new(6);
        let t = tokens(&mut rng, 1, 2, 4);
        let p = AttentionParams::random(&mut rng, 4, 1, 1.0).unwrap();
        let (out, cache) = mixed_attention_forward(&t, &SourceKv::empty(4, 0), &p).unwrap();
        let mut p2 = p.clone();
        p2.w_v.data_mut()[0] += 1.0;
        assert!(matches!(
            attention_backward(&cache, &p2, &Tensor::ones(out.shape())),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            attention_backward(&cache, &p, &Tensor::ones(&[1, 4])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn uniform_weights_spread_value_gradient() {
        // W_q = 0 makes every logit zero, so each of the 3 keys gets weight 1/3
        let mut rng = SeededRng::new(7);
        let t = BranchTokens::new(Tensor::zeros(&[0, 4]), rng.normal(&[1, 4]), BranchTag::Target).unwrap();
        let mut p = AttentionParams::random(&mut rng, 4, 1, 1.0).unwrap();
        p.w_q = Tensor::zeros(&[4, 4]);
        let src = SourceKv::new(rng.normal(&[2, 4]), rng.normal(&[2, 4]), 0).unwrap();
        let (out, cache) = mixed_attention_forward(&t, &src, &p).unwrap();
        let grad_out = rng.normal(out.shape());
        let g = attention_backward(&cache, &p, &grad_out).unwrap();
        let pre_wo = grad_out.matmul(&p.w_o).unwrap();
        let expected = pre_wo.scale(1.0 / 3.0);
        let all_dv = Tensor::concat_rows(&[&g.d_v, &g.d_v_src]).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert!((all_dv.at(r, c) - expected.at(0, c)).abs() < 1e-14);
            }
        }
    }
}
