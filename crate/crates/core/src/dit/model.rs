//! A small diffusion transformer with an analytic backward pass.
//!
//! ```text
//! h      = embed(tokens) + time(t)
//! block: h += attn(rope(norm(h)))      // optional source K/V mixed in
//!        h += mlp(norm(h))
//! v      = h[noise span] · Uᵀ
//! ```

use crate::attention::{attend_heads, attend_heads_backward, AttentionParams, SourceKv};
use crate::encoding::{rope_rotate_heads, RopeTable};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{rms_norm, rms_norm_backward, Tensor};

use super::lora::{apply_lora, lora_gate, LoraAdapter, LoraPair, LoraTarget};
use super::packing::PackedSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct DitConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    /// Width of latent and text-embedding rows.
    pub channels: usize,
    pub mlp_hidden: usize,
    /// Number of sinusoid frequencies in the time embedding.
    pub time_freqs: usize,
    pub norm_eps: f64,
    pub rope_base: f64,
}

impl Default for DitConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            num_heads: 4,
            num_blocks: 2,
            channels: 4,
            mlp_hidden: 64,
            time_freqs: 8,
            norm_eps: 1e-6,
            rope_base: RopeTable::DEFAULT_BASE,
        }
    }
}

impl DitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::Config("at least one block is required".into()));
        }
        if self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.channels == 0 || self.mlp_hidden == 0 || self.time_freqs == 0 {
            return Err(Error::Config("channels, mlp_hidden and time_freqs must be positive".into()));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config("norm_eps must be positive".into()));
        }
        self.rope_table().map(|_| ())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn rope_table(&self) -> Result<RopeTable> {
        let t = RopeTable::for_head_dim(self.head_dim())?;
        RopeTable::new(t.head_dim(), t.groups(), self.rope_base)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub attn: AttentionParams,
    pub norm_attn: Tensor,
    pub norm_mlp: Tensor,
    /// `[mlp_hidden, d_model]`
    pub mlp_in: Tensor,
    /// `[d_model, mlp_hidden]`
    pub mlp_out: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DitParams {
    pub config: DitConfig,
    pub blocks: Vec<BlockParams>,
    /// `[d_model, channels]`
    pub embed_image: Tensor,
    /// `[d_model, channels]`
    pub embed_text: Tensor,
    /// `[d_model, 2·time_freqs]`
    pub time_proj: Tensor,
    /// `[channels, d_model]`
    pub unembed: Tensor,
}

fn scaled_normal(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let fan_in = shape[1] as f64;
    rng.normal(shape).scale(1.0 / fan_in.sqrt())
}

impl DitParams {
    /// Gaussian weights scaled by `1/√fan_in`; unit norm gains.
    pub fn init(config: DitConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let (d, c, hid) = (config.d_model, config.channels, config.mlp_hidden);
        let blocks = (0..config.num_blocks)
            .map(|_| {
                let attn = AttentionParams::new(
                    scaled_normal(rng, &[d, d]),
                    scaled_normal(rng, &[d, d]),
                    scaled_normal(rng, &[d, d]),
                    scaled_normal(rng, &[d, d]),
                    config.num_heads,
                )?;
                Ok(BlockParams {
                    attn,
                    norm_attn: Tensor::ones(&[d]),
                    norm_mlp: Tensor::ones(&[d]),
                    mlp_in: scaled_normal(rng, &[hid, d]),
                    mlp_out: scaled_normal(rng, &[d, hid]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embed_image: scaled_normal(rng, &[d, c]),
            embed_text: scaled_normal(rng, &[d, c]),
            time_proj: scaled_normal(rng, &[d, 2 * config.time_freqs]),
            unembed: scaled_normal(rng, &[c, d]),
            config,
            blocks,
        })
    }

    /// Zeroes every block weight (attention and MLP) while keeping embeddings,
    /// so each block reduces to its residual connections.
    pub fn zero_blocks(&mut self) {
        for b in &mut self.blocks {
            for w in [&mut b.attn.w_q, &mut b.attn.w_k, &mut b.attn.w_v, &mut b.attn.w_o, &mut b.mlp_in, &mut b.mlp_out] {
                *w = Tensor::zeros(w.shape());
            }
        }
    }

    /// Every tensor with a stable name, for checkpointing.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("embed_image".into(), &self.embed_image),
            ("embed_text".into(), &self.embed_text),
            ("time_proj".into(), &self.time_proj),
            ("unembed".into(), &self.unembed),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{i}.w_q"), &b.attn.w_q));
            out.push((format!("blocks.{i}.w_k"), &b.attn.w_k));
            out.push((format!("blocks.{i}.w_v"), &b.attn.w_v));
            out.push((format!("blocks.{i}.w_o"), &b.attn.w_o));
            out.push((format!("blocks.{i}.norm_attn"), &b.norm_attn));
            out.push((format!("blocks.{i}.norm_mlp"), &b.norm_mlp));
            out.push((format!("blocks.{i}.mlp_in"), &b.mlp_in));
            out.push((format!("blocks.{i}.mlp_out"), &b.mlp_out));
        }
        out
    }

    pub fn attention_weight(&self, block: usize, target: LoraTarget) -> &Tensor {
        let a = &self.blocks[block].attn;
        match target {
            LoraTarget::Query => &a.w_q,
            LoraTarget::Key => &a.w_k,
            LoraTarget::Value => &a.w_v,
            LoraTarget::Output => &a.w_o,
        }
    }

    pub fn attention_weight_mut(&mut self, block: usize, target: LoraTarget) -> &mut Tensor {
        let a = &mut self.blocks[block].attn;
        match target {
            LoraTarget::Query => &mut a.w_q,
            LoraTarget::Key => &mut a.w_k,
            LoraTarget::Value => &mut a.w_v,
            LoraTarget::Output => &mut a.w_o,
        }
    }
}

/// `[sin(1000·t·ω_k), cos(1000·t·ω_k)]` with `ω_k = 10000^(-k/F)`.
pub fn time_features(t: f64, freqs: usize) -> Tensor {
    let mut v = Vec::with_capacity(2 * freqs);
    for k in 0..freqs {
        let w = 10_000f64.powf(-(k as f64) / freqs as f64);
        v.push((1000.0 * t * w).sin());
    }
    for k in 0..freqs {
        let w = 10_000f64.powf(-(k as f64) / freqs as f64);
        v.push((1000.0 * t * w).cos());
    }
    Tensor::new(vec![1, 2 * freqs], v).expect("length matches")
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions<'a> {
    pub adapter: Option<&'a LoraAdapter>,
    /// One entry per block, `layer_id` equal to the block index.
    pub mixing: Option<&'a [SourceKv]>,
    /// Record each block's noise-span keys (after rotary) and values.
    pub capture_kv: bool,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[noise_tokens, channels]`
    pub velocity: Tensor,
    pub captured: Vec<SourceKv>,
    pub adapter_active: bool,
}

#[derive(Debug, Clone)]
struct BlockCache {
    h_in: Tensor,
    n1: Tensor,
    weights: [Tensor; 4],
    q_rot: Tensor,
    k_all: Tensor,
    v_all: Tensor,
    probs: Vec<Tensor>,
    heads: Tensor,
    h_mid: Tensor,
    pre: Tensor,
}

/// Activations retained by [`dit_forward_cached`].
#[derive(Debug, Clone)]
pub struct DitCache {
    blocks: Vec<BlockCache>,
    packed: PackedSequence,
    h_final: Tensor,
    adapter_active: bool,
}

fn embed(packed: &PackedSequence, params: &DitParams, t: f64) -> Result<Tensor> {
    let x = packed.tokens();
    if x.cols() != params.config.channels {
        return Err(Error::dim("dit_forward", x.shape(), params.embed_image.shape()));
    }
    let img = x.matmul_t(&params.embed_image)?;
    let txt = x.matmul_t(&params.embed_text)?;
    let time = time_features(t, params.config.time_freqs).matmul_t(&params.time_proj)?;
    let text_span = packed.text_span();
    let d = params.config.d_model;
    let mut h = Tensor::zeros(&[x.rows(), d]);
    for r in 0..x.rows() {
        let src = if r < text_span.end { txt.row(r) } else { img.row(r) };
        let out = h.row_mut(r);
        for c in 0..d {
            out[c] = src[c] + time.at(0, c);
        }
    }
    Ok(h)
}

fn effective_weights(params: &DitParams, block: usize, adapter: Option<&LoraAdapter>) -> Result<[Tensor; 4]> {
    let mut out: [Tensor; 4] = std::array::from_fn(|i| params.attention_weight(block, LoraTarget::ALL[i]).clone());
    if let Some(a) = adapter {
        for (i, target) in LoraTarget::ALL.iter().enumerate() {
            out[i] = apply_lora(&out[i], a.pair(block, *target), a.alpha())?;
        }
    }
    Ok(out)
}

fn run(packed: &PackedSequence, params: &DitParams, t: f64, opts: &ForwardOptions<'_>) -> Result<(ForwardOutput, DitCache)> {
    let cfg = &params.config;
    if params.blocks.len() != cfg.num_blocks {
        return Err(Error::Config("block count does not match configuration".into()));
    }
    let adapter_active = opts.adapter.is_some() && lora_gate(packed);
    let adapter = if adapter_active { opts.adapter } else { None };
    if let Some(a) = adapter {
        if a.num_blocks() != cfg.num_blocks {
            return Err(Error::Config(format!(
                "adapter has {} blocks, model has {}",
                a.num_blocks(),
                cfg.num_blocks
            )));
        }
    }
    if let Some(m) = opts.mixing {
        if m.len() != cfg.num_blocks {
            return Err(Error::Contract(format!(
                "{} source K/V entries for {} blocks",
                m.len(),
                cfg.num_blocks
            )));
        }
    }
    let table = cfg.rope_table()?;
    let coords = packed.coords();
    let noise = packed.noise_span();
    let mut h = embed(packed, params, t)?;
    let mut caches = Vec::with_capacity(cfg.num_blocks);
    let mut captured = Vec::new();

    for (b, block) in params.blocks.iter().enumerate() {
        let n1 = rms_norm(&h, &block.norm_attn, cfg.norm_eps)?;
        let weights = effective_weights(params, b, adapter)?;
        let q = n1.matmul_t(&weights[0])?;
        let k = n1.matmul_t(&weights[1])?;
        let v = n1.matmul_t(&weights[2])?;
        let q_rot = rope_rotate_heads(&q, coords, &table, false)?;
        let k_rot = rope_rotate_heads(&k, coords, &table, false)?;
        if opts.capture_kv {
            captured.push(SourceKv::new(
                k_rot.slice_rows(noise.start, noise.end)?,
                v.slice_rows(noise.start, noise.end)?,
                b,
            )?);
        }
        let (k_all, v_all) = match opts.mixing {
            Some(m) => {
                let src = &m[b];
                if src.layer_id != b {
                    return Err(Error::Contract(format!(
                        "source K/V from layer {} offered to layer {b}",
                        src.layer_id
                    )));
                }
                if src.k.shape() != src.v.shape() {
                    return Err(Error::Contract("source key/value lengths differ".into()));
                }
                (Tensor::concat_rows(&[&k_rot, &src.k])?, Tensor::concat_rows(&[&v, &src.v])?)
            }
            None => (k_rot, v),
        };
        let fwd = attend_heads(&q_rot, &k_all, &v_all, cfg.num_heads)?;
        let mut h_mid = h.clone();
        h_mid.add_assign(&fwd.heads.matmul_t(&weights[3])?)?;

        let n2 = rms_norm(&h_mid, &block.norm_mlp, cfg.norm_eps)?;
        let pre = n2.matmul_t(&block.mlp_in)?;
        let act = pre.map(silu);
        let mut h_out = h_mid.clone();
        h_out.add_assign(&act.matmul_t(&block.mlp_out)?)?;

        caches.push(BlockCache {
            h_in: h,
            n1,
            weights,
            q_rot,
            k_all,
            v_all,
            probs: fwd.probs,
            heads: fwd.heads,
            h_mid,
            pre,
        });
        h = h_out;
    }

    let velocity = h.slice_rows(noise.start, noise.end)?.matmul_t(&params.unembed)?;
    if !velocity.all_finite() {
        return Err(Error::NonFinite("dit_forward produced a non-finite velocity".into()));
    }
    Ok((
        ForwardOutput {
            velocity,
            captured,
            adapter_active,
        },
        DitCache {
            blocks: caches,
            packed: packed.clone(),
            h_final: h,
            adapter_active,
        },
    ))
}

/// Velocity prediction over the noise span. The adapter is used only when
/// [`lora_gate`] is true for `packed`.
pub fn dit_forward(packed: &PackedSequence, params: &DitParams, adapter: Option<&LoraAdapter>, t: f64) -> Result<Tensor> {
    let opts = ForwardOptions {
        adapter,
        ..Default::default()
    };
    Ok(run(packed, params, t, &opts)?.0.velocity)
}

pub fn dit_forward_with(packed: &PackedSequence, params: &DitParams, t: f64, opts: &ForwardOptions<'_>) -> Result<ForwardOutput> {
    Ok(run(packed, params, t, opts)?.0)
}

pub fn dit_forward_cached(packed: &PackedSequence, params: &DitParams, t: f64, opts: &ForwardOptions<'_>) -> Result<(ForwardOutput, DitCache)> {
    run(packed, params, t, opts)
}

/// Gradients from [`dit_backward`].
#[derive(Debug, Clone)]
pub struct DitGrads {
    /// Per block, gradients of the effective `w_q, w_k, w_v, w_o` (equal to the
    /// gradients of the frozen base weights).
    pub attention: Vec<[Tensor; 4]>,
    /// Present when the adapter was active in the forward pass. `a`/`b` hold
    /// the gradients of the corresponding factors.
    pub adapter: Option<Vec<[LoraPair; 4]>>,
}

/// Backpropagates `∂loss/∂velocity` to the attention weights and, if it was
/// active, the adapter.
pub fn dit_backward(cache: &DitCache, params: &DitParams, adapter: Option<&LoraAdapter>, grad_velocity: &Tensor) -> Result<DitGrads> {
    let cfg = &params.config;
    let noise = cache.packed.noise_span();
    if grad_velocity.shape() != [noise.len(), cfg.channels] {
        return Err(Error::Contract(format!(
            "grad shape {:?} does not match velocity [{}, {}]",
            grad_velocity.shape(),
            noise.len(),
            cfg.channels
        )));
    }
    if cache.adapter_active && adapter.is_none() {
        return Err(Error::Contract("forward used an adapter but backward received none".into()));
    }
    let table = cfg.rope_table()?;
    let coords = cache.packed.coords();

    let mut dh = Tensor::zeros(cache.h_final.shape());
    let d_noise = grad_velocity.matmul(&params.unembed)?;
    for r in 0..noise.len() {
        dh.row_mut(noise.start + r).copy_from_slice(d_noise.row(r));
    }

    let mut attn_grads = vec![None; cfg.num_blocks];
    let mut lora_grads = vec![None; cfg.num_blocks];
    for (b, bc) in cache.blocks.iter().enumerate().rev() {
        let block = &params.blocks[b];
        // MLP branch
        let d_act = dh.matmul(&block.mlp_out)?;
        let d_pre = Tensor::new(
            d_act.shape().to_vec(),
            d_act.data().iter().zip(bc.pre.data()).map(|(g, x)| g * silu_grad(*x)).collect(),
        )?;
        let d_n2 = d_pre.matmul(&block.mlp_in)?;
        let (dx2, _) = rms_norm_backward(&bc.h_mid, &block.norm_mlp, cfg.norm_eps, &d_n2)?;
        let mut dh_mid = dh;
        dh_mid.add_assign(&dx2)?;

        // attention branch
        let l = bc.q_rot.rows();
        let d_wo = dh_mid.t_matmul(&bc.heads)?;
        let d_heads = dh_mid.matmul(&bc.weights[3])?;
        let (dq_rot, dk_all, dv_all) = attend_heads_backward(&bc.q_rot, &bc.k_all, &bc.v_all, &bc.probs, &d_heads)?;
        let dq = rope_rotate_heads(&dq_rot, coords, &table, true)?;
        let dk = rope_rotate_heads(&dk_all.slice_rows(0, l)?, coords, &table, true)?;
        let dv = dv_all.slice_rows(0, l)?;
        let d_wq = dq.t_matmul(&bc.n1)?;
        let d_wk = dk.t_matmul(&bc.n1)?;
        let d_wv = dv.t_matmul(&bc.n1)?;
        let mut d_n1 = dq.matmul(&bc.weights[0])?;
        d_n1.add_assign(&dk.matmul(&bc.weights[1])?)?;
        d_n1.add_assign(&dv.matmul(&bc.weights[2])?)?;
        let (dx1, _) = rms_norm_backward(&bc.h_in, &block.norm_attn, cfg.norm_eps, &d_n1)?;
        dh = dh_mid;
        dh.add_assign(&dx1)?;

        let grads = [d_wq, d_wk, d_wv, d_wo];
        if cache.adapter_active {
            let a = adapter.expect("checked above");
            let s = a.scale();
            let pairs: [LoraPair; 4] = std::array::from_fn(|i| {
                let p = a.pair(b, LoraTarget::ALL[i]);
                let g = &grads[i];
                LoraPair {
                    a: p.b.t_matmul(g).expect("shapes fixed").scale(s),
                    b: g.matmul_t(&p.a).expect("shapes fixed").scale(s),
                }
            });
            lora_grads[b] = Some(pairs);
        }
        attn_grads[b] = Some(grads);
    }

    Ok(DitGrads {
        attention: attn_grads.into_iter().map(|g| g.expect("every block visited")).collect(),
        adapter: if cache.adapter_active {
            Some(lora_grads.into_iter().map(|g| g.expect("every block visited")).collect())
        } else {
            None
        },
    })
}
