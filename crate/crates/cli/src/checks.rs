//! Runtime property suite for the mixing attention layer.

use std::str::FromStr;

use refmix_core::attention::{
    attend_heads, attention_backward, mixed_attention, mixed_attention_forward, project_qkv, AttentionParams,
    BranchTag, BranchTokens, SourceKv,
};
use refmix_core::{Result, SeededRng, Tensor};

type ParamField = fn(&mut AttentionParams) -> &mut Tensor;
type SourceField = fn(&mut SourceKv) -> &mut Tensor;

/// Deliberate corruption of the layer output, for exercising the failure path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    SignFlip,
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sign-flip" => Ok(Fault::SignFlip),
            other => Err(format!("unknown fault `{other}` (expected sign-flip)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl PropertyResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "name": self.name,
            "passed": self.passed,
            "instances": self.instances,
            "max_error": self.max_error,
            "tolerance": self.tolerance,
        })
    }
}

struct Layer {
    tokens: BranchTokens,
    params: AttentionParams,
    source: SourceKv,
}

/// `d_model ≤ 16`, at most 8 target tokens, up to `max_source` source tokens.
fn random_layer(rng: &mut SeededRng, max_source: usize) -> Result<Layer> {
    let heads = [1, 2, 4][rng.below(3)];
    let d = heads * (1 + rng.below(16 / heads));
    let noise = 1 + rng.below(6);
    let text = rng.below(9 - noise);
    let src = if max_source == 0 { 0 } else { 1 + rng.below(max_source) };
    let tokens = BranchTokens::new(rng.normal(&[text, d]), rng.normal(&[noise, d]), BranchTag::Target)?;
    let params = AttentionParams::random(rng, d, heads, 0.6)?;
    let source = if src == 0 {
        SourceKv::empty(d, 0)
    } else {
        SourceKv::new(rng.normal(&[src, d]), rng.normal(&[src, d]), 0)?
    };
    Ok(Layer { tokens, params, source })
}

fn apply(fault: Option<Fault>, t: Tensor) -> Tensor {
    match fault {
        Some(Fault::SignFlip) => t.scale(-1.0),
        None => t,
    }
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Neumaier-compensated sum.
fn comp_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// `x · Wᵀ` with compensated dot products.
fn linear(x: &[Vec<f64>], w: &Tensor) -> Vec<Vec<f64>> {
    let w = rows(w);
    x.iter()
        .map(|r| w.iter().map(|wr| comp_sum(r.iter().zip(wr).map(|(a, b)| a * b))).collect())
        .collect()
}

/// Direct evaluation of the mixing formula, independent of the library's
/// kernels.
fn oracle(layer: &Layer) -> Vec<Vec<f64>> {
    let p = &layer.params;
    let x: Vec<Vec<f64>> = rows(layer.tokens.noise()).into_iter().chain(rows(layer.tokens.text())).collect();
    let q = linear(&x, &p.w_q);
    let mut k = linear(&x, &p.w_k);
    let mut v = linear(&x, &p.w_v);
    k.extend(rows(&layer.source.k));
    v.extend(rows(&layer.source.v));
    let dm = p.d_model();
    let hd = dm / p.num_heads();
    let mut heads = vec![vec![0.0; dm]; q.len()];
    for h in 0..p.num_heads() {
        let cols = h * hd..(h + 1) * hd;
        for (i, qi) in q.iter().enumerate() {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| comp_sum(cols.clone().map(|c| qi[c] * kj[c])) / (hd as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z = comp_sum(e.iter().copied());
            for c in cols.clone() {
                heads[i][c] = comp_sum(e.iter().zip(&v).map(|(w, vj)| w * vj[c])) / z;
            }
        }
    }
    linear(&heads, &p.w_o)
}

fn result(name: &'static str, instances: usize, max_error: f64, tolerance: f64, exact: bool) -> PropertyResult {
    let passed = if exact { max_error == 0.0 } else { max_error <= tolerance };
    PropertyResult {
        name,
        passed,
        instances,
        max_error,
        tolerance,
    }
}

/// With no source tokens the layer is ordinary attention over the target,
/// bit for bit.
pub fn empty_source_reduction(rng: &mut SeededRng, instances: usize, fault: Option<Fault>) -> Result<PropertyResult> {
    let mut worst = 0.0f64;
    let mut identical = true;
    for _ in 0..instances {
        let layer = random_layer(rng, 0)?;
        let qkv = project_qkv(&layer.tokens, &layer.params)?;
        let mixed = apply(fault, mixed_attention(&qkv, &layer.source, &layer.params)?);
        let plain = attend_heads(&qkv.q, &qkv.k, &qkv.v, layer.params.num_heads())?.heads.matmul_t(&layer.params.w_o)?;
        identical &= mixed.shape() == plain.shape()
            && mixed.data().iter().zip(plain.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        worst = worst.max(max_abs_diff(&mixed, &plain));
    }
    let mut r = result("empty-source-reduction", instances, worst, 0.0, true);
    r.passed = identical;
    Ok(r)
}

pub fn oracle_equivalence(rng: &mut SeededRng, instances: usize, fault: Option<Fault>) -> Result<PropertyResult> {
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let layer = random_layer(rng, 8)?;
        let qkv = project_qkv(&layer.tokens, &layer.params)?;
        let out = apply(fault, mixed_attention(&qkv, &layer.source, &layer.params)?);
        let want = Tensor::from_rows(&oracle(&layer))?;
        worst = worst.max(max_abs_diff(&out, &want));
    }
    Ok(result("oracle-equivalence", instances, worst, 1e-12, false))
}

pub fn row_stochastic(rng: &mut SeededRng, instances: usize) -> Result<PropertyResult> {
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let layer = random_layer(rng, 8)?;
        let (_, cache) = mixed_attention_forward(&layer.tokens, &layer.source, &layer.params)?;
        for p in cache.probs() {
            for i in 0..p.rows() {
                worst = worst.max((p.row(i).iter().sum::<f64>() - 1.0).abs());
                if p.row(i).iter().any(|x| *x < 0.0) {
                    worst = f64::INFINITY;
                }
            }
        }
    }
    Ok(result("row-stochastic", instances, worst, 1e-12, false))
}

/// Reordering source tokens (keys and values together) leaves the output
/// unchanged up to summation order.
pub fn source_permutation(rng: &mut SeededRng, instances: usize, fault: Option<Fault>) -> Result<PropertyResult> {
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let layer = random_layer(rng, 8)?;
        let n = layer.source.len();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let pick = |t: &Tensor| Tensor::from_rows(&order.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>());
        let permuted = SourceKv::new(pick(&layer.source.k)?, pick(&layer.source.v)?, 0)?;
        let qkv = project_qkv(&layer.tokens, &layer.params)?;
        let a = mixed_attention(&qkv, &layer.source, &layer.params)?;
        // the fault corrupts only the permuted evaluation
        let b = apply(fault, mixed_attention(&qkv, &permuted, &layer.params)?);
        worst = worst.max(max_abs_diff(&a, &b));
    }
    Ok(result("source-permutation-invariance", instances, worst, 1e-10, false))
}

fn central(f: impl Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

/// Analytic weight and source-KV gradients against central differences of
/// `sum(out ⊙ G)`.
pub fn gradient_fidelity(rng: &mut SeededRng, instances: usize, fault: Option<Fault>) -> Result<PropertyResult> {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let mut worst = 0.0f64;
    let mut probes = 0;
    for _ in 0..instances {
        let layer = random_layer(rng, 4)?;
        let (out, cache) = mixed_attention_forward(&layer.tokens, &layer.source, &layer.params)?;
        let g = rng.normal(out.shape());
        let grads = attention_backward(&cache, &layer.params, &g)?;
        let loss = |params: &AttentionParams, source: &SourceKv| -> Result<f64> {
            let (o, _) = mixed_attention_forward(&layer.tokens, source, params)?;
            Ok(o.mul(&g)?.sum())
        };
        let weights: [(&Tensor, ParamField); 4] = [
            (&grads.d_w_q, |p| &mut p.w_q),
            (&grads.d_w_k, |p| &mut p.w_k),
            (&grads.d_w_v, |p| &mut p.w_v),
            (&grads.d_w_o, |p| &mut p.w_o),
        ];
        for (analytic, field) in weights {
            let analytic = apply(fault, analytic.clone());
            for i in 0..analytic.len() {
                let x = field(&mut layer.params.clone()).data()[i];
                let fd = central(
                    |v| {
                        let mut p = layer.params.clone();
                        field(&mut p).data_mut()[i] = v;
                        loss(&p, &layer.source)
                    },
                    x,
                    STEP,
                )?;
                worst = worst.max((analytic.data()[i] - fd).abs() / fd.abs().max(FLOOR));
                probes += 1;
            }
        }
        let sources: [(&Tensor, SourceField); 2] =
            [(&grads.d_k_src, |s| &mut s.k), (&grads.d_v_src, |s| &mut s.v)];
        for (analytic, field) in sources {
            let analytic = apply(fault, analytic.clone());
            for i in 0..analytic.len() {
                let x = field(&mut layer.source.clone()).data()[i];
                let fd = central(
                    |v| {
                        let mut s = layer.source.clone();
                        field(&mut s).data_mut()[i] = v;
                        loss(&layer.params, &s)
                    },
                    x,
                    STEP,
                )?;
                worst = worst.max((analytic.data()[i] - fd).abs() / fd.abs().max(FLOOR));
                probes += 1;
            }
        }
    }
    Ok(result("gradient-fidelity", probes, worst, 1e-5, false))
}

/// The full suite as `attn-check` runs it.
pub fn run_suite(seed: u64, fault: Option<Fault>) -> Result<Vec<PropertyResult>> {
    let mut rng = SeededRng::new(seed);
    Ok(vec![
        empty_source_reduction(&mut rng.split(), 1000, fault)?,
        oracle_equivalence(&mut rng.split(), 100, fault)?,
        row_stochastic(&mut rng.split(), 200)?,
        source_permutation(&mut rng.split(), 200, fault)?,
        gradient_fidelity(&mut rng.split(), 6, fault)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_fault_is_caught() {
        let clean = run_suite(1, None).unwrap();
        assert!(clean.iter().all(|r| r.passed), "{clean:?}");
        let faulty = run_suite(1, Some(Fault::SignFlip)).unwrap();
        let failed: Vec<_> = faulty.iter().filter(|r| !r.passed).map(|r| r.name).collect();
        assert!(failed.contains(&"oracle-equivalence") && failed.contains(&"gradient-fidelity"), "{failed:?}");
        assert!(!failed.contains(&"row-stochastic"));
    }
}
