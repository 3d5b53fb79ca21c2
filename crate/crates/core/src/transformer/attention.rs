use std::ops::Range;

use super::flops::FlopCounter;
use super::params::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::ops::{add_bias, gemm_acc, gemm_nt, layernorm, softmax_in_place};
use crate::tensor::Tensor;

/// Which tokens attend to which: every token attends within its group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttentionScope {
    /// One group over all tokens.
    Global,
    /// Consecutive non-overlapping groups of this many tokens.
    Windows(usize),
}

impl AttentionScope {
    fn groups(&self, tokens: usize) -> Result<Vec<Range<usize>>> {
        match *self {
            #[allow(clippy::single_range_in_vec_init)]
            AttentionScope::Global => Ok(vec![0..tokens]),
            AttentionScope::Windows(w) => {
                if w == 0 || !tokens.is_multiple_of(w) {
                    return Err(Error::Config(format!(
                        "window {w} does not divide {tokens} tokens"
                    )));
                }
                Ok((0..tokens / w).map(|i| i * w..(i + 1) * w).collect())
            }
        }
    }
}

/// Output of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub tokens: Tensor,
    /// Queries `T×c` as used for the logits.
    pub q: Tensor,
    /// Keys `T×c` after gating.
    pub k: Tensor,
    /// Pre-softmax logits per group then head, when requested.
    pub logits: Vec<Tensor>,
}

fn project(x: &Tensor, w: &Tensor, counter: &mut FlopCounter) -> Tensor {
    let (t, c) = (x.shape()[0], x.shape()[1]);
    let n = w.shape()[1];
    let mut out = vec![0.0; t * n];
    counter.proj += gemm_acc(x.data(), w.data(), &mut out, t, c, n);
    Tensor::from_parts(vec![t, n], out)
}

fn head_slice(m: &Tensor, rows: &Range<usize>, h: usize, dh: usize) -> Vec<f64> {
    let c = m.shape()[1];
    let mut out = Vec::with_capacity(rows.len() * dh);
    for r in rows.clone() {
        out.extend_from_slice(&m.data()[r * c + h * dh..r * c + (h + 1) * dh]);
    }
    out
}

/// Pre-norm multi-head self-attention plus a ReLU MLP, both residual.
///
/// `key_gate[i]` zeroes key row `i` after projection, so every logit toward
/// a gated token is exactly zero.
pub fn attention_layer(
    tokens: &Tensor,
    p: &LayerParams,
    heads: usize,
    scope: &AttentionScope,
    key_gate: Option<&[bool]>,
    record_logits: bool,
    counter: &mut FlopCounter,
) -> Result<LayerOutput> {
    let c = p.channels();
    if tokens.rank() != 2 || tokens.shape()[1] != c {
        return Err(Error::shape(
            "attention_layer",
            tokens.shape(),
            p.q_proj.shape(),
        ));
    }
    if heads == 0 || !c.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "{heads} heads do not divide {c} channels"
        )));
    }
    let t = tokens.shape()[0];
    if let Some(g) = key_gate {
        if g.len() != t {
            return Err(Error::shape("attention_layer key gate", &[g.len()], &[t]));
        }
    }
    let groups = scope.groups(t)?;
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let h1 = layernorm(tokens, &p.ln1_gain, &p.ln1_bias)?;
    let q = project(&h1, &p.q_proj, counter);
    let mut k = project(&h1, &p.k_proj, counter);
    let v = project(&h1, &p.v_proj, counter);
    if let Some(g) = key_gate {
        let kd = k.data_mut();
        for (i, _) in g.iter().enumerate().filter(|(_, &gated)| gated) {
            kd[i * c..(i + 1) * c].fill(0.0);
        }
    }

    let mut mixed = vec![0.0; t * c];
    let mut logits = Vec::new();
    for rows in &groups {
        let n = rows.len();
        for h in 0..heads {
            let qh = head_slice(&q, rows, h, dh);
            let kh = head_slice(&k, rows, h, dh);
            let vh = head_slice(&v, rows, h, dh);
            let mut s = vec![0.0; n * n];
            counter.qk += gemm_nt(&qh, &kh, &mut s, n, dh, n);
            for x in s.iter_mut() {
                *x *= scale;
            }
            if record_logits {
                logits.push(Tensor::from_parts(vec![n, n], s.clone()));
            }
            for row in s.chunks_mut(n) {
                softmax_in_place(row);
            }
            let mut a = vec![0.0; n * dh];
            counter.av += gemm_acc(&s, &vh, &mut a, n, n, dh);
            for (i, r) in rows.clone().enumerate() {
                mixed[r * c + h * dh..r * c + (h + 1) * dh]
                    .copy_from_slice(&a[i * dh..(i + 1) * dh]);
            }
        }
    }
    let attn = project(&Tensor::from_parts(vec![t, c], mixed), &p.o_proj, counter);
    let x1 = tokens.zip_map(&attn, "attention residual", |a, b| a + b)?;

    let h2 = layernorm(&x1, &p.ln2_gain, &p.ln2_bias)?;
    let hidden = p.mlp_in.shape()[1];
    let mut z = vec![0.0; t * hidden];
    counter.mlp += gemm_acc(h2.data(), p.mlp_in.data(), &mut z, t, c, hidden);
    let z = add_bias(&Tensor::from_parts(vec![t, hidden], z), &p.mlp_in_bias)?.map(|v| v.max(0.0));
    let mut m = vec![0.0; t * c];
    counter.mlp += gemm_acc(z.data(), p.mlp_out.data(), &mut m, t, hidden, c);
    let m = add_bias(&Tensor::from_parts(vec![t, c], m), &p.mlp_out_bias)?;
    let out = x1.zip_map(&m, "mlp residual", |a, b| a + b)?;
    Ok(LayerOutput {
        tokens: out,
        q,
        k,
        logits,
    })
}
