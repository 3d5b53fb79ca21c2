use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Affine rescale to `[0, 1]`; a constant input maps to all zeros.
pub fn min_max_normalize(x: &Tensor) -> Tensor {
    let (lo, hi) = (x.min(), x.max());
    if !(hi > lo) {
        return Tensor::zeros(x.shape());
    }
    x.map(|v| (v - lo) / (hi - lo))
}

/// `(1 - S_kk) ⊙ V_qk`, with `V_qk` already normalised.
pub fn prior_shallow(s_kk: &Tensor, v_qk: &Tensor) -> Result<Tensor> {
    s_kk.zip_map(v_qk, "prior_shallow", |s, v| (1.0 - s) * v)
}

/// `1 - S_qq`.
pub fn prior_middle(s_qq: &Tensor) -> Tensor {
    s_qq.map(|s| 1.0 - s)
}

/// `(1 - V_qq) ⊙ S_qq`, with `V_qq` already normalised.
pub fn prior_deep(v_qq: &Tensor, s_qq: &Tensor) -> Result<Tensor> {
    v_qq.zip_map(s_qq, "prior_deep", |v, s| (1.0 - v) * s)
}

/// How the fused `K×K` prior product becomes one score per token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Mean over the reference view's row.
    Row,
    /// Mean over the neighbour-view column.
    #[default]
    Column,
    /// Average of the row and column means.
    Both,
}

/// Per-token saliency and whether min-max normalisation degenerated.
#[derive(Debug, Clone, PartialEq)]
pub struct Saliency {
    pub scores: Tensor,
    pub degenerate: bool,
}

/// Elementwise product of the priors, reduced per token, min-max scaled.
pub fn fuse_saliency_with(
    w_s: &Tensor,
    w_m: &Tensor,
    w_d: &Tensor,
    reduction: Reduction,
) -> Result<Saliency> {
    let prod = w_s.zip_map(w_m, "fuse_saliency", |a, b| a * b)?;
    let prod = prod.zip_map(w_d, "fuse_saliency", |a, b| a * b)?;
    if prod.rank() != 2 || prod.shape()[0] != prod.shape()[1] {
        return Err(Error::Usage(format!(
            "fuse_saliency needs square priors, got {:?}",
            prod.shape()
        )));
    }
    let k = prod.shape()[0];
    let row = |i: usize| prod.row(i).iter().sum::<f64>() / k as f64;
    let col = |j: usize| (0..k).map(|i| prod.data()[i * k + j]).sum::<f64>() / k as f64;
    let raw = Tensor::from_fn(&[k], |i| match reduction {
        Reduction::Row => row(i),
        Reduction::Column => col(i),
        Reduction::Both => 0.5 * (row(i) + col(i)),
    });
    let degenerate = !(raw.max() > raw.min());
    Ok(Saliency {
        scores: min_max_normalize(&raw),
        degenerate,
    })
}

/// Row-mean reduction of the fused priors.
pub fn fuse_saliency(w_s: &Tensor, w_m: &Tensor, w_d: &Tensor) -> Result<Saliency> {
    fuse_saliency_with(w_s, w_m, w_d, Reduction::Row)
}
