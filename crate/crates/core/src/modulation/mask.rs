use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{reprojection_residuals, Camera};
use crate::tensor::Tensor;

/// Threshold rule: a fixed value, or a per-view quantile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMode {
    Fixed(f64),
    Quantile(f64),
}

impl Default for AlphaMode {
    fn default() -> Self {
        AlphaMode::Quantile(0.9)
    }
}

impl AlphaMode {
    pub fn validate(&self, field: &str) -> Result<()> {
        match *self {
            AlphaMode::Fixed(a) if !a.is_finite() => Err(Error::Config(format!(
                "{field}: fixed threshold {a} is not finite"
            ))),
            AlphaMode::Quantile(q) if !(q > 0.0 && q < 1.0) => Err(Error::Config(format!(
                "{field}: quantile {q} is outside (0, 1)"
            ))),
            _ => Ok(()),
        }
    }
}

/// Tokens kept above a `q` quantile of `n` values: `⌈(1 - q)·n⌉`.
pub fn quantile_count(q: f64, n: usize) -> usize {
    (((1.0 - q) * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Threshold below which all but the `m` largest values fall.
fn top_m_threshold(values: &[f64], m: usize) -> f64 {
    if m == 0 {
        return f64::INFINITY;
    }
    if m >= values.len() {
        return f64::NEG_INFINITY;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[m]
}

fn check_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::Usage(format!(
            "{op} needs an N×K matrix, got {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `[saliency > α]` per view; returns the mask and each view's `α`.
pub fn initial_mask(saliency: &Tensor, mode: AlphaMode) -> Result<(Tensor, Vec<f64>)> {
    mode.validate("initial_mask")?;
    let (n, k) = check_matrix(saliency, "initial_mask")?;
    let mut mask = vec![0.0; n * k];
    let mut alphas = Vec::with_capacity(n);
    for t in 0..n {
        let row = saliency.row(t);
        let alpha = match mode {
            AlphaMode::Fixed(a) => a,
            AlphaMode::Quantile(q) => top_m_threshold(row, quantile_count(q, k)),
        };
        for (j, &s) in row.iter().enumerate() {
            mask[t * k + j] = if s > alpha { 1.0 } else { 0.0 };
        }
        alphas.push(alpha);
    }
    Ok((Tensor::from_parts(vec![n, k], mask), alphas))
}

/// How refinement combines the initial mask with high-distortion tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineMode {
    /// Add stable tokens whose distortion passes the threshold.
    #[default]
    Union,
    /// Drop masked tokens whose distortion does not pass the threshold.
    Subtract,
}

/// Refined mask plus warnings about degenerate views.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub mask: Tensor,
    pub warnings: Vec<String>,
}

/// Thresholds distortion among initially stable tokens of each view.
pub fn refine_mask(
    initial: &Tensor,
    distortion: &Tensor,
    mode: AlphaMode,
    semantics: RefineMode,
) -> Result<Refinement> {
    mode.validate("refine_mask")?;
    let (n, k) = check_matrix(initial, "refine_mask")?;
    if distortion.shape() != initial.shape() {
        return Err(Error::shape(
            "refine_mask",
            initial.shape(),
            distortion.shape(),
        ));
    }
    let mut out = initial.data().to_vec();
    let mut warnings = Vec::new();
    for t in 0..n {
        let m = initial.row(t);
        let d = distortion.row(t);
        let stable: Vec<f64> = (0..k).filter(|&j| m[j] < 0.5).map(|j| d[j]).collect();
        if stable.is_empty() {
            warnings.push(format!(
                "view {t}: every token is initially masked, refinement skipped"
            ));
            continue;
        }
        let threshold = match mode {
            AlphaMode::Fixed(a) => a,
            AlphaMode::Quantile(q) => top_m_threshold(&stable, quantile_count(q, stable.len())),
        };
        for j in 0..k {
            let masked = m[j] >= 0.5;
            match semantics {
                RefineMode::Union if !masked && d[j] > threshold => out[t * k + j] = 1.0,
                RefineMode::Subtract if masked && d[j] <= threshold => out[t * k + j] = 0.0,
                _ => {}
            }
        }
    }
    Ok(Refinement {
        mask: Tensor::from_parts(vec![n, k], out),
        warnings,
    })
}

/// Pixel-grid gradient magnitude by central differences, one-sided at borders.
fn gradient_norm(f: &[f64], h: usize, w: usize, y: usize, x: usize) -> f64 {
    let at = |yy: usize, xx: usize| f[yy * w + xx];
    let d = |lo: usize, hi: usize, get: &dyn Fn(usize) -> f64| {
        if hi == lo {
            0.0
        } else {
            (get(hi) - get(lo)) / (hi - lo) as f64
        }
    };
    let gx = d(x.saturating_sub(1), (x + 1).min(w - 1), &|xx| at(y, xx));
    let gy = d(y.saturating_sub(1), (y + 1).min(h - 1), &|yy| at(yy, x));
    (gx * gx + gy * gy).sqrt()
}

/// Projection-residual distortion per token.
///
/// For each pixel `p` of view `t` and every other view `i`, accumulates
/// `‖w_p·r_d·∇r_d‖/(N-1) + λ·‖w_p·r_c‖/(N-1)`, then averages over each
/// token's pixel footprint on the `grid` token layout. `stability` is
/// `N×K`, 1 for stable tokens.
pub fn aggregated_gradient(
    views: &[Tensor],
    cameras: &[Camera],
    depths: &[Tensor],
    stability: &Tensor,
    grid: (usize, usize),
    lambda: f64,
) -> Result<Tensor> {
    let n = views.len();
    if n < 2 {
        return Err(Error::InsufficientViews(n));
    }
    if cameras.len() != n || depths.len() != n {
        return Err(Error::shape(
            "aggregated_gradient",
            &[n],
            &[cameras.len(), depths.len()],
        ));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!(
            "modulation.lambda: {lambda} must be non-negative"
        )));
    }
    let (_, k) = check_matrix(stability, "aggregated_gradient")?;
    if stability.shape()[0] != n {
        return Err(Error::shape(
            "aggregated_gradient stability",
            stability.shape(),
            &[n, k],
        ));
    }
    let (h, w) = (views[0].shape()[0], views[0].shape()[1]);
    let (gh, gw) = grid;
    if gh * gw != k || gh == 0 || gw == 0 || h % gh != 0 || w % gw != 0 {
        return Err(Error::Config(format!(
            "cannot tile {h}×{w} pixels with a {gh}×{gw} token grid"
        )));
    }
    let (ph, pw) = (h / gh, w / gw);
    let norm = (n - 1) as f64;
    let mut out = vec![0.0; n * k];
    for t in 0..n {
        let mut acc = vec![0.0; h * w];
        for i in (0..n).filter(|&i| i != t) {
            let f = reprojection_residuals(
                &views[t],
                &views[i],
                &depths[t],
                &depths[i],
                &cameras[t],
                &cameras[i],
            )?;
            let rd = f.r_d.data();
            let rc = f.r_c.data();
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let wp = stability.data()[t * k + (y / ph) * gw + x / pw];
                    if wp == 0.0 {
                        continue;
                    }
                    acc[p] += (wp * rd[p]).abs() * gradient_norm(rd, h, w, y, x) / norm
                        + lambda * (wp * rc[p]).abs() / norm;
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                out[t * k + (y / ph) * gw + x / pw] += acc[y * w + x] / (ph * pw) as f64;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, k], out))
}

/// Zeroes the key rows of masked tokens.
pub fn gate_keys(keys: &Tensor, mask: &[bool]) -> Result<Tensor> {
    if keys.rank() != 2 || keys.shape()[0] != mask.len() {
        return Err(Error::shape("gate_keys", keys.shape(), &[mask.len()]));
    }
    let c = keys.shape()[1];
    let mut data = keys.data().to_vec();
    for (row, &m) in data.chunks_mut(c).zip(mask) {
        if m {
            row.fill(0.0);
        }
    }
    Ok(Tensor::from_parts(keys.shape().to_vec(), data))
}
