use std::collections::BTreeSet;
use std::f64::consts::PI;

use super::attention::{attention_layer, AttentionScope};
use super::flops::FlopCounter;
use super::params::{Head, StackParams};
use crate::error::{Error, Result};
use crate::tensor::ops::{bilinear_upsample, gemm_acc};
use crate::tensor::Tensor;

/// Peak amplitude of the sinusoidal positional code.
pub const POS_AMPLITUDE: f64 = 0.1;

/// Unit quaternion `(w, x, y, z)` followed by a translation.
pub type Pose = [f64; 7];

/// Fixed 2-D sinusoidal code of a `gh×gw` token grid, `K×c`.
///
/// Coordinates are normalised token centres in `(0, 1)`, so grids of
/// different density describe the same image positions consistently.
pub fn positional_code(gh: usize, gw: usize, c: usize) -> Tensor {
    let quarter = (c / 4).max(1);
    Tensor::from_fn(&[gh * gw, c], |idx| {
        let (tok, ch) = (idx / c, idx % c);
        let (i, j) = (tok / gw, tok % gw);
        let u = (j as f64 + 0.5) / gw as f64;
        let v = (i as f64 + 0.5) / gh as f64;
        let group = ch / quarter;
        let freq = ((ch % quarter) + 1) as f64 * 0.5;
        let arg = PI * freq * if group < 2 { u } else { v };
        POS_AMPLITUDE
            * if group.is_multiple_of(2) {
                arg.sin()
            } else {
                arg.cos()
            }
    })
}

fn check_divisible(image: &Tensor, patch: usize) -> Result<(usize, usize)> {
    if image.rank() != 3 || image.shape()[2] != 3 {
        return Err(Error::Usage(format!(
            "patchify needs an H×W×3 image, got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Config(format!(
            "image {h}×{w} is not divisible by patch {patch}"
        )));
    }
    Ok((h / patch, w / patch))
}

/// Flattened `patch×patch×3` blocks in raster order, `K×(patch²·3)`.
pub fn extract_patches(image: &Tensor, patch: usize) -> Result<Tensor> {
    let (gh, gw) = check_divisible(image, patch)?;
    let w = image.shape()[1];
    let d = patch * patch * 3;
    let mut out = Vec::with_capacity(gh * gw * d);
    for gi in 0..gh {
        for gj in 0..gw {
            for y in gi * patch..(gi + 1) * patch {
                let start = (y * w + gj * patch) * 3;
                out.extend_from_slice(&image.data()[start..start + patch * 3]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![gh * gw, d], out))
}

/// Patch tokens `embed`-projected plus an explicit positional code.
pub fn patchify_with_code(
    image: &Tensor,
    patch: usize,
    embed: &Tensor,
    code: &Tensor,
) -> Result<Tensor> {
    let patches = extract_patches(image, patch)?;
    let (k, d) = (patches.shape()[0], patches.shape()[1]);
    if embed.rank() != 2 || embed.shape()[0] != d {
        return Err(Error::shape(
            "patchify embed",
            patches.shape(),
            embed.shape(),
        ));
    }
    let c = embed.shape()[1];
    if code.shape() != [k, c] {
        return Err(Error::shape(
            "patchify positional code",
            code.shape(),
            &[k, c],
        ));
    }
    let mut out = code.data().to_vec();
    gemm_acc(patches.data(), embed.data(), &mut out, k, d, c);
    Ok(Tensor::from_parts(vec![k, c], out))
}

/// `K×c` tokens: flattened patches times `embed` plus [`positional_code`].
pub fn patchify(image: &Tensor, patch: usize, embed: &Tensor) -> Result<Tensor> {
    let (gh, gw) = check_divisible(image, patch)?;
    let c = embed.shape().get(1).copied().unwrap_or(0);
    patchify_with_code(image, patch, embed, &positional_code(gh, gw, c))
}

/// Key rows to zero: a token mask over all `N·K` tokens and the 1-based
/// layers it applies to.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyGate {
    pub mask: Vec<bool>,
    pub layers: BTreeSet<usize>,
}

impl KeyGate {
    /// Builds a gate from a binary `N×K` mask.
    pub fn new(
        mask: &Tensor,
        layers: impl IntoIterator<Item = usize>,
        depth: usize,
    ) -> Result<Self> {
        let layers: BTreeSet<usize> = layers.into_iter().collect();
        if let Some(&bad) = layers.iter().find(|&&l| l == 0 || l > depth) {
            return Err(Error::Config(format!(
                "gated layer {bad} is outside [1, {depth}]"
            )));
        }
        Ok(Self {
            mask: mask.data().iter().map(|&m| m > 0.5).collect(),
            layers,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty() || !self.mask.iter().any(|&m| m)
    }

    pub fn gates_layer(&self, layer: usize) -> bool {
        self.layers.contains(&layer)
    }
}

/// Per-layer, per-view queries and keys of a coarse pass; `q[l][t]` is
/// `K×c` for 0-based layer `l` and view `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct QKTrace {
    pub q: Vec<Vec<Tensor>>,
    pub k: Vec<Vec<Tensor>>,
}

impl QKTrace {
    pub fn layers(&self) -> usize {
        self.q.len()
    }

    pub fn views(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }

    pub fn tokens(&self) -> usize {
        self.q
            .first()
            .and_then(|v| v.first())
            .map_or(0, |t| t.shape()[0])
    }
}

#[derive(Debug, Clone, Default)]
pub struct CoarseOptions<'a> {
    pub gate: Option<&'a KeyGate>,
    pub record_logits: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseOutput {
    /// Per-view `gh×gw×c` feature grids.
    pub features: Vec<Tensor>,
    pub poses: Vec<Pose>,
    pub trace: QKTrace,
    /// Per layer, per head pre-softmax logits over all `N·K` tokens.
    pub logits: Vec<Vec<Tensor>>,
    pub flops: FlopCounter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerOutput {
    /// Per-view `H×W` depth.
    pub depths: Vec<Tensor>,
    pub poses: Vec<Pose>,
    pub flops: FlopCounter,
}

fn linear(x: &Tensor, head: &Head, counter: &mut FlopCounter) -> Vec<f64> {
    let (t, c) = (x.shape()[0], x.shape()[1]);
    let n = head.weight.shape()[1];
    let mut out: Vec<f64> = (0..t)
        .flat_map(|_| head.bias.data().iter().copied())
        .collect();
    counter.heads += gemm_acc(x.data(), head.weight.data(), &mut out, t, c, n);
    out
}

/// Mean-pooled tokens through a linear head, quaternion normalised.
pub fn pose_head(tokens: &Tensor, head: &Head, counter: &mut FlopCounter) -> Pose {
    let (k, c) = (tokens.shape()[0], tokens.shape()[1]);
    let mut pooled = vec![0.0; c];
    for row in tokens.data().chunks(c) {
        for (p, &v) in pooled.iter_mut().zip(row) {
            *p += v / k as f64;
        }
    }
    let raw = linear(&Tensor::from_parts(vec![1, c], pooled), head, counter);
    let mut pose = [0.0; 7];
    pose.copy_from_slice(&raw[..7]);
    let norm = pose[..4].iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for q in &mut pose[..4] {
            *q /= norm;
        }
    } else {
        pose[..4].copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
    }
    pose
}

fn split_views(x: &Tensor, views: usize) -> Vec<Tensor> {
    let k = x.shape()[0] / views;
    (0..views).map(|t| x.rows(t * k, (t + 1) * k)).collect()
}

/// Coarse global-attention stack over all views' low-resolution tokens.
pub fn run_coarse(
    views: &[Tensor],
    params: &StackParams,
    opts: &CoarseOptions,
) -> Result<CoarseOutput> {
    let cfg = &params.config;
    let n = views.len();
    if n == 0 {
        return Err(Error::InsufficientViews(0));
    }
    let expect = [cfg.low_height, cfg.low_width, 3];
    if let Some(bad) = views.iter().find(|v| v.shape() != expect) {
        return Err(Error::shape("run_coarse view", bad.shape(), &expect));
    }
    let k0 = cfg.low_tokens();
    if let Some(g) = opts.gate {
        if g.mask.len() != n * k0 {
            return Err(Error::shape(
                "run_coarse key gate",
                &[g.mask.len()],
                &[n * k0],
            ));
        }
        if let Some(&bad) = g.layers.iter().find(|&&l| l == 0 || l > cfg.depth_coarse) {
            return Err(Error::Config(format!(
                "gated layer {bad} is outside [1, {}]",
                cfg.depth_coarse
            )));
        }
    }
    let mut flops = FlopCounter::default();
    let mut per_view = Vec::with_capacity(n);
    for v in views {
        per_view.push(patchify(v, cfg.patch, &params.embed)?);
        flops.heads += (k0 * cfg.patch * cfg.patch * 3 * cfg.channels) as u64;
    }
    let mut x = Tensor::vstack(&per_view)?;
    let mut trace = QKTrace {
        q: Vec::with_capacity(cfg.depth_coarse),
        k: Vec::with_capacity(cfg.depth_coarse),
    };
    let mut logits = Vec::new();
    for (l, lp) in params.coarse.iter().enumerate() {
        let gate = opts
            .gate
            .filter(|g| g.gates_layer(l + 1))
            .map(|g| g.mask.as_slice());
        let out = attention_layer(
            &x,
            lp,
            cfg.heads,
            &AttentionScope::Global,
            gate,
            opts.record_logits,
            &mut flops,
        )?;
        trace.q.push(split_views(&out.q, n));
        trace.k.push(split_views(&out.k, n));
        if opts.record_logits {
            logits.push(out.logits);
        }
        x = out.tokens;
    }
    let (gh, gw) = cfg.low_grid();
    let mut features = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n);
    for tok in split_views(&x, n) {
        poses.push(pose_head(&tok, &params.coarse_pose, &mut flops));
        features.push(tok.into_reshaped(&[gh, gw, cfg.channels])?);
    }
    Ok(CoarseOutput {
        features,
        poses,
        trace,
        logits,
        flops,
    })
}

/// Windowed within-view refiner over upsampled feature grids, with depth
/// and pose heads.
pub fn run_refiner(f_hr: &[Tensor], params: &StackParams) -> Result<RefinerOutput> {
    let cfg = &params.config;
    let n = f_hr.len();
    if n == 0 {
        return Err(Error::InsufficientViews(0));
    }
    let (gh, gw) = cfg.high_grid();
    let c = cfg.channels;
    let expect = [gh, gw, c];
    if let Some(bad) = f_hr.iter().find(|f| f.shape() != expect) {
        return Err(Error::shape("run_refiner features", bad.shape(), &expect));
    }
    let k = gh * gw;
    if cfg.refine_window == 0 || k % cfg.refine_window != 0 {
        return Err(Error::Config(format!(
            "refine window {} does not divide {k} tokens",
            cfg.refine_window
        )));
    }
    let mut flops = FlopCounter::default();
    let flat: Vec<Tensor> = f_hr
        .iter()
        .map(|f| f.reshape(&[k, c]))
        .collect::<Result<_>>()?;
    let mut x = Tensor::vstack(&flat)?;
    for lp in &params.refine {
        x = attention_layer(
            &x,
            lp,
            cfg.heads,
            &AttentionScope::Windows(cfg.refine_window),
            None,
            false,
            &mut flops,
        )?
        .tokens;
    }
    let r = cfg.refine_patch;
    let up = cfg.high_height / (gh * r);
    let mut depths = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n);
    for tok in split_views(&x, n) {
        poses.push(pose_head(&tok, &params.refine_pose, &mut flops));
        let raw = linear(&tok, &params.refine_depth, &mut flops);
        let (ph, pw) = (gh * r, gw * r);
        let mut grid = vec![0.0; ph * pw];
        for (t, vals) in raw.chunks(r * r).enumerate() {
            let (ti, tj) = (t / gw, t % gw);
            for (o, &v) in vals.iter().enumerate() {
                grid[(ti * r + o / r) * pw + tj * r + o % r] = v.clamp(-10.0, 10.0).exp();
            }
        }
        let d = bilinear_upsample(&Tensor::from_parts(vec![ph, pw, 1], grid), up)?;
        depths.push(d.into_reshaped(&[ph * up, pw * up])?);
    }
    Ok(RefinerOutput {
        depths,
        poses,
        flops,
    })
}
