use super::params::UpsamplerParams;
use crate::error::{Error, Result};
use crate::tensor::ops::{avg_pool, ConvShape};
use crate::tensor::{GradTape, Tensor, Var};

/// Parameter handles on a tape, in [`UpsamplerParams::tensors`] order.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars(pub [Var; 10]);

impl ParamVars {
    pub fn record(tape: &mut GradTape, p: &UpsamplerParams) -> Self {
        ParamVars(p.tensors().map(|t| tape.leaf(t.clone())))
    }
}

fn conv_relu(tape: &mut GradTape, x: Var, k: Var, b: Var, relu: bool) -> Result<Var> {
    let y = tape.conv2d(x, k, 1, 1)?;
    let y = tape.add_bias(y, b)?;
    Ok(if relu { tape.relu(y) } else { y })
}

/// Guidance image area-pooled onto the output grid.
pub fn pooled_guidance(i_hr: &Tensor, out_hw: (usize, usize)) -> Result<Tensor> {
    if i_hr.rank() != 3 || i_hr.shape()[2] != 3 {
        return Err(Error::Config(format!(
            "guidance must be H×W×3, got {:?}",
            i_hr.shape()
        )));
    }
    let (h, w) = (i_hr.shape()[0], i_hr.shape()[1]);
    let (oh, ow) = out_hw;
    if oh == 0 || h % oh != 0 || w % ow != 0 || h / oh != w / ow {
        return Err(Error::Config(format!(
            "guidance {h}×{w} does not pool evenly onto {oh}×{ow}"
        )));
    }
    avg_pool(i_hr, h / oh)
}

pub fn guidance_on_tape(tape: &mut GradTape, pv: &ParamVars, guide: Var) -> Result<Var> {
    let [g0k, g0b, g1k, g1b, ..] = pv.0;
    let h = conv_relu(tape, guide, g0k, g0b, true)?;
    conv_relu(tape, h, g1k, g1b, false)
}

pub fn interp_on_tape(tape: &mut GradTape, pv: &ParamVars, f: Var, s: usize) -> Result<Var> {
    let [_, _, _, _, fk, fb, ..] = pv.0;
    let up = tape.bilinear_upsample(f, s)?;
    conv_relu(tape, up, fk, fb, true)
}

pub fn fuse_on_tape(tape: &mut GradTape, pv: &ParamVars, guide: Var, interp: Var) -> Result<Var> {
    let [.., f0k, f0b, f1k, f1b] = pv.0;
    let cat = tape.concat(guide, interp)?;
    let h = conv_relu(tape, cat, f0k, f0b, true)?;
    conv_relu(tape, h, f1k, f1b, false)
}

/// Integer scale between a coarse grid and the guidance-aligned target grid.
pub fn infer_scale(f_coarse: &Tensor, out_hw: (usize, usize)) -> Result<usize> {
    let (h, w) = (f_coarse.shape()[0], f_coarse.shape()[1]);
    let s = out_hw.0 / h;
    if s == 0 || out_hw.0 != s * h || out_hw.1 != s * w {
        return Err(Error::Config(format!(
            "output grid {}×{} is not an integer multiple of {h}×{w}",
            out_hw.0, out_hw.1
        )));
    }
    Ok(s)
}

/// Records the full upsampler on `tape`, producing an `(s·h)×(s·w)×c` map
/// from an `h×w×c` coarse map and an already pooled guidance image.
pub fn upsample_on_tape(
    tape: &mut GradTape,
    pv: &ParamVars,
    f: Var,
    guide: Var,
    s: usize,
) -> Result<Var> {
    let g = guidance_on_tape(tape, pv, guide)?;
    let i = interp_on_tape(tape, pv, f, s)?;
    fuse_on_tape(tape, pv, g, i)
}

fn constants(p: &UpsamplerParams) -> (GradTape, ParamVars) {
    let mut tape = GradTape::new();
    let pv = ParamVars(p.tensors().map(|t| tape.constant(t.clone())));
    (tape, pv)
}

/// Guidance features on the `out_hw` grid.
pub fn guidance_features(
    i_hr: &Tensor,
    out_hw: (usize, usize),
    p: &UpsamplerParams,
) -> Result<Tensor> {
    let pooled = pooled_guidance(i_hr, out_hw)?;
    let (mut tape, pv) = constants(p);
    let g = tape.constant(pooled);
    let out = guidance_on_tape(&mut tape, &pv, g)?;
    Ok(tape.value(out).clone())
}

/// Bilinear interpolation by `s` followed by the feature conv and ReLU.
pub fn upsample_coarse(f_coarse: &Tensor, s: usize, p: &UpsamplerParams) -> Result<Tensor> {
    let (mut tape, pv) = constants(p);
    let f = tape.constant(f_coarse.clone());
    let out = interp_on_tape(&mut tape, &pv, f, s)?;
    Ok(tape.value(out).clone())
}

pub fn fuse(f_guide: &Tensor, f_interp: &Tensor, p: &UpsamplerParams) -> Result<Tensor> {
    if f_guide.shape() != f_interp.shape() {
        return Err(Error::shape("fuse", f_guide.shape(), f_interp.shape()));
    }
    let (mut tape, pv) = constants(p);
    let g = tape.constant(f_guide.clone());
    let i = tape.constant(f_interp.clone());
    let out = fuse_on_tape(&mut tape, &pv, g, i)?;
    Ok(tape.value(out).clone())
}

/// Guided upsampling onto the `out_hw` grid.
pub fn upsample(
    f_coarse: &Tensor,
    i_hr: &Tensor,
    out_hw: (usize, usize),
    p: &UpsamplerParams,
) -> Result<Tensor> {
    let s = infer_scale(f_coarse, out_hw)?;
    let g = guidance_features(i_hr, out_hw, p)?;
    let i = upsample_coarse(f_coarse, s, p)?;
    fuse(&g, &i, p)
}

/// Multiply-adds of one [`upsample`] call.
pub fn upsample_macs(
    f_shape: &[usize],
    out_hw: (usize, usize),
    p: &UpsamplerParams,
) -> Result<u64> {
    let (oh, ow) = out_hw;
    let c = p.channels();
    let mut total = 0;
    for (cin, k) in [
        (3, &p.guide0_kernel),
        (p.guide0_kernel.shape()[3], &p.guide1_kernel),
        (f_shape[2], &p.feat_kernel),
        (2 * c, &p.fuse0_kernel),
        (c, &p.fuse1_kernel),
    ] {
        total += ConvShape::new(&[oh, ow, cin], k.shape(), 1, 1)?.macs();
    }
    Ok(total)
}
