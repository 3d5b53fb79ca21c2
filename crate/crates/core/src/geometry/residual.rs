use super::camera::{project, unproject, Camera};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reprojections whose four bilinear depth neighbours spread by more than
/// this relative amount straddle a depth discontinuity and are discarded.
pub const DISCONTINUITY_TOL: f64 = 0.05;

/// A reprojected point deeper than the sampled surface by more than this
/// relative amount is hidden in the other view and discarded.
pub const OCCLUSION_TOL: f64 = 0.02;

/// Validity tests applied to each reprojection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualOptions {
    pub discontinuity_tol: f64,
    pub occlusion_tol: f64,
    /// When set, reprojections nearer than the sampled surface by more than
    /// this relative amount are discarded too. With exact depth on both
    /// sides such a mismatch only arises where the footprint straddles a
    /// surface crease.
    pub crease_tol: Option<f64>,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self {
            discontinuity_tol: DISCONTINUITY_TOL,
            occlusion_tol: OCCLUSION_TOL,
            crease_tol: None,
        }
    }
}

impl ResidualOptions {
    /// Options for exact piecewise-planar depth maps.
    pub fn piecewise_planar() -> Self {
        Self {
            occlusion_tol: 1e-9,
            crease_tol: Some(1e-9),
            ..Self::default()
        }
    }
}

/// Per-pixel cross-view residuals of one reference view against one other.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    /// `|reprojected depth - sampled depth|`.
    pub r_d: Tensor,
    /// Euclidean RGB distance to the resampled colour.
    pub r_c: Tensor,
    /// 1 where the reprojection landed on a comparable surface point.
    pub valid: Tensor,
}

impl ResidualField {
    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|&&v| v > 0.0).count()
    }

    pub fn mean_valid_rd(&self) -> f64 {
        mean_over_valid(&self.r_d, &self.valid)
    }

    pub fn mean_valid_rc(&self) -> f64 {
        mean_over_valid(&self.r_c, &self.valid)
    }
}

fn mean_over_valid(values: &Tensor, valid: &Tensor) -> f64 {
    let n = valid.data().iter().filter(|&&v| v > 0.0).count();
    if n == 0 {
        return 0.0;
    }
    values
        .data()
        .iter()
        .zip(valid.data())
        .filter(|(_, &m)| m > 0.0)
        .map(|(v, _)| v)
        .sum::<f64>()
        / n as f64
}

#[derive(Debug, Clone, Copy)]
struct Footprint {
    idx: [usize; 4],
    wgt: [f64; 4],
}

/// Bilinear footprint of continuous pixel `(u, v)` on a `h×w` grid whose
/// pixel centres sit at integer coordinates.
fn footprint(u: f64, v: f64, h: usize, w: usize) -> Option<Footprint> {
    let max_u = (w - 1) as f64;
    let max_v = (h - 1) as f64;
    if !(u >= 0.0 && v >= 0.0 && u <= max_u && v <= max_v) {
        return None;
    }
    let x0 = (u.floor() as usize).min(w.saturating_sub(2));
    let y0 = (v.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = u - x0 as f64;
    let ty = v - y0 as f64;
    Some(Footprint {
        idx: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
        wgt: [
            (1.0 - ty) * (1.0 - tx),
            (1.0 - ty) * tx,
            ty * (1.0 - tx),
            ty * tx,
        ],
    })
}

/// Samples an `H×W×C` (or `H×W`) tensor bilinearly at continuous pixel
/// coordinates; `None` outside the image.
pub fn sample_bilinear(image: &Tensor, u: f64, v: f64) -> Option<Vec<f64>> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let c = if image.rank() == 3 {
        image.shape()[2]
    } else {
        1
    };
    let fp = footprint(u, v, h, w)?;
    let mut out = vec![0.0; c];
    for (&i, &wt) in fp.idx.iter().zip(&fp.wgt) {
        for (o, &val) in out.iter_mut().zip(&image.data()[i * c..(i + 1) * c]) {
            *o += wt * val;
        }
    }
    Some(out)
}

fn check_pair(view: &Tensor, depth: &Tensor, which: &str) -> Result<(usize, usize)> {
    if view.rank() != 3
        || view.shape()[2] != 3
        || depth.rank() != 2
        || depth.shape() != &view.shape()[..2]
    {
        return Err(Error::Shape {
            op: if which == "i" {
                "reprojection_residuals(view_i, depth_i)"
            } else {
                "reprojection_residuals(view_j, depth_j)"
            },
            left: view.shape().to_vec(),
            right: depth.shape().to_vec(),
        });
    }
    Ok((view.shape()[0], view.shape()[1]))
}

/// Reprojects every pixel of view `i` into view `j` and measures depth and
/// colour disagreement there.
///
/// The depth of view `j` is sampled as the reciprocal of bilinearly
/// interpolated inverse depth, which is exact on planar surfaces.
pub fn reprojection_residuals(
    view_i: &Tensor,
    view_j: &Tensor,
    depth_i: &Tensor,
    depth_j: &Tensor,
    cam_i: &Camera,
    cam_j: &Camera,
) -> Result<ResidualField> {
    reprojection_residuals_with(
        view_i,
        view_j,
        depth_i,
        depth_j,
        cam_i,
        cam_j,
        &ResidualOptions::default(),
    )
}

pub fn reprojection_residuals_with(
    view_i: &Tensor,
    view_j: &Tensor,
    depth_i: &Tensor,
    depth_j: &Tensor,
    cam_i: &Camera,
    cam_j: &Camera,
    opts: &ResidualOptions,
) -> Result<ResidualField> {
    let (h, w) = check_pair(view_i, depth_i, "i")?;
    let (hj, wj) = check_pair(view_j, depth_j, "j")?;
    let mut r_d = vec![0.0; h * w];
    let mut r_c = vec![0.0; h * w];
    let mut valid = vec![0.0; h * w];
    let dj = depth_j.data();
    let img_i = view_i.data();
    let img_j = view_j.data();

    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let d = depth_i.data()[p];
            if !(d > 0.0) {
                continue;
            }
            let world = unproject([x as f64, y as f64], d, cam_i)?;
            let Ok(proj) = project(world, cam_j) else {
                continue;
            };
            if proj.depth <= 0.0 {
                continue;
            }
            let Some(fp) = footprint(proj.pixel[0], proj.pixel[1], hj, wj) else {
                continue;
            };
            let neighbours = fp.idx.map(|i| dj[i]);
            let lo = neighbours.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = neighbours.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(lo > 0.0) || hi > lo * (1.0 + opts.discontinuity_tol) {
                continue;
            }
            let inv: f64 = fp.idx.iter().zip(&fp.wgt).map(|(&i, &wt)| wt / dj[i]).sum();
            let sampled = 1.0 / inv;
            if proj.depth > sampled * (1.0 + opts.occlusion_tol) {
                continue;
            }
            if opts
                .crease_tol
                .is_some_and(|tol| proj.depth < sampled * (1.0 - tol))
            {
                continue;
            }
            let mut dist2 = 0.0;
            for ch in 0..3 {
                let cj: f64 = fp
                    .idx
                    .iter()
                    .zip(&fp.wgt)
                    .map(|(&i, &wt)| wt * img_j[i * 3 + ch])
                    .sum();
                let diff = img_i[p * 3 + ch] - cj;
                dist2 += diff * diff;
            }
            r_d[p] = (proj.depth - sampled).abs();
            r_c[p] = dist2.sqrt();
            valid[p] = 1.0;
        }
    }
    Ok(ResidualField {
        r_d: Tensor::from_parts(vec![h, w], r_d),
        r_c: Tensor::from_parts(vec![h, w], r_c),
        valid: Tensor::from_parts(vec![h, w], valid),
    })
}
