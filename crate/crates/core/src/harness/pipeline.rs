use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{generate_scene, render_scene, SceneBundle};
use crate::modulation::{analyze, roc_auc, AnomalyResult, GeometryInput};
use crate::tensor::ops::bilinear_upsample;
use crate::tensor::Tensor;
use crate::transformer::{run_coarse, run_refiner, CoarseOptions, FlopCounter, StackParams};
use crate::upsampler::{upsample, upsample_macs, UpsamplerParams};

/// How coarse features reach the refiner's grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsamplerMode {
    Learned,
    Bilinear,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFlops {
    pub coarse_pass1: FlopCounter,
    pub coarse_pass2: Option<FlopCounter>,
    pub upsampler: u64,
    pub refiner: FlopCounter,
    pub total: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub scene: f64,
    pub coarse_pass1: f64,
    pub modulation: f64,
    pub coarse_pass2: f64,
    pub upsampler: f64,
    pub refiner: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskStats {
    pub ground_truth: usize,
    pub initial: usize,
    pub refined: usize,
    pub initial_overlap: usize,
    pub refined_overlap: usize,
    pub refined_contains_initial: bool,
}

impl MaskStats {
    pub fn new(gt: &Tensor, result: &AnomalyResult) -> Self {
        let on = |t: &Tensor| t.data().iter().map(|&v| v > 0.5).collect::<Vec<_>>();
        let (g, i, r) = (on(gt), on(&result.initial_mask), on(&result.refined_mask));
        let count = |m: &[bool]| m.iter().filter(|&&b| b).count();
        let both = |a: &[bool], b: &[bool]| a.iter().zip(b).filter(|(x, y)| **x && **y).count();
        Self {
            ground_truth: count(&g),
            initial: count(&i),
            refined: count(&r),
            initial_overlap: both(&g, &i),
            refined_overlap: both(&g, &r),
            refined_contains_initial: i.iter().zip(&r).all(|(a, b)| !a || *b),
        }
    }
}

/// Everything one scene produces in `run`.
#[derive(Debug, Clone)]
pub struct SceneRun {
    pub scene: SceneBundle,
    pub gt_depths_hr: Vec<Tensor>,
    pub anomaly: Option<AnomalyResult>,
    pub auc: Option<f64>,
    pub depths: Vec<Tensor>,
    pub flops: StageFlops,
    pub timing: StageTiming,
    pub abs_rel: f64,
}

/// Saliency ROC-AUC against the ground-truth mask, `None` for a single class.
pub fn detection_auc(saliency: &Tensor, gt: &Tensor) -> Result<Option<f64>> {
    let labels: Vec<bool> = gt.data().iter().map(|&v| v > 0.5).collect();
    match roc_auc(saliency.data(), &labels) {
        Ok(a) => Ok(Some(a)),
        Err(Error::UndefinedScore(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Mean of `|d - gt| / gt` over every pixel of every view.
pub fn mean_abs_rel(depths: &[Tensor], gt: &[Tensor]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (d, g) in depths.iter().zip(gt) {
        if d.shape() != g.shape() {
            return Err(Error::shape("abs rel", d.shape(), g.shape()));
        }
        for (a, b) in d.data().iter().zip(g.data()) {
            sum += (a - b).abs() / b;
            n += 1;
        }
    }
    Ok(sum / n.max(1) as f64)
}

fn clock() -> impl FnMut() -> f64 {
    let mut last = std::time::Instant::now();
    move || {
        let now = std::time::Instant::now();
        let dt = now.duration_since(last).as_secs_f64();
        last = now;
        dt
    }
}

/// Modulation only: pass 1, saliency, masks.
pub fn detect_scene(
    cfg: &RunConfig,
    stack: &StackParams,
    scene: &SceneBundle,
) -> Result<(AnomalyResult, Option<f64>)> {
    let pass1 = run_coarse(&scene.views, stack, &CoarseOptions::default())?;
    let geometry = GeometryInput {
        views: &scene.views,
        cameras: &scene.cameras,
        depths: &scene.depths,
        grid: scene.token_grid(),
    };
    let result = analyze(&pass1.trace, &geometry, &cfg.modulation)?;
    let auc = detection_auc(&result.saliency, &scene.mask_matrix())?;
    Ok((result, auc))
}

/// Pass 1, optional modulation and gated pass 2, upsampling, refinement.
pub fn run_scene(
    cfg: &RunConfig,
    stack: &StackParams,
    upsampler: Option<&UpsamplerParams>,
    gating: bool,
    seed: u64,
) -> Result<SceneRun> {
    let mut tick = clock();
    let mut timing = StageTiming::default();
    let scale = stack.config.scale();
    let scene = generate_scene(&cfg.scene, seed)?;
    let hr = render_scene(&cfg.scene, seed, scale)?;
    timing.scene = tick();

    let pass1 = run_coarse(&scene.views, stack, &CoarseOptions::default())?;
    timing.coarse_pass1 = tick();
    let mut flops = StageFlops {
        coarse_pass1: pass1.flops,
        ..Default::default()
    };
    let (features, anomaly, auc) = if gating {
        let geometry = GeometryInput {
            views: &scene.views,
            cameras: &scene.cameras,
            depths: &scene.depths,
            grid: scene.token_grid(),
        };
        let result = analyze(&pass1.trace, &geometry, &cfg.modulation)?;
        let auc = detection_auc(&result.saliency, &scene.mask_matrix())?;
        let gate = result.gate(&cfg.modulation, stack.config.depth_coarse)?;
        timing.modulation = tick();
        let opts = CoarseOptions {
            gate: Some(&gate),
            record_logits: false,
        };
        let pass2 = run_coarse(&scene.views, stack, &opts)?;
        timing.coarse_pass2 = tick();
        flops.coarse_pass2 = Some(pass2.flops);
        (pass2.features, Some(result), auc)
    } else {
        (pass1.features, None, None)
    };

    let out_hw = stack.config.high_grid();
    let mut f_hr = Vec::with_capacity(features.len());
    for (f, guide) in features.iter().zip(&hr.views) {
        f_hr.push(match upsampler {
            Some(p) => {
                flops.upsampler += upsample_macs(f.shape(), out_hw, p)?;
                upsample(f, guide, out_hw, p)?
            }
            None => bilinear_upsample(f, scale)?,
        });
    }
    timing.upsampler = tick();
    let refined = run_refiner(&f_hr, stack)?;
    timing.refiner = tick();
    flops.refiner = refined.flops;
    flops.total = flops.coarse_pass1.total()
        + flops.coarse_pass2.map_or(0, |f| f.total())
        + flops.upsampler
        + flops.refiner.total();
    let abs_rel = mean_abs_rel(&refined.depths, &hr.depths)?;
    Ok(SceneRun {
        scene,
        gt_depths_hr: hr.depths,
        anomaly,
        auc,
        depths: refined.depths,
        flops,
        timing,
        abs_rel,
    })
}
