use serde::{Deserialize, Serialize};

use super::mask::{aggregated_gradient, initial_mask, refine_mask, AlphaMode, RefineMode};
use super::priors::Reduction;
use super::saliency_map;
use super::stats::BandPartition;
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::tensor::Tensor;
use crate::transformer::{KeyGate, QKTrace};

fn d_radius() -> usize {
    2
}
fn d_lambda() -> f64 {
    0.5
}
fn d_true() -> bool {
    true
}

/// Every knob of the modulation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationConfig {
    #[serde(default = "d_radius")]
    pub window_radius: usize,
    #[serde(default)]
    pub bands: BandPartition,
    #[serde(default)]
    pub alpha: AlphaMode,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub refine_threshold: AlphaMode,
    #[serde(default)]
    pub refine_mode: RefineMode,
    #[serde(default)]
    pub reduction: Reduction,
    #[serde(default = "d_true")]
    pub gating: bool,
    /// 1-based layers whose keys are gated; defaults to the shallow band.
    #[serde(default)]
    pub gated_layers: Option<Vec<usize>>,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        Self {
            window_radius: d_radius(),
            bands: BandPartition::default(),
            alpha: AlphaMode::default(),
            lambda: d_lambda(),
            refine_threshold: AlphaMode::default(),
            refine_mode: RefineMode::default(),
            reduction: Reduction::default(),
            gating: true,
            gated_layers: None,
        }
    }
}

impl ModulationConfig {
    pub fn validate(&self, depth: usize) -> Result<()> {
        if self.window_radius == 0 {
            return Err(Error::Config(
                "modulation.window_radius must be at least 1".into(),
            ));
        }
        self.bands.validate(depth)?;
        self.alpha.validate("modulation.alpha")?;
        self.refine_threshold
            .validate("modulation.refine_threshold")?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "modulation.lambda: {} must be non-negative",
                self.lambda
            )));
        }
        if let Some(&bad) = self.gated_layers().iter().find(|&&l| l == 0 || l > depth) {
            return Err(Error::Config(format!(
                "modulation.gated_layers: layer {bad} is outside [1, {depth}]"
            )));
        }
        Ok(())
    }

    pub fn gated_layers(&self) -> Vec<usize> {
        self.gated_layers
            .clone()
            .unwrap_or_else(|| self.bands.shallow.clone())
    }
}

/// Everything the modulation stage derives for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyResult {
    pub saliency: Tensor,
    pub initial_mask: Tensor,
    pub refined_mask: Tensor,
    /// Per-view threshold used for the initial mask.
    pub alpha: Vec<f64>,
    pub distortion: Tensor,
    /// Views whose saliency was constant before normalisation.
    pub degenerate: Vec<bool>,
    pub warnings: Vec<String>,
}

impl AnomalyResult {
    pub fn gate(&self, cfg: &ModulationConfig, depth: usize) -> Result<KeyGate> {
        KeyGate::new(&self.refined_mask, cfg.gated_layers(), depth)
    }
}

/// Views, cameras and depth maps the mask refinement reprojects through.
#[derive(Debug, Clone, Copy)]
pub struct GeometryInput<'a> {
    pub views: &'a [Tensor],
    pub cameras: &'a [Camera],
    pub depths: &'a [Tensor],
    pub grid: (usize, usize),
}

/// Saliency from the trace, thresholded, then refined by reprojection
/// distortion over the stable tokens.
pub fn analyze(
    trace: &QKTrace,
    geometry: &GeometryInput,
    cfg: &ModulationConfig,
) -> Result<AnomalyResult> {
    cfg.validate(trace.layers())?;
    let (saliency, degenerate) = saliency_map(trace, cfg.window_radius, &cfg.bands, cfg.reduction)?;
    let (initial, alpha) = initial_mask(&saliency, cfg.alpha)?;
    let stability = initial.map(|m| 1.0 - m);
    let distortion = aggregated_gradient(
        geometry.views,
        geometry.cameras,
        geometry.depths,
        &stability,
        geometry.grid,
        cfg.lambda,
    )?;
    let refined = refine_mask(&initial, &distortion, cfg.refine_threshold, cfg.refine_mode)?;
    let mut warnings = refined.warnings;
    for (t, _) in degenerate.iter().enumerate().filter(|(_, &d)| d) {
        warnings.push(format!(
            "view {t}: saliency is constant, scores set to zero"
        ));
    }
    Ok(AnomalyResult {
        saliency,
        initial_mask: initial,
        refined_mask: refined.mask,
        alpha,
        distortion,
        degenerate,
        warnings,
    })
}
