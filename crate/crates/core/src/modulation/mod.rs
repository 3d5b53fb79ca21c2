//! Training-free detection and suppression of view-inconsistent tokens:
//! cross-view Gramians, their windowed moments, the three band priors,
//! fused saliency, mask thresholding and refinement, and key gating.

mod auc;
mod gramian;
mod mask;
mod pipeline;
mod priors;
mod stats;

pub use auc::roc_auc;
pub use gramian::{gramian, gramian_matrix, GramKind, Gramian};
pub use mask::{
    aggregated_gradient, gate_keys, initial_mask, quantile_count, refine_mask, AlphaMode,
    RefineMode, Refinement,
};
pub use pipeline::{analyze, AnomalyResult, GeometryInput, ModulationConfig};
pub use priors::{
    fuse_saliency, fuse_saliency_with, min_max_normalize, prior_deep, prior_middle, prior_shallow,
    Reduction, Saliency,
};
pub use stats::{temporal_stats, window_views, Band, BandPartition, GramianStats, STAT_PAIRS};

use crate::error::Result;
use crate::tensor::Tensor;
use crate::transformer::QKTrace;

/// The three priors of one view from its window statistics.
pub fn priors(stats: &GramianStats) -> Result<[Tensor; 3]> {
    let w_s = prior_shallow(
        stats.s(GramKind::KK, Band::Shallow),
        &min_max_normalize(stats.v(GramKind::QK, Band::Shallow)),
    )?;
    let w_m = prior_middle(stats.s(GramKind::QQ, Band::Middle));
    let w_d = prior_deep(
        &min_max_normalize(stats.v(GramKind::QQ, Band::Deep)),
        stats.s(GramKind::QQ, Band::Deep),
    )?;
    Ok([w_s, w_m, w_d])
}

/// Saliency of every view, stacked `N×K`, plus per-view degeneracy flags.
pub fn saliency_map(
    trace: &QKTrace,
    window_radius: usize,
    bands: &BandPartition,
    reduction: Reduction,
) -> Result<(Tensor, Vec<bool>)> {
    let (n, k) = (trace.views(), trace.tokens());
    let mut data = Vec::with_capacity(n * k);
    let mut degenerate = Vec::with_capacity(n);
    for t in 0..n {
        let stats = temporal_stats(trace, t, window_radius, bands)?;
        let [w_s, w_m, w_d] = priors(&stats)?;
        let sal = fuse_saliency_with(&w_s, &w_m, &w_d, reduction)?;
        data.extend_from_slice(sal.scores.data());
        degenerate.push(sal.degenerate);
    }
    Ok((Tensor::from_parts(vec![n, k], data), degenerate))
}
