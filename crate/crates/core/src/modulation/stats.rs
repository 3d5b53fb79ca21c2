use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::gramian::{gramian_matrix, GramKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::transformer::QKTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Shallow,
    Middle,
    Deep,
}

/// 1-based layer sets of the three bands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandPartition {
    pub shallow: Vec<usize>,
    pub middle: Vec<usize>,
    pub deep: Vec<usize>,
}

impl Default for BandPartition {
    fn default() -> Self {
        Self {
            shallow: vec![1, 2],
            middle: vec![3, 4],
            deep: vec![5, 6],
        }
    }
}

impl BandPartition {
    pub fn layers(&self, band: Band) -> &[usize] {
        match band {
            Band::Shallow => &self.shallow,
            Band::Middle => &self.middle,
            Band::Deep => &self.deep,
        }
    }

    /// Checks that the bands partition `[1, depth]`.
    pub fn validate(&self, depth: usize) -> Result<()> {
        let mut seen = vec![false; depth + 1];
        for band in [Band::Shallow, Band::Middle, Band::Deep] {
            let layers = self.layers(band);
            if layers.is_empty() {
                return Err(Error::Config(format!(
                    "modulation.bands: {band:?} band is empty"
                )));
            }
            for &l in layers {
                if l == 0 || l > depth {
                    return Err(Error::Config(format!(
                        "modulation.bands: layer {l} is outside [1, {depth}]"
                    )));
                }
                if std::mem::replace(&mut seen[l], true) {
                    return Err(Error::Config(format!(
                        "modulation.bands: layer {l} appears twice"
                    )));
                }
            }
        }
        if let Some(l) = (1..=depth).find(|&l| !seen[l]) {
            return Err(Error::Config(format!(
                "modulation.bands: layer {l} is in no band"
            )));
        }
        Ok(())
    }
}

/// The `(kind, band)` pairs the three priors consume.
pub const STAT_PAIRS: [(GramKind, Band); 4] = [
    (GramKind::KK, Band::Shallow),
    (GramKind::QK, Band::Shallow),
    (GramKind::QQ, Band::Middle),
    (GramKind::QQ, Band::Deep),
];

/// Window mean `S` and population variance `V` of band-averaged Gramians.
#[derive(Debug, Clone, PartialEq)]
pub struct GramianStats {
    pub s: BTreeMap<(GramKind, Band), Tensor>,
    pub v: BTreeMap<(GramKind, Band), Tensor>,
    pub window_radius: usize,
    /// 0-based views that formed the window.
    pub window: Vec<usize>,
}

impl GramianStats {
    pub fn s(&self, kind: GramKind, band: Band) -> &Tensor {
        &self.s[&(kind, band)]
    }

    pub fn v(&self, kind: GramKind, band: Band) -> &Tensor {
        &self.v[&(kind, band)]
    }
}

/// Views `t-r..=t+r` without `t`, clamped to `[0, n)`.
pub fn window_views(t: usize, radius: usize, n: usize) -> Vec<usize> {
    let lo = t.saturating_sub(radius);
    let hi = (t + radius).min(n.saturating_sub(1));
    (lo..=hi).filter(|&s| s != t).collect()
}

fn operands(trace: &QKTrace, kind: GramKind, l: usize, t: usize, s: usize) -> (&Tensor, &Tensor) {
    match kind {
        GramKind::QQ => (&trace.q[l][t], &trace.q[l][s]),
        GramKind::KK => (&trace.k[l][t], &trace.k[l][s]),
        GramKind::QK => (&trace.q[l][t], &trace.k[l][s]),
    }
}

/// Temporal moments of view `t` (0-based) over its window.
pub fn temporal_stats(
    trace: &QKTrace,
    t: usize,
    window_radius: usize,
    bands: &BandPartition,
) -> Result<GramianStats> {
    if window_radius == 0 {
        return Err(Error::Config(
            "modulation.window_radius must be at least 1".into(),
        ));
    }
    let n = trace.views();
    bands.validate(trace.layers())?;
    if t >= n {
        return Err(Error::Usage(format!(
            "view {t} is outside a trace of {n} views"
        )));
    }
    let window = window_views(t, window_radius, n);
    if window.is_empty() {
        return Err(Error::InsufficientViews(n));
    }
    let mut s_map = BTreeMap::new();
    let mut v_map = BTreeMap::new();
    for (kind, band) in STAT_PAIRS {
        let layers = bands.layers(band);
        let mut per_view = Vec::with_capacity(window.len());
        for &s in &window {
            let mut acc: Option<Vec<f64>> = None;
            for &l in layers {
                let (a, b) = operands(trace, kind, l - 1, t, s);
                let g = gramian_matrix(a, b)?;
                match &mut acc {
                    None => acc = Some(g.into_data()),
                    Some(acc) => acc.iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
                }
            }
            let mut mean = acc.unwrap_or_default();
            mean.iter_mut().for_each(|x| *x /= layers.len() as f64);
            per_view.push(mean);
        }
        let k = trace.tokens();
        let m = per_view.len() as f64;
        let mut s_mat = vec![0.0; k * k];
        for g in &per_view {
            s_mat.iter_mut().zip(g).for_each(|(x, y)| *x += y);
        }
        s_mat.iter_mut().for_each(|x| *x /= m);
        // Population variance, shifted by the first window view.
        let first = &per_view[0];
        let mut shift_sum = vec![0.0; k * k];
        let mut v_mat = vec![0.0; k * k];
        for g in &per_view[1..] {
            for (e, (&y, &y0)) in g.iter().zip(first).enumerate() {
                let d = y - y0;
                shift_sum[e] += d;
                v_mat[e] += d * d;
            }
        }
        for (v, &s) in v_mat.iter_mut().zip(&shift_sum) {
            *v = (*v / m - (s / m) * (s / m)).max(0.0);
        }
        s_map.insert((kind, band), Tensor::from_parts(vec![k, k], s_mat));
        v_map.insert((kind, band), Tensor::from_parts(vec![k, k], v_mat));
    }
    Ok(GramianStats {
        s: s_map,
        v: v_map,
        window_radius,
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_truncated_at_ends() {
        assert_eq!(window_views(0, 2, 4), vec![1, 2]);
        assert_eq!(window_views(2, 2, 4), vec![0, 1, 3]);
        assert_eq!(window_views(3, 1, 4), vec![2]);
        assert!(window_views(0, 2, 1).is_empty());
    }

    #[test]
    fn partition_validation() {
        BandPartition::default().validate(6).unwrap();
        assert!(BandPartition::default().validate(5).is_err());
        let overlap = BandPartition {
            shallow: vec![1, 2],
            middle: vec![2, 3],
            deep: vec![4],
        };
        assert!(overlap.validate(4).is_err());
    }
}
