use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{generate_scene, render_scene, SceneConfig};
use crate::tensor::Tensor;
use crate::transformer::{
    count_attention_flops, global_attention_layer, run_coarse, run_refiner, CoarseOptions,
    FlopCount, FlopCounter, StackParams,
};
use crate::upsampler::{upsample, upsample_macs, UpsamplerParams};

pub const DEFAULT_GRID: &str = "K=16,64,256;N=2,4,8";

/// Token counts per view and view counts to sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchGrid {
    pub k: Vec<usize>,
    pub n: Vec<usize>,
}

impl std::str::FromStr for BenchGrid {
    type Err = Error;

    /// Parses `K=a,b,...;N=x,y,...` in either order.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: String| Error::Config(format!("bench grid {s:?}: {why}"));
        let (mut k, mut n) = (None, None);
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("{part:?} lacks '='")))?;
            let parsed: Vec<usize> = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|e| bad(format!("{v:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            if parsed.contains(&0) {
                return Err(bad("values must be positive".into()));
            }
            let slot = match key.trim() {
                "K" => &mut k,
                "N" => &mut n,
                other => return Err(bad(format!("unknown axis {other:?}"))),
            };
            if slot.replace(parsed).is_some() {
                return Err(bad(format!("axis {key} given twice")));
            }
        }
        match (k, n) {
            (Some(k), Some(n)) => Ok(BenchGrid { k, n }),
            _ => Err(bad("both K and N are required".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub k: usize,
    pub predicted: FlopCount,
    pub measured: FlopCount,
    pub exact: bool,
    pub seconds: f64,
}

/// Multiply-adds of the default pipeline against a flat high-resolution
/// global backbone with the same layer count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualBranch {
    pub coarse: u64,
    pub refiner: u64,
    pub upsampler: u64,
    pub dual_total: u64,
    pub flat_attention: u64,
    pub flat_total: u64,
    /// `dual_total / flat_total`.
    pub fraction: f64,
    /// Attention sublayers only, both sides.
    pub attention_fraction: f64,
}

/// `qk` ratios between consecutive K at fixed N, and consecutive N at fixed K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub axis: String,
    pub fixed: usize,
    pub from: usize,
    pub to: usize,
    pub qk_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub grid: BenchGrid,
    pub rows: Vec<BenchRow>,
    pub ratios: Vec<Ratio>,
    pub dual_branch: DualBranch,
}

/// Runs the coarse layers over `n·k` random tokens and counts what they do.
pub fn measure_cell(
    stack: &StackParams,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<(FlopCount, f64)> {
    let c = stack.config.channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Tensor::uniform(&[n * k, c], 1.0, &mut rng);
    let mut counter = FlopCounter::default();
    let start = Instant::now();
    for lp in &stack.coarse {
        x = global_attention_layer(&x, lp, stack.config.heads, None, &mut counter)?.tokens;
    }
    Ok((counter.attention(), start.elapsed().as_secs_f64()))
}

pub fn scaling_rows(stack: &StackParams, grid: &BenchGrid) -> Result<Vec<BenchRow>> {
    let cfg = &stack.config;
    let mut rows = Vec::new();
    for &n in &grid.n {
        for &k in &grid.k {
            let predicted = count_attention_flops(n, k, cfg.channels, cfg.depth_coarse, None)?;
            let (measured, seconds) = measure_cell(stack, n, k, (n * 1000 + k) as u64)?;
            rows.push(BenchRow {
                n,
                k,
                predicted,
                measured,
                exact: predicted == measured,
                seconds,
            });
        }
    }
    Ok(rows)
}

pub fn ratios(rows: &[BenchRow], grid: &BenchGrid) -> Vec<Ratio> {
    let qk = |n: usize, k: usize| {
        rows.iter()
            .find(|r| r.n == n && r.k == k)
            .map(|r| r.measured.qk_flops as f64)
    };
    let mut out = Vec::new();
    for &n in &grid.n {
        for w in grid.k.windows(2) {
            if let (Some(a), Some(b)) = (qk(n, w[0]), qk(n, w[1])) {
                out.push(Ratio {
                    axis: "K".into(),
                    fixed: n,
                    from: w[0],
                    to: w[1],
                    qk_ratio: b / a,
                });
            }
        }
    }
    for &k in &grid.k {
        for w in grid.n.windows(2) {
            if let (Some(a), Some(b)) = (qk(w[0], k), qk(w[1], k)) {
                out.push(Ratio {
                    axis: "N".into(),
                    fixed: k,
                    from: w[0],
                    to: w[1],
                    qk_ratio: b / a,
                });
            }
        }
    }
    out
}

/// Counts one coarse pass, the learned upsampler and the refiner on a
/// generated scene, and the flat backbone analytically over the
/// high-resolution token count.
pub fn dual_branch(
    scene_cfg: &SceneConfig,
    stack: &StackParams,
    upsampler: &UpsamplerParams,
    seed: u64,
) -> Result<DualBranch> {
    let cfg = &stack.config;
    let scene = generate_scene(scene_cfg, seed)?;
    let hr = render_scene(scene_cfg, seed, cfg.scale())?;
    let coarse = run_coarse(&scene.views, stack, &CoarseOptions::default())?;
    let out_hw = cfg.high_grid();
    let mut up_macs = 0;
    let mut f_hr = Vec::new();
    for (f, g) in coarse.features.iter().zip(&hr.views) {
        up_macs += upsample_macs(f.shape(), out_hw, upsampler)?;
        f_hr.push(upsample(f, g, out_hw, upsampler)?);
    }
    let refiner = run_refiner(&f_hr, stack)?;

    let n = scene.len();
    let k_hr = cfg.high_tokens();
    let c = cfg.channels as u64;
    let tokens = (n * k_hr) as u64;
    let flat_attn = count_attention_flops(n, k_hr, cfg.channels, cfg.depth_coarse, None)?;
    let hidden = c * 4;
    let flat_mlp = cfg.depth_coarse as u64 * tokens * 2 * c * hidden;
    let flat_embed = tokens * (cfg.patch * cfg.patch * 3) as u64 * c;
    let flat_total = flat_attn.total + flat_mlp + flat_embed;
    let dual_total = coarse.flops.total() + up_macs + refiner.flops.total();
    let dual_attn = coarse.flops.attention().total + refiner.flops.attention().total;
    Ok(DualBranch {
        coarse: coarse.flops.total(),
        refiner: refiner.flops.total(),
        upsampler: up_macs,
        dual_total,
        flat_attention: flat_attn.total,
        flat_total,
        fraction: dual_total as f64 / flat_total as f64,
        attention_fraction: dual_attn as f64 / flat_attn.total as f64,
    })
}
