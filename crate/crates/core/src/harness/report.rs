use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bench::BenchReport;
use super::config::RunConfig;
use super::pipeline::{MaskStats, StageFlops, UpsamplerMode};
use crate::error::Result;
use crate::upsampler::CurvePoint;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub seed: u64,
    pub auc: Option<f64>,
    pub masks: Option<MaskStats>,
    pub depth_abs_rel: f64,
    pub flops: StageFlops,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub gating: bool,
    pub upsampler: UpsamplerMode,
    pub scenes: Vec<SceneReport>,
    pub mean_auc: Option<f64>,
    pub mean_depth_abs_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub tasks: usize,
    pub train_tasks: usize,
    pub heldout_tasks: usize,
    pub steps: usize,
    pub baseline_mse: f64,
    pub learned_mse: f64,
    /// `learned_mse / baseline_mse` on the held-out split.
    pub ratio: f64,
    pub curve: Vec<CurvePoint>,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectScene {
    pub seed: u64,
    /// `None` when the ground truth has a single class.
    pub auc: Option<f64>,
    pub masks: MaskStats,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectSection {
    pub scenes: Vec<DetectScene>,
    pub mean_auc: Option<f64>,
}

/// Machine-readable result of one command. Everything except `timing` is
/// a function of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detect: Option<DetectSection>,
    /// Wall-clock seconds per stage.
    pub timing: BTreeMap<String, f64>,
}

impl Report {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            config: config.clone(),
            run: None,
            train: None,
            bench: None,
            detect: None,
            timing: BTreeMap::new(),
        }
    }

    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        fs::write(dir.join("report.txt"), self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "hdvggt {} {}", self.tool_version, self.command);
        if let Some(r) = &self.run {
            let _ = writeln!(s, "gating {}  upsampler {:?}", r.gating, r.upsampler);
            let _ = writeln!(
                s,
                "{:>6} {:>8} {:>5} {:>5} {:>5} {:>10} {:>12}",
                "seed", "auc", "gt", "init", "refin", "abs_rel", "macs"
            );
            for sc in &r.scenes {
                let m = sc.masks;
                let _ = writeln!(
                    s,
                    "{:>6} {:>8} {:>5} {:>5} {:>5} {:>10.5} {:>12}",
                    sc.seed,
                    fmt_opt(sc.auc),
                    m.map_or("-".into(), |m| m.ground_truth.to_string()),
                    m.map_or("-".into(), |m| m.initial.to_string()),
                    m.map_or("-".into(), |m| m.refined.to_string()),
                    sc.depth_abs_rel,
                    sc.flops.total
                );
            }
            let _ = writeln!(
                s,
                "mean auc {}  mean abs_rel {:.5}",
                fmt_opt(r.mean_auc),
                r.mean_depth_abs_rel
            );
        }
        if let Some(t) = &self.train {
            let _ = writeln!(
                s,
                "tasks {} (train {}, held-out {}), steps {}",
                t.tasks, t.train_tasks, t.heldout_tasks, t.steps
            );
            let _ = writeln!(s, "{:>6} {:>12} {:>12}", "step", "train", "held-out");
            for p in &t.curve {
                let _ = writeln!(
                    s,
                    "{:>6} {:>12.6} {:>12.6}",
                    p.step, p.train_loss, p.heldout_loss
                );
            }
            let _ = writeln!(
                s,
                "baseline mse {:.6}  learned mse {:.6}  ratio {:.4}",
                t.baseline_mse, t.learned_mse, t.ratio
            );
        }
        if let Some(b) = &self.bench {
            let _ = writeln!(
                s,
                "{:>4} {:>5} {:>14} {:>14} {:>14} {:>6} {:>9}",
                "N", "K", "predicted_qk", "measured_qk", "measured_all", "exact", "seconds"
            );
            for r in &b.rows {
                let _ = writeln!(
                    s,
                    "{:>4} {:>5} {:>14} {:>14} {:>14} {:>6} {:>9.3}",
                    r.n,
                    r.k,
                    r.predicted.qk_flops,
                    r.measured.qk_flops,
                    r.measured.total,
                    r.exact,
                    r.seconds
                );
            }
            for r in &b.ratios {
                let _ = writeln!(
                    s,
                    "qk ratio {} {}->{} at {}: {}",
                    r.axis, r.from, r.to, r.fixed, r.qk_ratio
                );
            }
            let d = &b.dual_branch;
            let _ = writeln!(
                s,
                "dual-branch {} (coarse {}, upsampler {}, refiner {}) vs flat {}: {:.4}",
                d.dual_total, d.coarse, d.upsampler, d.refiner, d.flat_total, d.fraction
            );
        }
        if let Some(d) = &self.detect {
            let _ = writeln!(
                s,
                "{:>6} {:>8} {:>5} {:>5} {:>5}",
                "seed", "auc", "gt", "init", "refin"
            );
            for sc in &d.scenes {
                let _ = writeln!(
                    s,
                    "{:>6} {:>8} {:>5} {:>5} {:>5}",
                    sc.seed,
                    fmt_opt(sc.auc),
                    sc.masks.ground_truth,
                    sc.masks.initial,
                    sc.masks.refined
                );
            }
            let _ = writeln!(s, "mean auc {}", fmt_opt(d.mean_auc));
        }
        for (stage, secs) in &self.timing {
            let _ = writeln!(s, "time {stage} {secs:.3}s");
        }
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |a| format!("{a:.4}"))
}

/// Mean of the defined values, `None` when there are none.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
