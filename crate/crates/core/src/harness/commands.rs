use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::bench::{dual_branch, ratios, scaling_rows, BenchGrid, BenchReport};
use super::config::RunConfig;
use super::pipeline::{detect_scene, run_scene, MaskStats, UpsamplerMode};
use super::report::{
    mean_defined, DetectScene, DetectSection, Report, RunSection, SceneReport, TrainSection,
};
use crate::error::{Error, Result};
use crate::geometry::{generate_scene, load_scene, save_scene, SceneBundle};
use crate::imageio::write_pgm;
use crate::modulation::AnomalyResult;
use crate::tensor::{write_hdt, Tensor};
use crate::transformer::{load_checkpoint, save_checkpoint, StackParams};
use crate::upsampler::{build_tasks, pass_through_offsets, train_upsampler, UpsamplerParams};

/// Directory name of one scene's artifacts.
pub fn scene_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("scene_{seed:04}"))
}

/// Default location of the trained upsampler under an output directory.
pub fn default_checkpoint(out: &Path) -> PathBuf {
    out.join("upsampler")
}

/// Pass-through margin above the smallest coarse activation.
pub const PASS_THROUGH_MARGIN: f64 = 0.1;

fn grid_image(row: &[f64], grid: (usize, usize)) -> Result<Tensor> {
    Tensor::new(vec![grid.0, grid.1], row.to_vec())
}

fn write_masks(dir: &Path, result: &AnomalyResult, grid: (usize, usize)) -> Result<()> {
    let n = result.saliency.shape()[0];
    for t in 0..n {
        write_pgm(
            dir.join(format!("saliency_{t:03}.pgm")),
            &grid_image(result.saliency.row(t), grid)?,
        )?;
        write_pgm(
            dir.join(format!("mask_initial_{t:03}.pgm")),
            &grid_image(result.initial_mask.row(t), grid)?,
        )?;
        write_pgm(
            dir.join(format!("mask_refined_{t:03}.pgm")),
            &grid_image(result.refined_mask.row(t), grid)?,
        )?;
    }
    Ok(())
}

/// Writes every scene of the suite to `<out>/scene_<seed>`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let start = Instant::now();
    let mut report = Report::new("generate", cfg);
    for seed in cfg.scene_seeds() {
        let scene = generate_scene(&cfg.scene, seed)?;
        save_scene(&scene, scene_dir(&cfg.output, seed))?;
    }
    report
        .timing
        .insert("generate".into(), start.elapsed().as_secs_f64());
    report.write(&cfg.output)?;
    Ok(report)
}

/// Full dual-branch pipeline on every scene of the suite.
pub fn cmd_run(
    cfg: &RunConfig,
    gating: bool,
    mode: UpsamplerMode,
    checkpoint: Option<&Path>,
) -> Result<Report> {
    cfg.validate()?;
    let stack = StackParams::init(&cfg.stack)?;
    let learned = match mode {
        UpsamplerMode::Learned => {
            let dir = checkpoint.map_or_else(|| default_checkpoint(&cfg.output), Path::to_path_buf);
            Some(UpsamplerParams::from_named(
                cfg.stack.channels,
                &load_checkpoint(dir)?,
            )?)
        }
        UpsamplerMode::Bilinear => None,
    };
    let mut report = Report::new("run", cfg);
    let mut scenes = Vec::new();
    for seed in cfg.scene_seeds() {
        let run = run_scene(cfg, &stack, learned.as_ref(), gating, seed)?;
        let dir = scene_dir(&cfg.output, seed);
        fs::create_dir_all(&dir)?;
        for (t, d) in run.depths.iter().enumerate() {
            write_hdt(d, dir.join(format!("depth_final_{t:03}.hdt")))?;
            let top = d.max().max(f64::MIN_POSITIVE);
            write_pgm(
                dir.join(format!("depth_final_{t:03}.pgm")),
                &d.map(|v| v / top),
            )?;
        }
        let gt = run.scene.mask_matrix();
        if let Some(a) = &run.anomaly {
            write_masks(&dir, a, run.scene.token_grid())?;
        }
        for (stage, secs) in [
            ("scene", run.timing.scene),
            ("coarse_pass1", run.timing.coarse_pass1),
            ("modulation", run.timing.modulation),
            ("coarse_pass2", run.timing.coarse_pass2),
            ("upsampler", run.timing.upsampler),
            ("refiner", run.timing.refiner),
        ] {
            *report.timing.entry(stage.into()).or_insert(0.0) += secs;
        }
        scenes.push(SceneReport {
            seed,
            auc: run.auc,
            masks: run.anomaly.as_ref().map(|a| MaskStats::new(&gt, a)),
            depth_abs_rel: run.abs_rel,
            flops: run.flops,
            warnings: run.anomaly.map(|a| a.warnings).unwrap_or_default(),
        });
    }
    let mean_depth_abs_rel =
        scenes.iter().map(|s| s.depth_abs_rel).sum::<f64>() / scenes.len() as f64;
    report.run = Some(RunSection {
        gating,
        upsampler: mode,
        mean_auc: mean_defined(scenes.iter().map(|s| s.auc)),
        scenes,
        mean_depth_abs_rel,
    });
    report.write(&cfg.output)?;
    Ok(report)
}

/// Builds the synthetic task set, trains, saves `<out>/upsampler`.
pub fn cmd_train_upsampler(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let start = Instant::now();
    let stack = StackParams::init(&cfg.stack)?;
    let tasks = build_tasks(&cfg.scene, &stack, cfg.upsampler.scenes, cfg.seed)?;
    let built = start.elapsed().as_secs_f64();
    let init = UpsamplerParams::init_pass_through(
        cfg.stack.channels,
        cfg.upsampler.seed,
        &pass_through_offsets(&tasks, PASS_THROUGH_MARGIN),
    )?;
    let outcome = train_upsampler(&tasks, init, &cfg.upsampler)?;
    let trained = start.elapsed().as_secs_f64() - built;
    let checkpoint = default_checkpoint(&cfg.output);
    save_checkpoint(&checkpoint, &outcome.params.to_named())?;
    let mut report = Report::new("train-upsampler", cfg);
    let learned = outcome.final_heldout();
    report.train = Some(TrainSection {
        tasks: tasks.len(),
        train_tasks: outcome.train_indices.len(),
        heldout_tasks: outcome.heldout_indices.len(),
        steps: cfg.upsampler.steps,
        baseline_mse: outcome.baseline_heldout,
        learned_mse: learned,
        ratio: learned / outcome.baseline_heldout,
        curve: outcome.curve,
        checkpoint,
    });
    report.timing.insert("tasks".into(), built);
    report.timing.insert("training".into(), trained);
    report.write(&cfg.output)?;
    Ok(report)
}

/// Attention scaling table and the dual-branch comparison.
pub fn cmd_bench(cfg: &RunConfig, grid: &BenchGrid) -> Result<Report> {
    cfg.validate()?;
    let start = Instant::now();
    let stack = StackParams::init(&cfg.stack)?;
    let rows = scaling_rows(&stack, grid)?;
    let ratios = ratios(&rows, grid);
    let up = UpsamplerParams::init_uniform(cfg.stack.channels, cfg.upsampler.seed);
    let dual = dual_branch(&cfg.scene, &stack, &up, cfg.seed)?;
    let mut report = Report::new("bench", cfg);
    report.bench = Some(BenchReport {
        grid: grid.clone(),
        rows,
        ratios,
        dual_branch: dual,
    });
    report
        .timing
        .insert("bench".into(), start.elapsed().as_secs_f64());
    report.write(&cfg.output)?;
    Ok(report)
}

/// Pass 1 and modulation only, over `scenes` or the generated suite.
pub fn cmd_detect(cfg: &RunConfig, scenes: &[PathBuf]) -> Result<Report> {
    cfg.validate()?;
    let start = Instant::now();
    let stack = StackParams::init(&cfg.stack)?;
    let bundles: Vec<SceneBundle> = if scenes.is_empty() {
        cfg.scene_seeds()
            .into_iter()
            .map(|s| generate_scene(&cfg.scene, s))
            .collect::<Result<_>>()?
    } else {
        scenes.iter().map(load_scene).collect::<Result<_>>()?
    };
    let mut out = Vec::new();
    for scene in &bundles {
        let expect = (cfg.stack.low_height, cfg.stack.low_width);
        if (scene.height(), scene.width()) != expect {
            return Err(Error::Config(format!(
                "scene {}×{} does not match the stack input {}×{}",
                scene.height(),
                scene.width(),
                expect.0,
                expect.1
            )));
        }
        let (result, auc) = detect_scene(cfg, &stack, scene)?;
        let dir = scene_dir(&cfg.output, scene.seed);
        fs::create_dir_all(&dir)?;
        write_masks(&dir, &result, scene.token_grid())?;
        out.push(DetectScene {
            seed: scene.seed,
            auc,
            masks: MaskStats::new(&scene.mask_matrix(), &result),
            warnings: result.warnings,
        });
    }
    let mut report = Report::new("detect", cfg);
    report.detect = Some(DetectSection {
        mean_auc: mean_defined(out.iter().map(|s| s.auc)),
        scenes: out,
    });
    report
        .timing
        .insert("detect".into(), start.elapsed().as_secs_f64());
    report.write(&cfg.output)?;
    Ok(report)
}

/// Process exit status for an error: 2 configuration or usage, 3 missing
/// artifact, 4 numerical failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::MissingArtifact(_) => 3,
        Error::TrainingDiverged { .. }
        | Error::Domain(_)
        | Error::DegenerateProjection(_)
        | Error::UndefinedScore(_)
        | Error::InsufficientViews(_) => 4,
        _ => 2,
    }
}
