//! Command orchestration: configs, the end-to-end pipeline, reports.

mod bench;
mod commands;
mod config;
mod pipeline;
mod report;

pub use bench::{
    dual_branch, measure_cell, ratios, scaling_rows, BenchGrid, BenchReport, BenchRow, DualBranch,
    Ratio, DEFAULT_GRID,
};
pub use commands::{
    cmd_bench, cmd_detect, cmd_generate, cmd_run, cmd_train_upsampler, default_checkpoint,
    exit_code, scene_dir, PASS_THROUGH_MARGIN,
};
pub use config::RunConfig;
pub use pipeline::{
    detect_scene, detection_auc, mean_abs_rel, run_scene, MaskStats, SceneRun, StageFlops,
    StageTiming, UpsamplerMode,
};
pub use report::{
    mean_defined, DetectScene, DetectSection, Report, RunSection, SceneReport, TrainSection,
    SCHEMA_VERSION, TOOL_VERSION,
};
