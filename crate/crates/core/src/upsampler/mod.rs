//! Guidance-based learned feature upsampling and its bilinear baseline.

mod forward;
mod params;
mod training;

pub use forward::{
    fuse, fuse_on_tape, guidance_features, guidance_on_tape, infer_scale, interp_on_tape,
    pooled_guidance, upsample, upsample_coarse, upsample_macs, upsample_on_tape, ParamVars,
};
pub use params::{UpsamplerParams, GUIDE_HIDDEN};
pub use training::{
    baseline_mse, bilinear_prediction, build_tasks, heldout_mse, pass_through_offsets, split_tasks,
    train_upsampler, CurvePoint, TrainOutcome, UpsampleTask, UpsamplerConfig,
};
