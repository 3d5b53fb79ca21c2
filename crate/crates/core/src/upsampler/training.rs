use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{infer_scale, pooled_guidance, upsample_on_tape, ParamVars};
use super::params::UpsamplerParams;
use crate::error::{Error, Result};
use crate::geometry::{render_scene, SceneConfig};
use crate::tensor::ops::bilinear_upsample;
use crate::tensor::{GradTape, Tensor};
use crate::transformer::{patchify, StackParams};

/// One feature-reconstruction example.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleTask {
    /// `h×w×c` coarse map.
    pub f_coarse: Tensor,
    /// `H×W×3` high-resolution image.
    pub guidance: Tensor,
    /// `(s·h)×(s·w)×c` ground-truth map.
    pub target: Tensor,
}

impl UpsampleTask {
    pub fn out_hw(&self) -> (usize, usize) {
        (self.target.shape()[0], self.target.shape()[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpsamplerConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub holdout_fraction: f64,
    pub log_every: usize,
    /// Scenes rendered for the synthetic task set; each view is one task.
    pub scenes: usize,
}

impl Default for UpsamplerConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 0.2,
            batch: 4,
            seed: 0,
            holdout_fraction: 0.25,
            log_every: 100,
            scenes: 16,
        }
    }
}

impl UpsamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("upsampler.{m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad(format!(
                "holdout_fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            ));
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        if self.scenes == 0 {
            return bad("scenes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub heldout_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: UpsamplerParams,
    pub curve: Vec<CurvePoint>,
    pub train_indices: Vec<usize>,
    pub heldout_indices: Vec<usize>,
    /// Bilinear baseline over the held-out tasks.
    pub baseline_heldout: f64,
}

impl TrainOutcome {
    pub fn final_heldout(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |p| p.heldout_loss)
    }
}

fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mse", a.shape(), b.shape()));
    }
    let n = a.len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n)
}

/// Bilinear interpolation of the coarse map onto the task's target grid.
pub fn bilinear_prediction(task: &UpsampleTask) -> Result<Tensor> {
    let s = infer_scale(&task.f_coarse, task.out_hw())?;
    bilinear_upsample(&task.f_coarse, s)
}

/// Mean over tasks of the bilinear-baseline MSE.
pub fn baseline_mse(tasks: &[UpsampleTask]) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::Usage("baseline_mse of zero tasks".into()));
    }
    let mut total = 0.0;
    for t in tasks {
        total += mse(&bilinear_prediction(t)?, &t.target)?;
    }
    Ok(total / tasks.len() as f64)
}

struct Prepared<'a> {
    task: &'a UpsampleTask,
    pooled: Tensor,
    scale: usize,
}

fn prepare(tasks: &[UpsampleTask]) -> Result<Vec<Prepared<'_>>> {
    tasks
        .iter()
        .map(|task| {
            Ok(Prepared {
                task,
                pooled: pooled_guidance(&task.guidance, task.out_hw())?,
                scale: infer_scale(&task.f_coarse, task.out_hw())?,
            })
        })
        .collect()
}

/// Mean loss over `items` and, when `grads` is given, the summed
/// gradient of that mean with respect to every parameter.
fn evaluate(
    p: &UpsamplerParams,
    items: &[&Prepared<'_>],
    mut grads: Option<&mut Vec<Tensor>>,
) -> Result<f64> {
    let mut total = 0.0;
    let norm = 1.0 / items.len() as f64;
    for item in items {
        let mut tape = GradTape::new();
        let pv = if grads.is_some() {
            ParamVars::record(&mut tape, p)
        } else {
            ParamVars(p.tensors().map(|t| tape.constant(t.clone())))
        };
        let f = tape.constant(item.task.f_coarse.clone());
        let g = tape.constant(item.pooled.clone());
        let target = tape.constant(item.task.target.clone());
        let out = upsample_on_tape(&mut tape, &pv, f, g, item.scale)?;
        let loss = tape.mse(out, target)?;
        total += tape.value(loss).item();
        if let Some(acc) = grads.as_deref_mut() {
            let gr = tape.backward(loss)?;
            for (a, v) in acc.iter_mut().zip(pv.0) {
                if let Some(d) = gr.get(v) {
                    *a = a.zip_map(d, "gradient sum", |x, y| x + norm * y)?;
                }
            }
        }
    }
    Ok(total * norm)
}

/// Held-out mean MSE of `params`.
pub fn heldout_mse(p: &UpsamplerParams, tasks: &[UpsampleTask]) -> Result<f64> {
    let prepared = prepare(tasks)?;
    let refs: Vec<_> = prepared.iter().collect();
    evaluate(p, &refs, None)
}

/// Seeded shuffled split; at least one task lands on each side.
pub fn split_tasks(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Usage(format!(
            "training needs at least two tasks, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let heldout = {
        let mut h = idx[..held].to_vec();
        h.sort_unstable();
        h
    };
    let mut train = idx[held..].to_vec();
    train.sort_unstable();
    Ok((train, heldout))
}

/// Per-channel shifts lifting every coarse activation in `tasks` to at
/// least `margin`, for [`UpsamplerParams::init_pass_through`].
pub fn pass_through_offsets(tasks: &[UpsampleTask], margin: f64) -> Vec<f64> {
    let c = tasks.first().map_or(0, |t| t.f_coarse.shape()[2]);
    let mut low = vec![f64::INFINITY; c];
    for t in tasks {
        for px in t.f_coarse.data().chunks(c) {
            for (l, &v) in low.iter_mut().zip(px) {
                *l = l.min(v);
            }
        }
    }
    low.iter().map(|l| margin - l).collect()
}

/// Plain mini-batch gradient descent from `init`.
///
/// Batches are drawn from a seeded per-epoch shuffle of the training
/// split. The curve holds the initial losses, every `log_every` steps, and
/// the final step.
pub fn train_upsampler(
    tasks: &[UpsampleTask],
    init: UpsamplerParams,
    cfg: &UpsamplerConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_idx, held_idx) = split_tasks(tasks.len(), cfg.holdout_fraction, cfg.seed)?;
    let prepared = prepare(tasks)?;
    let train: Vec<&Prepared> = train_idx.iter().map(|&i| &prepared[i]).collect();
    let held: Vec<&Prepared> = held_idx.iter().map(|&i| &prepared[i]).collect();
    let held_tasks: Vec<UpsampleTask> = held_idx.iter().map(|&i| tasks[i].clone()).collect();
    let baseline_heldout = baseline_mse(&held_tasks)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f0e_1a57);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut params = init;
    let mut curve = vec![CurvePoint {
        step: 0,
        train_loss: evaluate(&params, &train, None)?,
        heldout_loss: evaluate(&params, &held, None)?,
    }];
    let batch = cfg.batch.min(train.len());
    for step in 1..=cfg.steps {
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if cursor == order.len() {
                order = (0..train.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(train[order[cursor]]);
            cursor += 1;
        }
        let mut grads: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        let loss = evaluate(&params, &picked, Some(&mut grads))?;
        if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::TrainingDiverged { step, loss });
        }
        for (w, g) in params.tensors_mut().into_iter().zip(&grads) {
            *w = w
                .zip_map(g, "descent step", |x, d| x - cfg.lr * d)?
                .with_grad(true);
        }
        if step % cfg.log_every == 0 || step == cfg.steps {
            let train_loss = evaluate(&params, &train, None)?;
            if !train_loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    step,
                    loss: train_loss,
                });
            }
            curve.push(CurvePoint {
                step,
                train_loss,
                heldout_loss: evaluate(&params, &held, None)?,
            });
        }
    }
    Ok(TrainOutcome {
        params,
        curve,
        train_indices: train_idx,
        heldout_indices: held_idx,
        baseline_heldout,
    })
}

/// Synthetic task set: every view of `count` scenes rendered at low and
/// high resolution. Coarse features patchify the low-resolution view,
/// targets patchify the high-resolution view with the same patch size and
/// embedding, so the target grid is `scale` times denser.
pub fn build_tasks(
    scene: &SceneConfig,
    stack: &StackParams,
    count: usize,
    first_seed: u64,
) -> Result<Vec<UpsampleTask>> {
    let sc = &stack.config;
    let scale = sc.scale();
    if (scene.height, scene.width) != (sc.low_height, sc.low_width) || scene.patch != sc.patch {
        return Err(Error::Config(format!(
            "scene {}×{} patch {} does not match the stack's low-resolution input {}×{} patch {}",
            scene.height, scene.width, scene.patch, sc.low_height, sc.low_width, sc.patch
        )));
    }
    let (lh, lw) = sc.low_grid();
    let (hh, hw) = sc.high_grid();
    let c = sc.channels;
    let mut tasks = Vec::new();
    for k in 0..count as u64 {
        let lo = render_scene(scene, first_seed + k, 1)?;
        let hi = render_scene(scene, first_seed + k, scale)?;
        for (lv, hv) in lo.views.iter().zip(&hi.views) {
            tasks.push(UpsampleTask {
                f_coarse: patchify(lv, sc.patch, &stack.embed)?.into_reshaped(&[lh, lw, c])?,
                guidance: hv.clone(),
                target: patchify(hv, sc.patch, &stack.embed)?.into_reshaped(&[hh, hw, c])?,
            });
        }
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_tasks(n: usize, seed: u64, bilinear_target: bool) -> Vec<UpsampleTask> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let f = Tensor::uniform(&[3, 3, 4], 1.0, &mut rng);
                let guidance = Tensor::from_fn(&[12, 12, 3], |_| rng.gen::<f64>());
                let target = if bilinear_target {
                    bilinear_upsample(&f, 2).unwrap()
                } else {
                    Tensor::uniform(&[6, 6, 4], 1.0, &mut rng)
                };
                UpsampleTask {
                    f_coarse: f,
                    guidance,
                    target,
                }
            })
            .collect()
    }

    fn quick(steps: usize) -> UpsamplerConfig {
        UpsamplerConfig {
            steps,
            log_every: 10,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_leave_params_unchanged() {
        let tasks = toy_tasks(4, 0, false);
        let init = UpsamplerParams::init_uniform(4, 0);
        let out = train_upsampler(&tasks, init.clone(), &quick(0)).unwrap();
        assert!(out.params.bitwise_eq(&init));
        assert_eq!(out.curve.len(), 1);
        assert_eq!(out.curve[0].step, 0);
    }

    #[test]
    fn bilinear_targets_stay_at_the_baseline() {
        let tasks = toy_tasks(8, 1, true);
        let init =
            UpsamplerParams::init_pass_through(4, 1, &pass_through_offsets(&tasks, 0.1)).unwrap();
        let out = train_upsampler(&tasks, init, &quick(30)).unwrap();
        assert!(out.baseline_heldout < 1e-20);
        assert!(out.final_heldout() <= out.baseline_heldout + 1e-6);
    }

    #[test]
    fn training_is_deterministic_and_logs_the_final_step() {
        let tasks = toy_tasks(8, 2, false);
        let cfg = UpsamplerConfig {
            steps: 25,
            log_every: 10,
            ..Default::default()
        };
        let a = train_upsampler(&tasks, UpsamplerParams::init_uniform(4, 2), &cfg).unwrap();
        let b = train_upsampler(&tasks, UpsamplerParams::init_uniform(4, 2), &cfg).unwrap();
        assert!(a.params.bitwise_eq(&b.params));
        assert_eq!(a.curve, b.curve);
        let steps: Vec<usize> = a.curve.iter().map(|p| p.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 25]);
        assert!(a.curve[3].train_loss < a.curve[0].train_loss);
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (train, held) = split_tasks(64, 0.25, 0).unwrap();
        assert_eq!((train.len(), held.len()), (48, 16));
        assert!(held.iter().all(|h| !train.contains(h)));
        assert_eq!(split_tasks(64, 0.25, 0).unwrap(), (train, held));
        assert_eq!(split_tasks(2, 0.25, 0).unwrap().1.len(), 1);
        assert!(matches!(split_tasks(1, 0.25, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn baseline_cases() {
        let exact = toy_tasks(3, 3, true);
        assert_eq!(baseline_mse(&exact).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma: f64 = 0.05;
        let noisy: Vec<UpsampleTask> = toy_tasks(40, 4, true)
            .into_iter()
            .map(|mut t| {
                let noise = Tensor::from_fn(t.target.shape(), |_| {
                    if rng.gen::<bool>() {
                        sigma
                    } else {
                        -sigma
                    }
                });
                t.target = t.target.zip_map(&noise, "noise", |a, b| a + b).unwrap();
                t
            })
            .collect();
        let m = baseline_mse(&noisy).unwrap();
        assert!((m - sigma * sigma).abs() < 0.1 * sigma * sigma);
    }

    #[test]
    fn divergence_reports_the_step() {
        let tasks = toy_tasks(4, 5, false);
        let cfg = UpsamplerConfig {
            steps: 200,
            lr: 1e12,
            ..Default::default()
        };
        let err = train_upsampler(&tasks, UpsamplerParams::init_uniform(4, 5), &cfg).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { step, .. } if step >= 1));
    }

    #[test]
    fn config_validation() {
        assert!(UpsamplerConfig::default().validate().is_ok());
        let bad = UpsamplerConfig {
            holdout_fraction: 1.0,
            ..Default::default()
        };
        assert!(bad
            .validate()
            .unwrap_err()
            .to_string()
            .contains("upsampler.holdout_fraction"));
        assert!(UpsamplerConfig {
            batch: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
