#![allow(dead_code)]

use hdvggt::tensor::ops;
use hdvggt::tensor::{finite_diff_grad, max_relative_error, GradTape, Tensor, Var, DEFAULT_FD_EPS};
use hdvggt::upsampler::{upsample_on_tape, ParamVars, UpsamplerParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hdvggt::geometry::{generate_scene, SceneConfig};
use hdvggt::modulation::{aggregated_gradient, GramKind};
use hdvggt::transformer::QKTrace;

pub type Build = fn(&mut GradTape, &[Var]) -> Var;

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

fn u(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Uniform values with magnitude at least 0.1, away from ReLU kinks.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = 0.1 + rng.gen::<f64>();
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

pub fn cases(seed: u64) -> Vec<Case> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut r;
    vec![
        Case {
            name: "add",
            inputs: vec![u(r, &[3, 4]), u(r, &[3, 4])],
            build: |t, v| t.add(v[0], v[1]).unwrap(),
        },
        Case {
            name: "sub",
            inputs: vec![u(r, &[3, 4]), u(r, &[3, 4])],
            build: |t, v| t.sub(v[0], v[1]).unwrap(),
        },
        Case {
            name: "mul",
            inputs: vec![u(r, &[3, 4]), u(r, &[3, 4])],
            build: |t, v| t.mul(v[0], v[1]).unwrap(),
        },
        Case {
            name: "scale",
            inputs: vec![u(r, &[2, 5])],
            build: |t, v| t.scale(v[0], -1.7),
        },
        Case {
            name: "matmul",
            inputs: vec![u(r, &[3, 4]), u(r, &[4, 2])],
            build: |t, v| t.matmul(v[0], v[1]).unwrap(),
        },
        Case {
            name: "conv2d",
            inputs: vec![u(r, &[5, 5, 2]), u(r, &[3, 3, 2, 3])],
            build: |t, v| t.conv2d(v[0], v[1], 1, 1).unwrap(),
        },
        Case {
            name: "conv2d_strided",
            inputs: vec![u(r, &[7, 7, 2]), u(r, &[3, 3, 2, 2])],
            build: |t, v| t.conv2d(v[0], v[1], 2, 1).unwrap(),
        },
        Case {
            name: "add_bias",
            inputs: vec![u(r, &[4, 3]), u(r, &[3])],
            build: |t, v| t.add_bias(v[0], v[1]).unwrap(),
        },
        Case {
            name: "relu",
            inputs: vec![off_zero(r, &[4, 5])],
            build: |t, v| t.relu(v[0]),
        },
        Case {
            name: "bilinear_upsample",
            inputs: vec![u(r, &[3, 3, 2])],
            build: |t, v| t.bilinear_upsample(v[0], 2).unwrap(),
        },
        Case {
            name: "bilinear_upsample_x3",
            inputs: vec![u(r, &[2, 3, 1])],
            build: |t, v| t.bilinear_upsample(v[0], 3).unwrap(),
        },
        Case {
            name: "layernorm",
            inputs: vec![u(r, &[3, 5]), u(r, &[5]), u(r, &[5])],
            build: |t, v| t.layernorm(v[0], v[1], v[2]).unwrap(),
        },
        Case {
            name: "softmax_rows",
            inputs: vec![u(r, &[3, 4])],
            build: |t, v| t.softmax_rows(v[0]).unwrap(),
        },
        Case {
            name: "concat",
            inputs: vec![u(r, &[2, 2, 3]), u(r, &[2, 2, 2])],
            build: |t, v| t.concat(v[0], v[1]).unwrap(),
        },
        Case {
            name: "reshape",
            inputs: vec![u(r, &[2, 6])],
            build: |t, v| t.reshape(v[0], &[3, 4]).unwrap(),
        },
        Case {
            name: "sum",
            inputs: vec![u(r, &[3, 3])],
            build: |t, v| t.sum(v[0]),
        },
        Case {
            name: "mean",
            inputs: vec![u(r, &[3, 3])],
            build: |t, v| t.mean(v[0]),
        },
        Case {
            name: "mse",
            inputs: vec![u(r, &[3, 3]), u(r, &[3, 3])],
            build: |t, v| t.mse(v[0], v[1]).unwrap(),
        },
    ]
}

/// `Σ out ⊙ w` for fixed random weights `w`, so every output element
/// contributes a generic amount to the gradient.
fn weighted_loss(case: &Case, inputs: &[Tensor], weights: &Tensor) -> (GradTape, Vec<Var>, Var) {
    let mut tape = GradTape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|x| tape.leaf(x.clone().with_grad(true)))
        .collect();
    let out = (case.build)(&mut tape, &vars);
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod);
    (tape, vars, loss)
}

/// Largest relative error between taped and central-difference gradients
/// over every input of `case`.
pub fn check_case(case: &Case, seed: u64) -> f64 {
    let mut probe = GradTape::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .map(|x| probe.constant(x.clone()))
        .collect();
    let out = (case.build)(&mut probe, &vars);
    let shape = probe.value(out).shape().to_vec();
    let weights = Tensor::uniform(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc));

    let (tape, vars, loss) = weighted_loss(case, &case.inputs, &weights);
    let grads = tape.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).unwrap();
        let numeric = finite_diff_grad(
            |x| {
                let mut inputs = case.inputs.clone();
                inputs[i] = x.clone();
                let (tape, _, loss) = weighted_loss(case, &inputs, &weights);
                tape.value(loss).item()
            },
            &case.inputs[i],
            DEFAULT_FD_EPS,
        );
        worst = worst.max(max_relative_error(analytic, &numeric));
    }
    worst
}

pub struct UpsamplerInstance {
    pub params: UpsamplerParams,
    pub f: Tensor,
    pub guide: Tensor,
    pub target: Tensor,
}

fn conv_bias(x: &Tensor, k: &Tensor, b: &Tensor) -> Tensor {
    ops::add_bias(&ops::conv2d(x, k, 1, 1).unwrap(), b).unwrap()
}

/// Smallest magnitude of any ReLU input, the distance to the nearest kink.
fn kink_margin(inst: &UpsamplerInstance) -> f64 {
    let p = &inst.params;
    let g0 = conv_bias(&inst.guide, &p.guide0_kernel, &p.guide0_bias);
    let g1 = conv_bias(&ops::relu(&g0), &p.guide1_kernel, &p.guide1_bias);
    let up = ops::bilinear_upsample(&inst.f, 2).unwrap();
    let fe = conv_bias(&up, &p.feat_kernel, &p.feat_bias);
    let cat = ops::concat_last(&g1, &ops::relu(&fe)).unwrap();
    let fu = conv_bias(&cat, &p.fuse0_kernel, &p.fuse0_bias);
    [g0, fe, fu]
        .iter()
        .flat_map(|t| t.data().iter().map(|v| v.abs()).collect::<Vec<_>>())
        .fold(f64::INFINITY, f64::min)
}

/// Small random instance, a 3×3×4 coarse map onto 6×6, redrawn until every
/// ReLU input is at least `1e-3` from zero so central differences never
/// straddle a kink.
pub fn upsampler_instance(seed: u64) -> UpsamplerInstance {
    (0..)
        .map(|attempt| draw_instance(seed * 1000 + attempt))
        .find(|inst| kink_margin(inst) > 1e-3)
        .unwrap()
}

fn draw_instance(seed: u64) -> UpsamplerInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = UpsamplerParams::init_uniform(4, seed);
    for t in params.tensors_mut() {
        if t.rank() == 1 {
            *t = Tensor::uniform(t.shape(), 0.3, &mut rng).with_grad(true);
        }
    }
    UpsamplerInstance {
        params,
        f: Tensor::uniform(&[3, 3, 4], 1.0, &mut rng),
        guide: Tensor::from_fn(&[6, 6, 3], |_| rng.gen::<f64>()),
        target: Tensor::uniform(&[6, 6, 4], 1.0, &mut rng),
    }
}

fn upsampler_loss(
    inst: &UpsamplerInstance,
    params: &UpsamplerParams,
) -> (GradTape, ParamVars, Var) {
    let mut tape = GradTape::new();
    let pv = ParamVars::record(&mut tape, params);
    let f = tape.constant(inst.f.clone());
    let g = tape.constant(inst.guide.clone());
    let y = tape.constant(inst.target.clone());
    let out = upsample_on_tape(&mut tape, &pv, f, g, 2).unwrap();
    let loss = tape.mse(out, y).unwrap();
    (tape, pv, loss)
}

/// Relative gradient error of the MSE loss for every upsampler parameter.
pub fn check_upsampler(seed: u64) -> Vec<f64> {
    let inst = upsampler_instance(seed);
    let (tape, pv, loss) = upsampler_loss(&inst, &inst.params);
    let grads = tape.backward(loss).unwrap();
    (0..10)
        .map(|i| {
            let numeric = finite_diff_grad(
                |x| {
                    let mut p = inst.params.clone();
                    *p.tensors_mut()[i] = x.clone().with_grad(true);
                    let (tape, _, loss) = upsampler_loss(&inst, &p);
                    tape.value(loss).item()
                },
                inst.params.tensors()[i],
                DEFAULT_FD_EPS,
            );
            max_relative_error(grads.get(pv.0[i]).unwrap(), &numeric)
        })
        .collect()
}

pub fn random_trace(layers: usize, n: usize, k: usize, c: usize, seed: u64) -> QKTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        (0..layers)
            .map(|_| {
                (0..n)
                    .map(|_| Tensor::uniform(&[k, c], 1.0, &mut rng))
                    .collect()
            })
            .collect()
    };
    QKTrace {
        q: draw(),
        k: draw(),
    }
}

fn cosine_entry(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb) + 1.0) / 2.0
}

/// Direct triple loop over window views, band layers and token pairs.
pub fn brute_stats(
    trace: &QKTrace,
    t: usize,
    r: usize,
    kind: GramKind,
    layers: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let n = trace.views();
    let k = trace.tokens();
    let window: Vec<usize> = (0..n)
        .filter(|&s| s != t && s + r >= t && s <= t + r)
        .collect();
    let mut per = vec![];
    for &s in &window {
        let mut g = vec![0.0; k * k];
        for &l in layers {
            let (a, b) = match kind {
                GramKind::QQ => (&trace.q[l - 1][t], &trace.q[l - 1][s]),
                GramKind::KK => (&trace.k[l - 1][t], &trace.k[l - 1][s]),
                GramKind::QK => (&trace.q[l - 1][t], &trace.k[l - 1][s]),
            };
            for i in 0..k {
                for j in 0..k {
                    g[i * k + j] += cosine_entry(a.row(i), b.row(j)) / layers.len() as f64;
                }
            }
        }
        per.push(g);
    }
    let m = per.len() as f64;
    let mean: Vec<f64> = (0..k * k)
        .map(|e| per.iter().map(|g| g[e]).sum::<f64>() / m)
        .collect();
    let var: Vec<f64> = (0..k * k)
        .map(|e| per.iter().map(|g| (g[e] - mean[e]).powi(2)).sum::<f64>() / m)
        .collect();
    (mean, var)
}

/// Scales depth inside token `(ty, tx)` of view 0 by 0.9 and returns the
/// argmax token of that view's distortion alongside the corrupted token.
pub fn corrupted_patch_argmax(seed: u64, (ty, tx): (usize, usize)) -> (usize, usize) {
    let cfg = SceneConfig {
        singularity_fraction: 0.0,
        ..Default::default()
    };
    let scene = generate_scene(&cfg, seed).unwrap();
    let (gh, gw) = scene.token_grid();
    let p = scene.patch_pixels();
    let (n, k, w) = (scene.len(), gh * gw, scene.width());
    let mut depths = scene.depths.clone();
    let d = depths[0].data().to_vec();
    depths[0] = Tensor::from_fn(&[scene.height(), w], |i| {
        let (y, x) = (i / w, i % w);
        if y / p == ty && x / p == tx {
            d[i] * 0.9
        } else {
            d[i]
        }
    });
    let stability = Tensor::from_fn(&[n, k], |_| 1.0);
    let dist = aggregated_gradient(
        &scene.views,
        &scene.cameras,
        &depths,
        &stability,
        (gh, gw),
        1.0,
    )
    .unwrap();
    let row = dist.row(0);
    let best = (0..k).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    (best, ty * gw + tx)
}
