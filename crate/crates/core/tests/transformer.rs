use hdvggt::geometry::{generate_scene, SceneConfig};
use hdvggt::tensor::Tensor;
use hdvggt::transformer::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn layer(c: usize, seed: u64) -> LayerParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = LayerParams::random(c, &mut rng);
    for b in [
        &mut p.ln1_bias,
        &mut p.ln2_bias,
        &mut p.mlp_in_bias,
        &mut p.mlp_out_bias,
    ] {
        *b = Tensor::uniform(b.shape(), 0.2, &mut rng);
    }
    p
}

fn lin(x: &[Vec<f64>], w: &Tensor) -> Vec<Vec<f64>> {
    let (c, n) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|r| {
            (0..n)
                .map(|j| (0..c).map(|i| r[i] * w.data()[i * n + j]).sum())
                .collect()
        })
        .collect()
}

fn ln(x: &[Vec<f64>], g: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let m = r.iter().sum::<f64>() / n;
            let v = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, x)| (x - m) / (v + 1e-6).sqrt() * g.data()[j] + b.data()[j])
                .collect()
        })
        .collect()
}

/// Row-by-row, head-by-head reference of one block.
fn oracle(x: &Tensor, p: &LayerParams, heads: usize, gate: Option<&[bool]>) -> Vec<Vec<f64>> {
    let (t, c) = (x.shape()[0], x.shape()[1]);
    let dh = c / heads;
    let rows: Vec<Vec<f64>> = (0..t).map(|i| x.row(i).to_vec()).collect();
    let h1 = ln(&rows, &p.ln1_gain, &p.ln1_bias);
    let q = lin(&h1, &p.q_proj);
    let mut k = lin(&h1, &p.k_proj);
    let v = lin(&h1, &p.v_proj);
    if let Some(g) = gate {
        for (i, _) in g.iter().enumerate().filter(|(_, &m)| m) {
            k[i].iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let mut mixed = vec![vec![0.0; c]; t];
    for h in 0..heads {
        for i in 0..t {
            let logits: Vec<f64> = (0..t)
                .map(|j| {
                    (0..dh)
                        .map(|d| q[i][h * dh + d] * k[j][h * dh + d])
                        .sum::<f64>()
                        / (dh as f64).sqrt()
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for d in 0..dh {
                mixed[i][h * dh + d] = (0..t).map(|j| e[j] / z * v[j][h * dh + d]).sum();
            }
        }
    }
    let attn = lin(&mixed, &p.o_proj);
    let x1: Vec<Vec<f64>> = rows
        .iter()
        .zip(&attn)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    let h2 = ln(&x1, &p.ln2_gain, &p.ln2_bias);
    let z: Vec<Vec<f64>> = lin(&h2, &p.mlp_in)
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(j, v)| (v + p.mlp_in_bias.data()[j]).max(0.0))
                .collect()
        })
        .collect();
    let m = lin(&z, &p.mlp_out);
    x1.iter()
        .zip(&m)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .enumerate()
                .map(|(j, (x, y))| x + y + p.mlp_out_bias.data()[j])
                .collect()
        })
        .collect()
}

fn max_diff(a: &Tensor, b: &[Vec<f64>]) -> f64 {
    a.data()
        .iter()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn attention_matches_loop_oracle() {
    for seed in 0..3 {
        let p = layer(16, seed);
        let x = Tensor::uniform(&[10, 16], 1.0, &mut ChaCha8Rng::seed_from_u64(seed + 50));
        let mut c = FlopCounter::default();
        let out = global_attention_layer(&x, &p, 4, None, &mut c).unwrap();
        assert!(max_diff(&out.tokens, &oracle(&x, &p, 4, None)) < 1e-12);
        let gate: Vec<bool> = (0..10).map(|i| i % 3 == 1).collect();
        let out = global_attention_layer(&x, &p, 4, Some(&gate), &mut c).unwrap();
        assert!(max_diff(&out.tokens, &oracle(&x, &p, 4, Some(&gate))) < 1e-12);
    }
}

#[test]
fn windows_equal_independent_global_blocks() {
    let p = layer(8, 4);
    let x = Tensor::uniform(&[12, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
    let mut c = FlopCounter::default();
    let win = attention_layer(&x, &p, 2, &AttentionScope::Windows(4), None, false, &mut c).unwrap();
    for w in 0..3 {
        let part = global_attention_layer(&x.rows(w * 4, w * 4 + 4), &p, 2, None, &mut c).unwrap();
        assert!(win.tokens.rows(w * 4, w * 4 + 4).max_abs_diff(&part.tokens) < 1e-12);
    }
}

#[test]
fn measured_counts_equal_the_analytic_counter() {
    let p = layer(8, 5);
    for (n, k) in [(2usize, 4usize), (3, 8), (4, 16)] {
        let x = Tensor::uniform(&[n * k, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        let mut c = FlopCounter::default();
        global_attention_layer(&x, &p, 2, None, &mut c).unwrap();
        global_attention_layer(&x, &p, 2, None, &mut c).unwrap();
        assert_eq!(
            c.attention(),
            count_attention_flops(n, k, 8, 2, None).unwrap()
        );
        let mut c = FlopCounter::default();
        attention_layer(
            &x,
            &p,
            2,
            &AttentionScope::Windows(k / 2),
            None,
            false,
            &mut c,
        )
        .unwrap();
        assert_eq!(
            c.attention(),
            count_attention_flops(n, k, 8, 1, Some(k / 2)).unwrap()
        );
    }
}

#[test]
fn gated_logits_toward_masked_tokens_are_zero() {
    let scene = generate_scene(&SceneConfig::default(), 1).unwrap();
    let params = StackParams::init(&StackConfig::default()).unwrap();
    let n_tok = scene.len() * params.config.low_tokens();
    let mask = Tensor::from_fn(&[scene.len(), params.config.low_tokens()], |i| {
        f64::from(i % 5 == 2)
    });
    let gate = KeyGate::new(&mask, [1, 2], params.config.depth_coarse).unwrap();
    let out = run_coarse(
        &scene.views,
        &params,
        &CoarseOptions {
            gate: Some(&gate),
            record_logits: true,
        },
    )
    .unwrap();
    for (l, heads) in out.logits.iter().enumerate() {
        for logits in heads {
            for i in 0..n_tok {
                for j in (0..n_tok).filter(|j| j % 5 == 2) {
                    let v = logits.data()[i * n_tok + j];
                    if l < 2 {
                        assert_eq!(v, 0.0);
                    } else {
                        assert_ne!(v, 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn empty_gate_is_bitwise_identity() {
    let scene = generate_scene(&SceneConfig::default(), 2).unwrap();
    let params = StackParams::init(&StackConfig::default()).unwrap();
    let plain = run_coarse(&scene.views, &params, &CoarseOptions::default()).unwrap();
    let mask = Tensor::zeros(&[scene.len(), params.config.low_tokens()]);
    let gate = KeyGate::new(&mask, [1, 2], params.config.depth_coarse).unwrap();
    let gated = run_coarse(
        &scene.views,
        &params,
        &CoarseOptions {
            gate: Some(&gate),
            record_logits: false,
        },
    )
    .unwrap();
    for (a, b) in plain.features.iter().zip(&gated.features) {
        assert!(a.bitwise_eq(b));
    }
    assert_eq!(plain.poses, gated.poses);
}

#[test]
fn refiner_outputs_full_resolution_depth() {
    let params = StackParams::init(&StackConfig::default()).unwrap();
    let (gh, gw) = params.config.high_grid();
    let f: Vec<Tensor> = (0..3)
        .map(|s| Tensor::uniform(&[gh, gw, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(s)))
        .collect();
    let out = run_refiner(&f, &params).unwrap();
    assert_eq!(out.depths.len(), 3);
    for d in &out.depths {
        assert_eq!(d.shape(), &[64, 64]);
        assert!(d.data().iter().all(|&v| v > 0.0 && v.is_finite()));
    }
    for pose in &out.poses {
        let q: f64 = pose[..4].iter().map(|v| v * v).sum();
        assert!((q - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_update_layers_pass_tokens_through() {
    let mut p = layer(8, 6);
    p.make_identity();
    let x = Tensor::uniform(&[6, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(6));
    let out = global_attention_layer(&x, &p, 2, None, &mut FlopCounter::default()).unwrap();
    assert!(out.tokens.bitwise_eq(&x));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn global_attention_is_permutation_equivariant(seed in 0u64..1000, shift in 1usize..9) {
        let p = layer(8, seed);
        let x = Tensor::uniform(&[9, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let perm: Vec<usize> = (0..9).map(|i| (i * 2 + shift) % 9).collect();
        let px = Tensor::vstack(&perm.iter().map(|&i| x.rows(i, i + 1)).collect::<Vec<_>>()).unwrap();
        let mut c = FlopCounter::default();
        let a = global_attention_layer(&x, &p, 2, None, &mut c).unwrap().tokens;
        let b = global_attention_layer(&px, &p, 2, None, &mut c).unwrap().tokens;
        for (r, &i) in perm.iter().enumerate() {
            for (u, v) in b.row(r).iter().zip(a.row(i)) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quadratic_law(n in 1usize..6, k in 1usize..40, c in 1usize..9, layers in 1usize..4) {
        let base = count_attention_flops(n, k, c, layers, None).unwrap();
        let wide = count_attention_flops(n, 2 * k, c, layers, None).unwrap();
        prop_assert_eq!(wide.qk_flops, 4 * base.qk_flops);
        prop_assert_eq!(wide.proj_flops, 2 * base.proj_flops);
        prop_assert_eq!(base.qk_flops, base.av_flops);
    }
}
