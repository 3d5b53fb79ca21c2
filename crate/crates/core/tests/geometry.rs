use hdvggt::geometry::*;

#[test]
fn singular_tokens_have_larger_colour_residuals() {
    for seed in 0..4 {
        let scene = generate_scene(&SceneConfig::default(), seed).unwrap();
        let (gh, gw) = scene.token_grid();
        let p = scene.patch_pixels();
        let w = scene.width();
        let (mut sing, mut plain) = (vec![], vec![]);
        for t in 0..scene.len() {
            for i in (0..scene.len()).filter(|&i| i != t) {
                let f = reprojection_residuals(
                    &scene.views[t],
                    &scene.views[i],
                    &scene.depths[t],
                    &scene.depths[i],
                    &scene.cameras[t],
                    &scene.cameras[i],
                )
                .unwrap();
                for tok in 0..gh * gw {
                    let (ty, tx) = (tok / gw, tok % gw);
                    let (mut sum, mut cnt) = (0.0, 0usize);
                    for y in ty * p..(ty + 1) * p {
                        for x in tx * p..(tx + 1) * p {
                            if f.valid.data()[y * w + x] > 0.5 {
                                sum += f.r_c.data()[y * w + x];
                                cnt += 1;
                            }
                        }
                    }
                    if cnt == 0 {
                        continue;
                    }
                    let bucket = if scene.singularity_mask[t].data()[tok] > 0.5 {
                        &mut sing
                    } else {
                        &mut plain
                    };
                    bucket.push(sum / cnt as f64);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(!sing.is_empty() && !plain.is_empty());
        assert!(
            mean(&sing) > 2.0 * mean(&plain),
            "seed {seed}: {} vs {}",
            mean(&sing),
            mean(&plain)
        );
    }
}

#[test]
fn identity_pair_has_zero_residuals() {
    let scene = generate_scene(&SceneConfig::default(), 3).unwrap();
    let f = reprojection_residuals(
        &scene.views[0],
        &scene.views[0],
        &scene.depths[0],
        &scene.depths[0],
        &scene.cameras[0],
        &scene.cameras[0],
    )
    .unwrap();
    assert!(f.valid_count() > 0);
    assert!(f.mean_valid_rd() < 1e-9);
    assert!(f.mean_valid_rc() < 1e-9);
}

#[test]
fn scene_roundtrips_through_disk() {
    let scene = generate_scene(&SceneConfig::default(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_scene(&scene, dir.path()).unwrap();
    let back = load_scene(dir.path()).unwrap();
    assert_eq!(back.len(), scene.len());
    for (a, b) in scene.views.iter().zip(&back.views) {
        assert!(a.max_abs_diff(b) <= 0.5 / 255.0 + 1e-12);
    }
    for (a, b) in scene.depths.iter().zip(&back.depths) {
        assert!(a.bitwise_eq(b));
    }
    assert_eq!(back.mask_matrix().data(), scene.mask_matrix().data());
}

#[test]
fn project_unproject_roundtrip() {
    let scene = generate_scene(&SceneConfig::default(), 6).unwrap();
    for cam in &scene.cameras {
        for (u, v, d) in [(3.5, 7.25, 1.3), (20.0, 2.0, 4.0)] {
            let p = unproject([u, v], d, cam).unwrap();
            let back = project(p, cam).unwrap();
            assert!((back.pixel[0] - u).abs() < 1e-12 && (back.pixel[1] - v).abs() < 1e-12);
            assert!((back.depth - d).abs() < 1e-12);
        }
    }
}
