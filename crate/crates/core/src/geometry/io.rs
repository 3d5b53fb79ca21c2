use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::camera::Camera;
use super::scene::{SceneBundle, SceneConfig};
use crate::error::{Error, Result};
use crate::imageio::{read_pgm, read_ppm, write_pgm, write_ppm};
use crate::tensor::{read_hdt, write_hdt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "W")]
    w: usize,
    patch: usize,
    seed: u64,
    singularity_fraction: f64,
    baseline: f64,
    boxes: usize,
    scale: usize,
}

/// Camera as 16 lines: fx fy cx cy, rotation row-major, translation.
pub fn encode_camera(cam: &Camera) -> String {
    let mut vals = vec![cam.fx, cam.fy, cam.cx, cam.cy];
    vals.extend(cam.rotation.iter().flatten());
    vals.extend(cam.translation);
    vals.iter().map(|v| format!("{v}\n")).collect()
}

pub fn decode_camera(text: &str, path: &Path) -> Result<Camera> {
    let vals = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format("camera", path, e.to_string()))?;
    if vals.len() != 16 {
        return Err(Error::format(
            "camera",
            path,
            format!("expected 16 values, found {}", vals.len()),
        ));
    }
    let r = |i: usize| [vals[4 + 3 * i], vals[5 + 3 * i], vals[6 + 3 * i]];
    Camera::new(
        vals[0],
        vals[1],
        vals[2],
        vals[3],
        [r(0), r(1), r(2)],
        [vals[13], vals[14], vals[15]],
    )
}

/// Writes the bundle as `view_###.ppm`, `depth_###.hdt`, `camera_###.txt`,
/// `gtmask_###.pgm` and `meta.json`.
pub fn save_scene(bundle: &SceneBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for i in 0..bundle.len() {
        write_ppm(dir.join(format!("view_{i:03}.ppm")), &bundle.views[i])?;
        write_hdt(&bundle.depths[i], dir.join(format!("depth_{i:03}.hdt")))?;
        fs::write(
            dir.join(format!("camera_{i:03}.txt")),
            encode_camera(&bundle.cameras[i]),
        )?;
        write_pgm(
            dir.join(format!("gtmask_{i:03}.pgm")),
            &bundle.singularity_mask[i],
        )?;
    }
    let c = &bundle.config;
    let meta = Meta {
        n: bundle.len(),
        h: bundle.height(),
        w: bundle.width(),
        patch: bundle.patch_pixels(),
        seed: bundle.seed,
        singularity_fraction: c.singularity_fraction,
        baseline: c.baseline,
        boxes: c.boxes,
        scale: bundle.scale,
    };
    fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(())
}

/// Reads a bundle written by [`save_scene`]. Images come back 8-bit quantised.
pub fn load_scene(dir: impl AsRef<Path>) -> Result<SceneBundle> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::MissingArtifact(meta_path));
    }
    let meta: Meta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
    if meta.scale == 0
        || !meta.h.is_multiple_of(meta.scale)
        || !meta.w.is_multiple_of(meta.scale)
        || !meta.patch.is_multiple_of(meta.scale)
    {
        return Err(Error::format(
            "scene meta",
            &meta_path,
            "inconsistent scale",
        ));
    }
    let config = SceneConfig {
        views: meta.n,
        height: meta.h / meta.scale,
        width: meta.w / meta.scale,
        patch: meta.patch / meta.scale,
        singularity_fraction: meta.singularity_fraction,
        baseline: meta.baseline,
        boxes: meta.boxes,
    };
    config.validate()?;
    let need = |name: String| {
        let p = dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact(p))
        }
    };
    let (mut views, mut depths, mut cameras, mut masks) = (vec![], vec![], vec![], vec![]);
    for i in 0..meta.n {
        views.push(read_ppm(need(format!("view_{i:03}.ppm"))?)?);
        depths.push(read_hdt(need(format!("depth_{i:03}.hdt"))?)?);
        let cam_path = need(format!("camera_{i:03}.txt"))?;
        cameras.push(decode_camera(&fs::read_to_string(&cam_path)?, &cam_path)?);
        masks.push(read_pgm(need(format!("gtmask_{i:03}.pgm"))?)?.map(|v| {
            if v > 0.5 {
                1.0
            } else {
                0.0
            }
        }));
        if views[i].shape() != [meta.h, meta.w, 3] || depths[i].shape() != [meta.h, meta.w] {
            return Err(Error::format(
                "scene",
                dir,
                format!("view {i} does not match meta.json dimensions"),
            ));
        }
    }
    Ok(SceneBundle {
        config,
        seed: meta.seed,
        scale: meta.scale,
        views,
        depths,
        cameras,
        singularity_mask: masks,
    })
}
