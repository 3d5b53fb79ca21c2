use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::{Camera, Vec3};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// World z of the textured backdrop plane; also the rig's look-at distance.
pub const PLANE_Z: f64 = 4.0;
/// Sub-pixel samples per axis when rendering colour.
pub const SUPERSAMPLE: usize = 3;

const PLANE_CELL: f64 = 0.6;
const BOX_CELL: f64 = 0.45;
const SINGULAR_CELL: f64 = 0.3;
const TEXTURE_AMP: f64 = 0.5;

fn default_views() -> usize {
    4
}
fn default_side() -> usize {
    32
}
fn default_patch() -> usize {
    8
}
fn default_fraction() -> f64 {
    0.1
}
fn default_baseline() -> f64 {
    0.05
}
fn default_boxes() -> usize {
    3
}

/// Parameters of a synthetic multi-view scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_views")]
    pub views: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_patch")]
    pub patch: usize,
    /// Fraction of token cells whose appearance is re-randomized per view.
    #[serde(default = "default_fraction")]
    pub singularity_fraction: f64,
    /// Distance between adjacent cameras as a fraction of the scene distance.
    #[serde(default = "default_baseline")]
    pub baseline: f64,
    /// Number of axis-aligned boxes in front of the plane.
    #[serde(default = "default_boxes")]
    pub boxes: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            views: default_views(),
            height: default_side(),
            width: default_side(),
            patch: default_patch(),
            singularity_fraction: default_fraction(),
            baseline: default_baseline(),
            boxes: default_boxes(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("scene.{field}: {why}")));
        if self.views < 2 {
            return bad(
                "views",
                format!("need at least 2 views, got {}", self.views),
            );
        }
        if self.patch == 0 {
            return bad("patch", "must be positive".into());
        }
        if self.height == 0 || !self.height.is_multiple_of(self.patch) {
            return bad(
                "height",
                format!(
                    "{} is not a positive multiple of patch {}",
                    self.height, self.patch
                ),
            );
        }
        if self.width == 0 || !self.width.is_multiple_of(self.patch) {
            return bad(
                "width",
                format!(
                    "{} is not a positive multiple of patch {}",
                    self.width, self.patch
                ),
            );
        }
        if !(0.0..=0.5).contains(&self.singularity_fraction) {
            return bad(
                "singularity_fraction",
                format!("{} is outside [0, 0.5]", self.singularity_fraction),
            );
        }
        if !(self.baseline > 0.0 && self.baseline <= 0.5) {
            return bad("baseline", format!("{} is outside (0, 0.5]", self.baseline));
        }
        if self.boxes > 16 {
            return bad("boxes", format!("at most 16 boxes, got {}", self.boxes));
        }
        Ok(())
    }

    pub fn token_grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    /// Number of singular token cells for this configuration.
    pub fn singular_token_count(&self) -> usize {
        let (gh, gw) = self.token_grid();
        (self.singularity_fraction * (gh * gw) as f64).round() as usize
    }
}

/// N rendered views with exact depth, cameras and the singular-token truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub config: SceneConfig,
    pub seed: u64,
    /// Render scale relative to `config.height × config.width`.
    pub scale: usize,
    pub views: Vec<Tensor>,
    pub depths: Vec<Tensor>,
    pub cameras: Vec<Camera>,
    pub singularity_mask: Vec<Tensor>,
}

impl SceneBundle {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn height(&self) -> usize {
        self.config.height * self.scale
    }

    pub fn width(&self) -> usize {
        self.config.width * self.scale
    }

    /// Patch edge in pixels of this rendering.
    pub fn patch_pixels(&self) -> usize {
        self.config.patch * self.scale
    }

    pub fn token_grid(&self) -> (usize, usize) {
        self.config.token_grid()
    }

    /// Ground-truth singularity labels stacked as `N×K`.
    pub fn mask_matrix(&self) -> Tensor {
        let (gh, gw) = self.token_grid();
        let data = self
            .singularity_mask
            .iter()
            .flat_map(|m| m.data().iter().copied())
            .collect();
        Tensor::from_parts(vec![self.len(), gh * gw], data)
    }
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64, iz: i64, ch: u64) -> f64 {
    let mut h = mix64(seed ^ ch.wrapping_mul(0xD1B5_4A32_D192_ED03));
    h = mix64(h ^ ix as u64);
    h = mix64(h ^ iy as u64);
    h = mix64(h ^ iz as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Smooth solid value noise in `[0, 1)`.
fn value_noise(seed: u64, p: Vec3, ch: u64) -> f64 {
    let b = p.map(f64::floor);
    let f = [fade(p[0] - b[0]), fade(p[1] - b[1]), fade(p[2] - b[2])];
    let (x0, y0, z0) = (b[0] as i64, b[1] as i64, b[2] as i64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
        let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
            * (if dy == 1 { f[1] } else { 1.0 - f[1] })
            * (if dz == 1 { f[2] } else { 1.0 - f[2] });
        acc += w * lattice(seed, x0 + dx as i64, y0 + dy as i64, z0 + dz as i64, ch);
    }
    acc
}

#[derive(Debug, Clone, Copy)]
struct SolidTexture {
    seed: u64,
    cell: f64,
    base: [f64; 3],
    amp: f64,
}

impl SolidTexture {
    fn random(rng: &mut ChaCha8Rng, cell: f64, lo: f64, hi: f64, amp: f64) -> Self {
        Self {
            seed: rng.gen(),
            cell,
            base: [
                rng.gen_range(lo..hi),
                rng.gen_range(lo..hi),
                rng.gen_range(lo..hi),
            ],
            amp,
        }
    }

    fn sample(&self, p: Vec3) -> [f64; 3] {
        let q = p.map(|v| v / self.cell);
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let n = value_noise(self.seed, q, ch as u64);
            *o = (self.base[ch] + self.amp * (2.0 * n - 1.0)).clamp(0.0, 1.0);
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct AaBox {
    lo: Vec3,
    hi: Vec3,
}

impl AaBox {
    fn hit(&self, o: Vec3, d: Vec3) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a] < self.lo[a] || o[a] > self.hi[a] {
                    return None;
                }
                continue;
            }
            let t1 = (self.lo[a] - o[a]) / d[a];
            let t2 = (self.hi[a] - o[a]) / d[a];
            t_near = t_near.max(t1.min(t2));
            t_far = t_far.min(t1.max(t2));
        }
        (t_near <= t_far && t_near > 0.0).then_some(t_near)
    }
}

struct Layout {
    cameras: Vec<Camera>,
    boxes: Vec<AaBox>,
    plane_tex: SolidTexture,
    box_tex: Vec<SolidTexture>,
    singular: Vec<bool>,
    singular_tex: Vec<SolidTexture>,
}

fn layout(cfg: &SceneConfig, seed: u64) -> Result<Layout> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let f = w;
    let step = 2.0 * (cfg.baseline / 2.0).asin();
    let target = [0.0, 0.0, PLANE_Z];
    let mut cameras = Vec::with_capacity(cfg.views);
    for k in 0..cfg.views {
        let theta = (k as f64 - (cfg.views as f64 - 1.0) / 2.0) * step;
        let eye = [PLANE_Z * theta.sin(), 0.0, PLANE_Z * (1.0 - theta.cos())];
        cameras.push(Camera::look_at(
            eye,
            target,
            f,
            f,
            (w - 1.0) / 2.0,
            (h - 1.0) / 2.0,
        )?);
    }

    let mut boxes = Vec::with_capacity(cfg.boxes);
    for _ in 0..cfg.boxes {
        let c = [
            rng.gen_range(-1.1..1.1),
            rng.gen_range(-1.1..1.1),
            rng.gen_range(3.0..3.4),
        ];
        let e = [
            rng.gen_range(0.25..0.5),
            rng.gen_range(0.25..0.5),
            rng.gen_range(0.1..0.3),
        ];
        boxes.push(AaBox {
            lo: [c[0] - e[0], c[1] - e[1], c[2] - e[2]],
            hi: [c[0] + e[0], c[1] + e[1], c[2] + e[2]],
        });
    }
    let plane_tex = SolidTexture::random(&mut rng, PLANE_CELL, 0.3, 0.7, TEXTURE_AMP);
    let box_tex = (0..cfg.boxes)
        .map(|_| SolidTexture::random(&mut rng, BOX_CELL, 0.2, 0.8, TEXTURE_AMP))
        .collect();

    let (gh, gw) = cfg.token_grid();
    let mut singular = vec![false; gh * gw];
    for i in sample(&mut rng, gh * gw, cfg.singular_token_count()) {
        singular[i] = true;
    }
    let singular_tex = (0..cfg.views)
        .map(|_| SolidTexture::random(&mut rng, SINGULAR_CELL, 0.1, 0.9, TEXTURE_AMP))
        .collect();
    Ok(Layout {
        cameras,
        boxes,
        plane_tex,
        box_tex,
        singular,
        singular_tex,
    })
}

impl Layout {
    /// Nearest surface along `o + t·d`: `(t, surface)` with surface 0 the plane.
    fn trace(&self, o: Vec3, d: Vec3) -> (f64, usize) {
        let mut best = ((PLANE_Z - o[2]) / d[2], 0);
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some(t) = b.hit(o, d) {
                if t < best.0 {
                    best = (t, i + 1);
                }
            }
        }
        best
    }

    fn shade(&self, p: Vec3, surface: usize, view: usize, singular: bool) -> [f64; 3] {
        if singular {
            self.singular_tex[view].sample(p)
        } else if surface == 0 {
            self.plane_tex.sample(p)
        } else {
            self.box_tex[surface - 1].sample(p)
        }
    }
}

/// Renders the scene described by `(cfg, seed)` at native resolution.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<SceneBundle> {
    render_scene(cfg, seed, 1)
}

/// Renders the scene described by `(cfg, seed)` at `scale` times the
/// configured resolution; geometry, textures and singular cells are shared
/// across scales.
pub fn render_scene(cfg: &SceneConfig, seed: u64, scale: usize) -> Result<SceneBundle> {
    cfg.validate()?;
    if scale == 0 {
        return Err(Error::Config("render scale must be positive".into()));
    }
    let lay = layout(cfg, seed)?;
    let (h, w) = (cfg.height * scale, cfg.width * scale);
    let patch = cfg.patch * scale;
    let (gh, gw) = cfg.token_grid();
    let mut views = Vec::with_capacity(cfg.views);
    let mut depths = Vec::with_capacity(cfg.views);
    let mut cameras = Vec::with_capacity(cfg.views);
    let mut masks = Vec::with_capacity(cfg.views);

    for (v, base_cam) in lay.cameras.iter().enumerate() {
        let cam = base_cam.rescaled(scale as f64);
        let o = cam.center();
        let mut img = vec![0.0; h * w * 3];
        let mut depth = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let singular = lay.singular[(y / patch) * gw + x / patch];
                depth[p] = lay.trace(o, cam.ray_direction([x as f64, y as f64])).0;
                let mut acc = [0.0; 3];
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let off = |s: usize| (s as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                        let d = cam.ray_direction([x as f64 + off(sx), y as f64 + off(sy)]);
                        let (t, surface) = lay.trace(o, d);
                        let hit = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
                        let c = lay.shade(hit, surface, v, singular);
                        for ch in 0..3 {
                            acc[ch] += c[ch];
                        }
                    }
                }
                let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
                for ch in 0..3 {
                    img[p * 3 + ch] = acc[ch] / n;
                }
            }
        }
        views.push(Tensor::from_parts(vec![h, w, 3], img));
        depths.push(Tensor::from_parts(vec![h, w], depth));
        cameras.push(cam);
        let mask = lay
            .singular
            .iter()
            .map(|&s| if s { 1.0 } else { 0.0 })
            .collect();
        masks.push(Tensor::from_parts(vec![gh, gw], mask));
    }
    Ok(SceneBundle {
        config: cfg.clone(),
        seed,
        scale,
        views,
        depths,
        cameras,
        singularity_mask: masks,
    })
}
