use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

fn mat_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

/// Pinhole camera with world-to-camera extrinsics `x_cam = R·x_world + t`.
///
/// Camera axes follow the image: x right, y down, z forward. Pixel
/// coordinates put the centre of pixel `(i, j)` at `(j, i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: [f64; 2],
    /// Camera-frame z. Non-positive values mean the point is behind the camera.
    pub depth: f64,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        translation: Vec3,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot(r[i], r[j]) - expect).abs() > 1e-9 {
                    return Err(Error::Config("rotation is not orthonormal".into()));
                }
            }
        }
        if (dot(cross(r[0], r[1]), r[2]) - 1.0).abs() > 1e-9 {
            return Err(Error::Config("rotation determinant is not +1".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, image y axis along world +y.
    pub fn look_at(eye: Vec3, target: Vec3, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let forward = normalize(sub(target, eye));
        let right = normalize(cross([0.0, 1.0, 0.0], forward));
        let down = cross(forward, right);
        let rotation = [right, down, forward];
        let rc = mat_vec(&rotation, eye);
        Self::new(fx, fy, cx, cy, rotation, [-rc[0], -rc[1], -rc[2]])
    }

    pub fn to_camera_frame(&self, point: Vec3) -> Vec3 {
        let p = mat_vec(&self.rotation, point);
        [
            p[0] + self.translation[0],
            p[1] + self.translation[1],
            p[2] + self.translation[2],
        ]
    }

    pub fn to_world_frame(&self, point: Vec3) -> Vec3 {
        mat_t_vec(&self.rotation, sub(point, self.translation))
    }

    /// Optical centre in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.to_world_frame([0.0, 0.0, 0.0])
    }

    /// World-space direction through `pixel` whose camera-frame z is 1.
    pub fn ray_direction(&self, pixel: [f64; 2]) -> Vec3 {
        let d = [
            (pixel[0] - self.cx) / self.fx,
            (pixel[1] - self.cy) / self.fy,
            1.0,
        ];
        mat_t_vec(&self.rotation, d)
    }

    /// Same pose, intrinsics for an image `scale` times larger.
    pub fn rescaled(&self, scale: f64) -> Camera {
        Camera {
            fx: self.fx * scale,
            fy: self.fy * scale,
            cx: (self.cx + 0.5) * scale - 0.5,
            cy: (self.cy + 0.5) * scale - 0.5,
            ..*self
        }
    }
}

const MIN_DEPTH: f64 = 1e-12;

pub fn project(point: Vec3, cam: &Camera) -> Result<Projection> {
    let p = cam.to_camera_frame(point);
    if p[2].abs() < MIN_DEPTH {
        return Err(Error::DegenerateProjection(p[2]));
    }
    Ok(Projection {
        pixel: [cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy],
        depth: p[2],
    })
}

pub fn unproject(pixel: [f64; 2], depth: f64, cam: &Camera) -> Result<Vec3> {
    if !(depth > 0.0) {
        return Err(Error::Domain(format!(
            "unproject needs positive depth, got {depth}"
        )));
    }
    let p = [
        (pixel[0] - cam.cx) / cam.fx * depth,
        (pixel[1] - cam.cy) / cam.fy * depth,
        depth,
    ];
    Ok(cam.to_world_frame(p))
}
