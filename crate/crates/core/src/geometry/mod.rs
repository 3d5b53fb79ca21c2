//! Pinhole cameras, cross-view reprojection residuals and the seeded
//! synthetic scene generator.

mod camera;
mod io;
mod residual;
mod scene;

pub use camera::{project, unproject, Camera, Mat3, Projection, Vec3};
pub use io::{decode_camera, encode_camera, load_scene, save_scene};
pub use residual::{
    reprojection_residuals, reprojection_residuals_with, sample_bilinear, ResidualField,
    ResidualOptions, DISCONTINUITY_TOL, OCCLUSION_TOL,
};
pub use scene::{generate_scene, render_scene, SceneBundle, SceneConfig, PLANE_Z, SUPERSAMPLE};
