//! Declarative scene and perturbation configs (TOML) mapped onto the synth
//! module's types.

use std::path::Path;

use geomoe::linalg::{Rotation, Sim3, Vec3};
use geomoe::synth::{CameraParams, NoiseSpec, Scene, Surface};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_scene_version")]
    pub version: u32,
    /// [height, width]
    pub resolution: [usize; 2],
    pub cameras: Vec<CameraConfig>,
    pub surfaces: Vec<SurfaceConfig>,
}

fn default_scene_version() -> u32 {
    SCENE_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    pub fx: f64,
    pub fy: f64,
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum SurfaceConfig {
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Cuboid {
        center: [f64; 3],
        half_extents: [f64; 3],
        /// [axis_x, axis_y, axis_z, angle_radians]; identity when omitted.
        #[serde(default)]
        rotation_axis_angle: Option<[f64; 4]>,
    },
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

/// Camera-to-world rotation from a look-at triple: +z points at the target,
/// +y stays near the up vector.
fn look_at_rotation(position: Vec3, target: Vec3, up: Vec3) -> Result<Rotation, CliError> {
    let forward = (target - position)
        .normalized()
        .ok_or_else(|| CliError::Config("camera look_at coincides with position".to_string()))?;
    let right = up
        .cross(&forward)
        .normalized()
        .ok_or_else(|| CliError::Config("camera up vector parallel to view direction".to_string()))?;
    let cam_y = forward.cross(&right);
    // Columns are the camera axes expressed in world coordinates; the
    // camera +y axis follows the up vector (right-handed, det +1).
    let m = geomoe::linalg::Mat3::from_cols(right, cam_y, forward);
    Rotation::from_matrix(&m).map_err(|e| CliError::Config(e.to_string()))
}

impl SceneConfig {
    pub fn load(path: &Path) -> Result<SceneConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg: SceneConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if cfg.version != SCENE_VERSION {
            return Err(CliError::Config(format!(
                "unsupported scene version {}, expected {SCENE_VERSION}",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn to_scene(&self) -> Result<Scene, CliError> {
        let mut cameras = Vec::with_capacity(self.cameras.len());
        for c in &self.cameras {
            let rotation = look_at_rotation(vec3(c.position), vec3(c.look_at), vec3(c.up))?;
            cameras.push(
                CameraParams::new(rotation, vec3(c.position), c.fx, c.fy)
                    .map_err(|e| CliError::Config(e.to_string()))?,
            );
        }
        let mut surfaces = Vec::with_capacity(self.surfaces.len());
        for s in &self.surfaces {
            surfaces.push(match s {
                SurfaceConfig::Plane { point, normal } => Surface::Plane {
                    point: vec3(*point),
                    normal: vec3(*normal),
                },
                SurfaceConfig::Sphere { center, radius } => Surface::Sphere {
                    center: vec3(*center),
                    radius: *radius,
                },
                SurfaceConfig::Cuboid {
                    center,
                    half_extents,
                    rotation_axis_angle,
                } => {
                    let rotation = match rotation_axis_angle {
                        Some([x, y, z, angle]) => {
                            Rotation::from_axis_angle(Vec3::new(*x, *y, *z), *angle)
                                .map_err(|e| CliError::Config(e.to_string()))?
                        }
                        None => Rotation::identity(),
                    };
                    Surface::Cuboid {
                        center: vec3(*center),
                        half_extents: vec3(*half_extents),
                        rotation,
                    }
                }
            });
        }
        let scene = Scene {
            surfaces,
            cameras,
            resolution: (self.resolution[0], self.resolution[1]),
        };
        scene
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(scene)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub depth_rel: f64,
    #[serde(default)]
    pub normal_tilt_deg: f64,
    #[serde(default)]
    pub pose_rot_deg: f64,
    #[serde(default)]
    pub pose_trans: f64,
    #[serde(default)]
    pub sim3: Option<Sim3Config>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sim3Config {
    pub scale: f64,
    pub rotation_axis_angle: [f64; 4],
    pub translation: [f64; 3],
}

impl NoiseConfig {
    pub fn load(path: &Path) -> Result<NoiseConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_noise_spec(&self) -> Result<NoiseSpec, CliError> {
        let sim3 = match &self.sim3 {
            Some(c) => {
                let [x, y, z, angle] = c.rotation_axis_angle;
                let rotation = Rotation::from_axis_angle(Vec3::new(x, y, z), angle)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                Some(
                    Sim3::new(c.scale, rotation, vec3(c.translation))
                        .map_err(|e| CliError::Config(e.to_string()))?,
                )
            }
            None => None,
        };
        let spec = NoiseSpec {
            sim3,
            depth_rel: self.depth_rel,
            normal_tilt_deg: self.normal_tilt_deg,
            pose_rot_deg: self.pose_rot_deg,
            pose_trans: self.pose_trans,
            seed: self.seed,
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }
}
