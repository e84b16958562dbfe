//! Synthetic data: analytic surfaces ray-cast to depth/pointmap/normal grids
//! under known cameras, perturbation models with exactly known magnitudes,
//! and the multi-domain token dataset for the expert-specialization
//! experiment. Everything is a pure function of its seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::depthprior::DepthMap;
use crate::error::{Error, Result};
use crate::eval::Pose;
use crate::linalg::{Rotation, Sim3, Vec3};
use crate::losses::{NormalMap, PointMap};
use crate::numeric::Matrix;

/// Rays shorter than this camera depth never count as hits.
const NEAR_CLIP: f64 = 1e-6;

/// 9-parameter camera: rotation quaternion (4) + translation (3) + focal
/// lengths (2), camera-to-world. The principal point sits at the image center
/// and is not a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub rotation: Rotation,
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
}

impl CameraParams {
    pub fn new(rotation: Rotation, translation: Vec3, fx: f64, fy: f64) -> Result<CameraParams> {
        if !(fx.is_finite() && fx > 0.0 && fy.is_finite() && fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        Ok(CameraParams {
            rotation,
            translation,
            fx,
            fy,
        })
    }

    pub fn to_vector9(&self) -> [f64; 9] {
        let q = self.rotation.to_array();
        [
            q[0],
            q[1],
            q[2],
            q[3],
            self.translation.x,
            self.translation.y,
            self.translation.z,
            self.fx,
            self.fy,
        ]
    }

    pub fn from_vector9(v: &[f64; 9]) -> Result<CameraParams> {
        let rotation = Rotation::from_quat(v[0], v[1], v[2], v[3])?;
        CameraParams::new(rotation, Vec3::new(v[4], v[5], v[6]), v[7], v[8])
    }

    pub fn pose(&self) -> Pose {
        Pose {
            rotation: self.rotation,
            translation: self.translation,
        }
    }
}

/// Analytic surfaces in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Surface {
    Plane {
        point: Vec3,
        normal: Vec3,
    },
    Sphere {
        center: Vec3,
        radius: f64,
    },
    Cuboid {
        center: Vec3,
        half_extents: Vec3,
        rotation: Rotation,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub surfaces: Vec<Surface>,
    pub cameras: Vec<CameraParams>,
    /// (height, width)
    pub resolution: (usize, usize),
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.surfaces.is_empty() {
            return Err(Error::InvalidParameter("scene has no surfaces".to_string()));
        }
        if self.cameras.is_empty() {
            return Err(Error::InvalidParameter("scene has no cameras".to_string()));
        }
        if self.resolution.0 < 2 || self.resolution.1 < 2 {
            return Err(Error::InvalidParameter(format!(
                "resolution must be at least 2x2, got {}x{}",
                self.resolution.0, self.resolution.1
            )));
        }
        for s in &self.surfaces {
            match s {
                Surface::Plane { normal, .. } => {
                    if normal.normalized().is_none() {
                        return Err(Error::InvalidParameter("plane normal is zero".to_string()));
                    }
                }
                Surface::Sphere { radius, .. } => {
                    if !(radius.is_finite() && *radius > 0.0) {
                        return Err(Error::InvalidParameter(format!(
                            "sphere radius must be positive, got {radius}"
                        )));
                    }
                }
                Surface::Cuboid { half_extents, .. } => {
                    if !(half_extents.x > 0.0 && half_extents.y > 0.0 && half_extents.z > 0.0) {
                        return Err(Error::InvalidParameter(
                            "cuboid half extents must be positive".to_string(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One rendered camera view: mutually consistent depth, camera-frame
/// pointmap, and camera-frame normals.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub depth: DepthMap,
    pub points: PointMap,
    pub normals: NormalMap,
}

/// Intersection in world space: ray parameter (camera depth) and outward
/// surface normal.
fn intersect(surface: &Surface, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
    match surface {
        Surface::Plane { point, normal } => {
            let n = normal.normalized()?;
            let denom = dir.dot(&n);
            if denom.abs() < 1e-15 {
                return None;
            }
            let t = (*point - *origin).dot(&n) / denom;
            (t > NEAR_CLIP).then_some((t, n))
        }
        Surface::Sphere { center, radius } => {
            let oc = *origin - *center;
            let a = dir.dot(dir);
            let b = 2.0 * oc.dot(dir);
            let c = oc.dot(&oc) - radius * radius;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t0 = (-b - sq) / (2.0 * a);
            let t1 = (-b + sq) / (2.0 * a);
            let t = if t0 > NEAR_CLIP {
                t0
            } else if t1 > NEAR_CLIP {
                t1
            } else {
                return None;
            };
            let hit = *origin + *dir * t;
            let n = ((hit - *center) * (1.0 / *radius)).normalized()?;
            Some((t, n))
        }
        Surface::Cuboid {
            center,
            half_extents,
            rotation,
        } => {
            let inv = rotation.inverse();
            let o = inv.rotate(&(*origin - *center));
            let d = inv.rotate(dir);
            let mut tmin = f64::NEG_INFINITY;
            let mut tmax = f64::INFINITY;
            let mut axis_min = 0usize;
            for axis in 0..3 {
                let ha = half_extents.component(axis);
                let da = d.component(axis);
                let oa = o.component(axis);
                if da.abs() < 1e-15 {
                    if oa.abs() > ha {
                        return None;
                    }
                    continue;
                }
                let mut t0 = (-ha - oa) / da;
                let mut t1 = (ha - oa) / da;
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                if t0 > tmin {
                    tmin = t0;
                    axis_min = axis;
                }
                tmax = tmax.min(t1);
                if tmin > tmax {
                    return None;
                }
            }
            if tmin <= NEAR_CLIP {
                return None;
            }
            let mut n_local = Vec3::ZERO;
            let side = if d.component(axis_min) > 0.0 { -1.0 } else { 1.0 };
            n_local.set_component(axis_min, side);
            Some((tmin, rotation.rotate(&n_local)))
        }
    }
}

/// Ray-casts one camera: per pixel, depth is the camera-frame z of the
/// nearest hit, the pointmap is the camera-frame intersection, and the normal
/// is the analytic surface normal in the camera frame oriented toward the
/// camera. Unprojecting the depth with (fx, fy) reproduces the pointmap
/// exactly by construction.
pub fn render(scene: &Scene, camera_index: usize) -> Result<RenderedView> {
    scene.validate()?;
    let cam = scene
        .cameras
        .get(camera_index)
        .ok_or_else(|| Error::InvalidParameter(format!("no camera {camera_index}")))?;
    let (h, w) = scene.resolution;
    let cx = w as f64 / 2.0;
    let cy = h as f64 / 2.0;
    let world_from_cam = cam.rotation;
    let cam_from_world = cam.rotation.inverse();

    let mut depth_vals = vec![0.0; h * w];
    let mut depth_valid = vec![false; h * w];
    let mut points = vec![Vec3::ZERO; h * w];
    let mut point_valid = vec![false; h * w];
    let mut normals = vec![Vec3::ZERO; h * w];
    let mut normal_valid = vec![false; h * w];

    for i in 0..h {
        for j in 0..w {
            // Ray with unit z in the camera frame so the parameter equals
            // camera depth.
            let dir_cam = Vec3::new(
                (j as f64 + 0.5 - cx) / cam.fx,
                (i as f64 + 0.5 - cy) / cam.fy,
                1.0,
            );
            let dir_world = world_from_cam.rotate(&dir_cam);
            let mut best: Option<(f64, Vec3)> = None;
            for s in &scene.surfaces {
                if let Some((t, n)) = intersect(s, &cam.translation, &dir_world) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, n));
                    }
                }
            }
            if let Some((t, n_world)) = best {
                let p = i * w + j;
                depth_vals[p] = t;
                depth_valid[p] = true;
                points[p] = dir_cam * t;
                point_valid[p] = true;
                let mut n_cam = cam_from_world.rotate(&n_world);
                // Face the camera along the viewing ray.
                if n_cam.dot(&dir_cam) > 0.0 {
                    n_cam = -n_cam;
                }
                if let Some(nu) = n_cam.normalized() {
                    normals[p] = nu;
                    normal_valid[p] = true;
                }
            }
        }
    }

    Ok(RenderedView {
        depth: DepthMap::new(h, w, depth_vals, depth_valid)?,
        points: PointMap::new(h, w, points, point_valid)?,
        normals: NormalMap::new(h, w, normals, normal_valid)?,
    })
}

/// Exact unprojection matching `render`'s ray parameterization.
pub fn unproject(depth: &DepthMap, fx: f64, fy: f64) -> Result<PointMap> {
    let (h, w) = (depth.height(), depth.width());
    let cx = w as f64 / 2.0;
    let cy = h as f64 / 2.0;
    let mut points = vec![Vec3::ZERO; h * w];
    for i in 0..h {
        for j in 0..w {
            if depth.valid_at(i, j) {
                let d = depth.at(i, j);
                points[i * w + j] = Vec3::new(
                    (j as f64 + 0.5 - cx) / fx * d,
                    (i as f64 + 0.5 - cy) / fy * d,
                    d,
                );
            }
        }
    }
    PointMap::new(h, w, points, depth.valid().to_vec())
}

/// Rendered views plus the cameras that produced them.
#[derive(Debug, Clone)]
pub struct SceneData {
    pub views: Vec<RenderedView>,
    pub cameras: Vec<CameraParams>,
}

/// Perturbation magnitudes. Every noise component has an exactly known
/// magnitude so tests can state expected metric values in closed form:
/// depth noise multiplies by (1 +- depth_rel), normals tilt by exactly
/// `normal_tilt_deg` about a random perpendicular axis, poses rotate by
/// exactly `pose_rot_deg` and translate by a vector of norm `pose_trans`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sim3: Option<Sim3>,
    pub depth_rel: f64,
    pub normal_tilt_deg: f64,
    pub pose_rot_deg: f64,
    pub pose_trans: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn zero(seed: u64) -> NoiseSpec {
        NoiseSpec {
            sim3: None,
            depth_rel: 0.0,
            normal_tilt_deg: 0.0,
            pose_rot_deg: 0.0,
            pose_trans: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.depth_rel) {
            return Err(Error::InvalidParameter(format!(
                "depth_rel must be in [0, 1) to keep depths positive, got {}",
                self.depth_rel
            )));
        }
        for (name, v) in [
            ("normal_tilt_deg", self.normal_tilt_deg),
            ("pose_rot_deg", self.pose_rot_deg),
            ("pose_trans", self.pose_trans),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Realized per-view noise, kept so the perturbation can be inverted exactly.
#[derive(Debug, Clone)]
pub struct ViewNoise {
    /// +1/-1 per pixel for the multiplicative depth noise.
    pub depth_signs: Vec<f64>,
    /// Tilt axis per pixel (perpendicular to the original normal); zero for
    /// pixels without a valid normal.
    pub normal_axes: Vec<Vec3>,
}

#[derive(Debug, Clone)]
pub struct PoseNoise {
    pub rot_axis: Vec3,
    pub trans_dir: Vec3,
}

/// Ground-truth record of an applied perturbation: the spec plus the realized
/// per-pixel and per-pose draws. `apply_inverse` restores originals exactly
/// (up to rounding).
#[derive(Debug, Clone)]
pub struct PerturbRecord {
    pub spec: NoiseSpec,
    pub views: Vec<ViewNoise>,
    pub poses: Vec<PoseNoise>,
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if let Some(u) = v.normalized() {
            if v.norm() > 1e-3 {
                return u;
            }
        }
    }
}

/// Unit vector perpendicular to n, drawn from the seeded stream.
fn random_perpendicular(n: &Vec3, rng: &mut impl Rng) -> Vec3 {
    loop {
        let r = random_unit(rng);
        let proj = r - *n * r.dot(n);
        if let Some(u) = proj.normalized() {
            if proj.norm() > 1e-6 {
                return u;
            }
        }
    }
}

/// Applies the noise spec to rendered outputs: the global Sim(3) to pointmap
/// points, multiplicative sign noise to depths, exact angular tilt to
/// normals, and exact rotation/translation offsets to camera poses.
pub fn perturb(data: &SceneData, spec: &NoiseSpec) -> Result<(SceneData, PerturbRecord)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tilt_rad = spec.normal_tilt_deg.to_radians();
    let pose_rad = spec.pose_rot_deg.to_radians();

    let mut views = Vec::with_capacity(data.views.len());
    let mut view_noise = Vec::with_capacity(data.views.len());
    for view in &data.views {
        let n_pixels = view.depth.values().len();
        // Depth: multiply by (1 + depth_rel * sign).
        let signs: Vec<f64> = (0..n_pixels)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let depth_vals: Vec<f64> = view
            .depth
            .values()
            .iter()
            .zip(signs.iter())
            .map(|(v, s)| v * (1.0 + spec.depth_rel * s))
            .collect();
        let depth = DepthMap::new(
            view.depth.height(),
            view.depth.width(),
            depth_vals,
            view.depth.valid().to_vec(),
        )?;

        // Pointmap: global Sim(3) on valid points.
        let points = match &spec.sim3 {
            Some(t) => view.points.map_points(|p| t.apply(p)),
            None => view.points.clone(),
        };

        // Normals: exact tilt about a random perpendicular axis.
        let mut axes = vec![Vec3::ZERO; n_pixels];
        let mut normals = view.normals.normals().to_vec();
        for (p, n) in normals.iter_mut().enumerate() {
            if !view.normals.valid()[p] {
                continue;
            }
            let axis = random_perpendicular(n, &mut rng);
            axes[p] = axis;
            if tilt_rad != 0.0 {
                let rot = Rotation::from_axis_angle(axis, tilt_rad)?;
                *n = rot.rotate(n).normalized().expect("rotation preserves norm");
            }
        }
        let normals = NormalMap::new(
            view.normals.height(),
            view.normals.width(),
            normals,
            view.normals.valid().to_vec(),
        )?;

        views.push(RenderedView {
            depth,
            points,
            normals,
        });
        view_noise.push(ViewNoise {
            depth_signs: signs,
            normal_axes: axes,
        });
    }

    let mut cameras = Vec::with_capacity(data.cameras.len());
    let mut pose_noise = Vec::with_capacity(data.cameras.len());
    for cam in &data.cameras {
        let rot_axis = random_unit(&mut rng);
        let trans_dir = random_unit(&mut rng);
        let mut c = *cam;
        if pose_rad != 0.0 {
            c.rotation = Rotation::from_axis_angle(rot_axis, pose_rad)? * c.rotation;
        }
        c.translation = c.translation + trans_dir * spec.pose_trans;
        cameras.push(c);
        pose_noise.push(PoseNoise {
            rot_axis,
            trans_dir,
        });
    }

    Ok((
        SceneData { views, cameras },
        PerturbRecord {
            spec: *spec,
            views: view_noise,
            poses: pose_noise,
        },
    ))
}

/// Undoes a recorded perturbation.
pub fn apply_inverse(data: &SceneData, record: &PerturbRecord) -> Result<SceneData> {
    let spec = &record.spec;
    let tilt_rad = spec.normal_tilt_deg.to_radians();
    let pose_rad = spec.pose_rot_deg.to_radians();
    let inv_sim3 = spec.sim3.map(|t| t.inverse());

    let mut views = Vec::with_capacity(data.views.len());
    for (view, noise) in data.views.iter().zip(record.views.iter()) {
        let depth_vals: Vec<f64> = view
            .depth
            .values()
            .iter()
            .zip(noise.depth_signs.iter())
            .map(|(v, s)| v / (1.0 + spec.depth_rel * s))
            .collect();
        let depth = DepthMap::new(
            view.depth.height(),
            view.depth.width(),
            depth_vals,
            view.depth.valid().to_vec(),
        )?;
        let points = match &inv_sim3 {
            Some(t) => view.points.map_points(|p| t.apply(p)),
            None => view.points.clone(),
        };
        let mut normals = view.normals.normals().to_vec();
        if tilt_rad != 0.0 {
            for (p, n) in normals.iter_mut().enumerate() {
                if view.normals.valid()[p] {
                    let rot = Rotation::from_axis_angle(noise.normal_axes[p], -tilt_rad)?;
                    *n = rot.rotate(n).normalized().expect("rotation preserves norm");
                }
            }
        }
        let normals = NormalMap::new(
            view.normals.height(),
            view.normals.width(),
            normals,
            view.normals.valid().to_vec(),
        )?;
        views.push(RenderedView {
            depth,
            points,
            normals,
        });
    }

    let mut cameras = Vec::with_capacity(data.cameras.len());
    for (cam, noise) in data.cameras.iter().zip(record.poses.iter()) {
        let mut c = *cam;
        c.translation = c.translation - noise.trans_dir * spec.pose_trans;
        if pose_rad != 0.0 {
            c.rotation = Rotation::from_axis_angle(noise.rot_axis, -pose_rad)? * c.rotation;
        }
        cameras.push(c);
    }

    Ok(SceneData { views, cameras })
}

/// One domain of the token task: an input cluster and a smooth target map
/// y = tanh(A x + b) with fixed random coefficients.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub center: Vec<f64>,
    pub spread: f64,
    /// output_dim x token_dim
    pub map_a: Matrix,
    pub map_b: Vec<f64>,
}

/// D distinct domains over a shared token space.
#[derive(Debug, Clone)]
pub struct DomainTaskSpec {
    pub token_dim: usize,
    pub output_dim: usize,
    pub domains: Vec<DomainSpec>,
}

impl DomainTaskSpec {
    /// Cluster centers are scaled random unit directions; target maps are
    /// independent random linear maps followed by tanh, pairwise distinct
    /// with probability one.
    pub fn generate(
        token_dim: usize,
        output_dim: usize,
        n_domains: usize,
        center_scale: f64,
        spread: f64,
        seed: u64,
    ) -> Result<DomainTaskSpec> {
        if n_domains < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 domains, got {n_domains}"
            )));
        }
        if token_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidParameter(
                "token_dim and output_dim must be positive".to_string(),
            ));
        }
        if !(spread.is_finite() && spread >= 0.0) || !center_scale.is_finite() {
            return Err(Error::InvalidParameter(
                "center_scale/spread must be finite".to_string(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut domains = Vec::with_capacity(n_domains);
        for _ in 0..n_domains {
            let mut center: Vec<f64> = (0..token_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = center.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            for v in center.iter_mut() {
                *v *= center_scale / norm;
            }
            let mut map_a = Matrix::zeros(output_dim, token_dim);
            for v in map_a.data_mut() {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
            let map_b: Vec<f64> = (0..output_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            domains.push(DomainSpec {
                center,
                spread,
                map_a,
                map_b,
            });
        }
        Ok(DomainTaskSpec {
            token_dim,
            output_dim,
            domains,
        })
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn target(&self, domain: usize, x: &[f64]) -> Vec<f64> {
        let d = &self.domains[domain];
        (0..self.output_dim)
            .map(|o| {
                let row = d.map_a.row(o);
                let mut acc = d.map_b[o];
                for (xv, av) in x.iter().zip(row.iter()) {
                    acc += xv * av;
                }
                acc.tanh()
            })
            .collect()
    }
}

/// Token batch with per-token targets and domain labels.
#[derive(Debug, Clone)]
pub struct MoeTask {
    /// n_tokens x token_dim
    pub tokens: Matrix,
    /// n_tokens x output_dim
    pub targets: Matrix,
    pub domains: Vec<usize>,
}

/// Draws a balanced, reproducible token set: token t belongs to domain
/// t mod D, so domain counts differ by at most one.
pub fn make_moe_task(spec: &DomainTaskSpec, n_tokens: usize, seed: u64) -> Result<MoeTask> {
    if n_tokens == 0 {
        return Err(Error::InvalidParameter("need at least one token".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_count = spec.n_domains();
    let mut tokens = Matrix::zeros(n_tokens, spec.token_dim);
    let mut targets = Matrix::zeros(n_tokens, spec.output_dim);
    let mut domains = Vec::with_capacity(n_tokens);
    for t in 0..n_tokens {
        let dom = t % d_count;
        domains.push(dom);
        let ds = &spec.domains[dom];
        let x: Vec<f64> = ds
            .center
            .iter()
            .map(|c| c + ds.spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let y = spec.target(dom, &x);
        tokens.row_mut(t).copy_from_slice(&x);
        targets.row_mut(t).copy_from_slice(&y);
    }
    Ok(MoeTask {
        tokens,
        targets,
        domains,
    })
}
