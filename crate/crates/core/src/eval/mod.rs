//! Evaluation protocol: similarity alignment (Umeyama + ICP) and the
//! pointmap, monocular-depth, camera-pose, and normal metric families.
//! Every metric has a brute-force oracle in the test suites; reductions run
//! in fixed order so reports are reproducible byte for byte.

mod report;

pub use report::MetricReport;

use crate::depthprior::DepthMap;
use crate::error::{Error, Result};
use crate::linalg::{svd3, KdTree3, Mat3, Rotation, Sim3, Vec3};
use crate::losses::NormalMap;
use crate::numeric::{median, pairwise_sum, rad_to_deg};

/// Camera-to-world pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Pose {
        Pose {
            rotation: Rotation::identity(),
            translation: Vec3::ZERO,
        }
    }
}

/// Relative transform from pose b into the frame of pose a:
/// R = Ra^-1 Rb, t = Ra^-1 (tb - ta).
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    let inv = a.rotation.inverse();
    Pose {
        rotation: inv * b.rotation,
        translation: inv.rotate(&(b.translation - a.translation)),
    }
}

/// Closed-form least-squares similarity aligning src onto dst
/// (minimizes sum ||T(src_i) - dst_i||^2). The rotation determinant is
/// forced to +1 by flipping the sign of the smallest singular value.
pub fn umeyama(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<Sim3> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            context: "umeyama point counts",
            expected: dst.len(),
            actual: src.len(),
        });
    }
    if src.len() < 3 {
        return Err(Error::DegenerateConfiguration);
    }
    let n = src.len() as f64;
    let mut mu_s = Vec3::ZERO;
    let mut mu_d = Vec3::ZERO;
    for (s, d) in src.iter().zip(dst.iter()) {
        mu_s = mu_s + *s;
        mu_d = mu_d + *d;
    }
    mu_s = mu_s * (1.0 / n);
    mu_d = mu_d * (1.0 / n);

    let mut cov = Mat3::zeros();
    let mut var_src = 0.0;
    for (s, d) in src.iter().zip(dst.iter()) {
        let sc = *s - mu_s;
        let dc = *d - mu_d;
        cov = cov.add(&Mat3::outer(&dc, &sc));
        var_src += sc.squared_norm();
    }
    cov = cov.scale(1.0 / n);
    var_src /= n;
    if var_src <= 1e-30 {
        return Err(Error::DegenerateConfiguration);
    }

    let (u, s, v) = svd3(&cov);
    // Rank < 2 leaves the rotation about the point axis unconstrained.
    if s[1] <= s[0] * 1e-12 || s[0] == 0.0 {
        return Err(Error::DegenerateConfiguration);
    }
    let flip = if u.det() * v.det() < 0.0 { -1.0 } else { 1.0 };
    let d_mat = Mat3::from_rows(
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, 0.0, flip),
    );
    let r = u.mul(&d_mat).mul(&v.transpose());
    let rotation = Rotation::from_matrix(&r)?;
    let scale = if with_scale {
        (s[0] + s[1] + flip * s[2]) / var_src
    } else {
        1.0
    };
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::DegenerateConfiguration);
    }
    let translation = mu_d - rotation.rotate(&mu_s) * scale;
    Sim3::new(scale, rotation, translation)
}

#[derive(Debug, Clone, Copy)]
pub struct IcpParams {
    pub max_iters: usize,
    pub tol: f64,
    pub with_scale: bool,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            max_iters: 50,
            tol: 1e-6,
            with_scale: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: Sim3,
    /// RMS correspondence distance after each matching step, starting with
    /// the RMS under the initial transform. Non-increasing by construction.
    pub rms_history: Vec<f64>,
    pub iterations: usize,
}

impl IcpResult {
    pub fn final_rms(&self) -> f64 {
        *self.rms_history.last().expect("history never empty")
    }
}

/// Iterative closest point: alternates nearest-neighbor correspondence
/// against a k-d tree on dst with a full Umeyama refit from the original src,
/// stopping when the RMS improves by less than `tol` or `max_iters` is hit.
pub fn icp(src: &[Vec3], dst: &[Vec3], init: &Sim3, params: IcpParams) -> Result<IcpResult> {
    if src.is_empty() || dst.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let tree = KdTree3::new(dst);
    let correspond = |t: &Sim3| -> Result<(Vec<Vec3>, f64)> {
        let mut matched = Vec::with_capacity(src.len());
        let mut sq = Vec::with_capacity(src.len());
        for p in src {
            let q = t.apply(p);
            let (idx, d2) = tree.nearest(&q)?;
            matched.push(dst[idx]);
            sq.push(d2);
        }
        let rms = (pairwise_sum(&sq) / src.len() as f64).sqrt();
        Ok((matched, rms))
    };

    let mut current = *init;
    let (mut matched, mut rms) = correspond(&current)?;
    let mut history = vec![rms];
    let mut iterations = 0;
    for _ in 0..params.max_iters {
        iterations += 1;
        let fitted = umeyama(src, &matched, params.with_scale)?;
        current = fitted;
        let (m2, r2) = correspond(&current)?;
        matched = m2;
        history.push(r2);
        let improved = rms - r2;
        rms = r2;
        if improved < params.tol {
            break;
        }
    }
    Ok(IcpResult {
        transform: current,
        rms_history: history,
        iterations,
    })
}

/// A point cloud with optional per-point unit normals (same length).
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> PointCloud {
        PointCloud {
            points,
            normals: None,
        }
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<PointCloud> {
        if normals.len() != points.len() {
            return Err(Error::DimensionMismatch {
                context: "cloud normals",
                expected: points.len(),
                actual: normals.len(),
            });
        }
        Ok(PointCloud {
            points,
            normals: Some(normals),
        })
    }

    pub fn transformed(&self, t: &Sim3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.rotation.rotate(n)).collect()),
        }
    }
}

/// Accuracy / completion / normal-consistency metrics on aligned clouds.
///
/// Acc is the mean/median distance from each prediction point to its nearest
/// ground-truth point; Comp is the reverse direction. N.C. uses the absolute
/// cosine between normals of matched pairs, pooled over both directions so it
/// is symmetric under swapping the inputs; reported only when both clouds
/// carry normals.
pub fn pointmap_metrics(pred: &PointCloud, gt: &PointCloud) -> Result<MetricReport> {
    if pred.points.is_empty() || gt.points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let gt_tree = KdTree3::new(&gt.points);
    let pred_tree = KdTree3::new(&pred.points);

    let mut acc = Vec::with_capacity(pred.points.len());
    let mut comp = Vec::with_capacity(gt.points.len());
    let mut nc_pairs = Vec::new();
    let both_normals = pred.normals.is_some() && gt.normals.is_some();

    for (i, p) in pred.points.iter().enumerate() {
        let (idx, d2) = gt_tree.nearest(p)?;
        acc.push(d2.sqrt());
        if both_normals {
            let np = &pred.normals.as_ref().unwrap()[i];
            let ng = &gt.normals.as_ref().unwrap()[idx];
            nc_pairs.push(np.dot(ng).abs().min(1.0));
        }
    }
    for (i, p) in gt.points.iter().enumerate() {
        let (idx, d2) = pred_tree.nearest(p)?;
        comp.push(d2.sqrt());
        if both_normals {
            let ng = &gt.normals.as_ref().unwrap()[i];
            let np = &pred.normals.as_ref().unwrap()[idx];
            nc_pairs.push(ng.dot(np).abs().min(1.0));
        }
    }

    let mut report = MetricReport::new("pointmap");
    report.insert("acc_mean", pairwise_sum(&acc) / acc.len() as f64)?;
    report.insert("acc_median", median(&acc).expect("non-empty"))?;
    report.insert("comp_mean", pairwise_sum(&comp) / comp.len() as f64)?;
    report.insert("comp_median", median(&comp).expect("non-empty"))?;
    report.set_count("pred_points", pred.points.len() as u64);
    report.set_count("gt_points", gt.points.len() as u64);
    if both_normals {
        report.insert("nc_mean", pairwise_sum(&nc_pairs) / nc_pairs.len() as f64)?;
        report.insert("nc_median", median(&nc_pairs).expect("non-empty"))?;
        report.set_count("nc_pairs", nc_pairs.len() as u64);
    }
    report.set_config("nc_pairing", "bidirectional");
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthAlignment {
    None,
    /// Multiply the prediction by the median of per-pixel gt/pred ratios.
    MedianScale,
}

/// Monocular depth metrics over jointly valid pixels: absolute relative error
/// and the delta < 1.25 threshold accuracy, after optional median scaling.
pub fn depth_metrics(
    pred: &DepthMap,
    gt: &DepthMap,
    alignment: DepthAlignment,
) -> Result<MetricReport> {
    if !pred.same_shape(gt) {
        return Err(Error::DimensionMismatch {
            context: "depth shapes",
            expected: gt.values().len(),
            actual: pred.values().len(),
        });
    }
    let joint: Vec<usize> = (0..gt.values().len())
        .filter(|&p| pred.valid()[p] && gt.valid()[p])
        .collect();
    if joint.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let scale = match alignment {
        DepthAlignment::None => 1.0,
        DepthAlignment::MedianScale => {
            let ratios: Vec<f64> = joint
                .iter()
                .map(|&p| gt.values()[p] / pred.values()[p])
                .collect();
            median(&ratios).expect("non-empty")
        }
    };
    let mut rel = Vec::with_capacity(joint.len());
    let mut under = 0usize;
    for &p in &joint {
        let pv = scale * pred.values()[p];
        let gv = gt.values()[p];
        rel.push((pv - gv).abs() / gv);
        let ratio = (pv / gv).max(gv / pv);
        if ratio < 1.25 {
            under += 1;
        }
    }
    let mut report = MetricReport::new("depth");
    report.insert("abs_rel", pairwise_sum(&rel) / rel.len() as f64)?;
    report.insert("delta_1_25", under as f64 / joint.len() as f64)?;
    report.set_count("valid_pixels", joint.len() as u64);
    report.set_config(
        "alignment",
        match alignment {
            DepthAlignment::None => "none",
            DepthAlignment::MedianScale => "median-scale",
        },
    );
    report.set_config("scale", &format!("{scale}"));
    Ok(report)
}

/// Rotation and translation-direction angular errors of one relative-pose
/// pair. The translation angle is undefined when either relative translation
/// is (near) zero.
#[derive(Debug, Clone, Copy)]
pub struct PairAngles {
    pub rotation_deg: f64,
    pub translation_deg: Option<f64>,
}

const BASELINE_EPS: f64 = 1e-9;

pub fn relative_pose_angles(pred_a: &Pose, pred_b: &Pose, gt_a: &Pose, gt_b: &Pose) -> PairAngles {
    let rp = relative_pose(pred_a, pred_b);
    let rg = relative_pose(gt_a, gt_b);
    let rotation_deg = rad_to_deg(rp.rotation.angle_to(&rg.rotation));
    let np = rp.translation.norm();
    let ng = rg.translation.norm();
    let translation_deg = if np < BASELINE_EPS || ng < BASELINE_EPS {
        None
    } else {
        let dot = rp.translation.dot(&rg.translation);
        let cross = rp.translation.cross(&rg.translation).norm();
        Some(rad_to_deg(cross.atan2(dot)))
    };
    PairAngles {
        rotation_deg,
        translation_deg,
    }
}

/// Angular pose metrics over all unordered pose pairs. RRA/RTA are the
/// fractions of pairs with rotation / translation-direction error under the
/// max threshold; AUC is the mean over integer thresholds 1..=max of the
/// fraction of pairs with max(rot, trans) <= theta. Pairs with a near-zero
/// baseline are excluded from RTA and AUC (and counted); rotation error is
/// always defined, so RRA runs over all pairs.
pub fn pose_metrics_angular(
    pred: &[Pose],
    gt: &[Pose],
    max_threshold_deg: u32,
) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            context: "trajectory lengths",
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    if pred.len() < 2 {
        return Err(Error::InsufficientPoses {
            needed: 2,
            got: pred.len(),
        });
    }
    if max_threshold_deg == 0 {
        return Err(Error::InvalidParameter(
            "threshold must be at least 1 degree".to_string(),
        ));
    }
    let mut rot_errors = Vec::new();
    let mut pair_errors = Vec::new(); // (rot, trans) where trans is defined
    let mut skipped = 0usize;
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            let angles = relative_pose_angles(&pred[i], &pred[j], &gt[i], &gt[j]);
            rot_errors.push(angles.rotation_deg);
            match angles.translation_deg {
                Some(t) => pair_errors.push((angles.rotation_deg, t)),
                None => skipped += 1,
            }
        }
    }
    let thr = max_threshold_deg as f64;
    let rra = rot_errors.iter().filter(|&&r| r < thr).count() as f64 / rot_errors.len() as f64;
    let (rta, auc) = if pair_errors.is_empty() {
        (0.0, 0.0)
    } else {
        let rta = pair_errors.iter().filter(|&&(_, t)| t < thr).count() as f64
            / pair_errors.len() as f64;
        let mut acc = 0.0;
        for theta in 1..=max_threshold_deg {
            let th = theta as f64;
            let frac = pair_errors
                .iter()
                .filter(|&&(r, t)| r.max(t) <= th)
                .count() as f64
                / pair_errors.len() as f64;
            acc += frac;
        }
        (rta, acc / max_threshold_deg as f64)
    };
    let mut report = MetricReport::new("pose-angular");
    report.insert(&format!("rra_at_{max_threshold_deg}"), rra)?;
    report.insert(&format!("rta_at_{max_threshold_deg}"), rta)?;
    report.insert(&format!("auc_at_{max_threshold_deg}"), auc)?;
    report.set_count("pairs", rot_errors.len() as u64);
    report.set_count("pairs_skipped_translation", skipped as u64);
    report.set_config("thresholds", "integer 1..=max");
    Ok(report)
}

/// Distance pose metrics after Sim(3) alignment of the predicted trajectory
/// onto ground truth: ATE is the RMSE of aligned positions, RPE runs over
/// frame pairs at the given stride (translation-difference norm RMSE and
/// geodesic rotation RMSE in degrees).
pub fn pose_metrics_distance(
    pred: &[Pose],
    gt: &[Pose],
    rpe_stride: usize,
) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            context: "trajectory lengths",
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    if pred.len() < 2 {
        return Err(Error::InsufficientPoses {
            needed: 2,
            got: pred.len(),
        });
    }
    if rpe_stride == 0 || rpe_stride >= pred.len() {
        return Err(Error::InvalidParameter(format!(
            "rpe stride must be in 1..{}, got {rpe_stride}",
            pred.len()
        )));
    }
    let pred_pos: Vec<Vec3> = pred.iter().map(|p| p.translation).collect();
    let gt_pos: Vec<Vec3> = gt.iter().map(|p| p.translation).collect();
    let align = umeyama(&pred_pos, &gt_pos, true)?;
    let aligned: Vec<Pose> = pred
        .iter()
        .map(|p| Pose {
            rotation: align.rotation * p.rotation,
            translation: align.apply(&p.translation),
        })
        .collect();

    let sq_pos: Vec<f64> = aligned
        .iter()
        .zip(gt.iter())
        .map(|(a, g)| (a.translation - g.translation).squared_norm())
        .collect();
    let ate = (pairwise_sum(&sq_pos) / sq_pos.len() as f64).sqrt();

    let mut sq_trans = Vec::new();
    let mut sq_rot = Vec::new();
    for i in 0..pred.len() - rpe_stride {
        let rp = relative_pose(&aligned[i], &aligned[i + rpe_stride]);
        let rg = relative_pose(&gt[i], &gt[i + rpe_stride]);
        sq_trans.push((rp.translation - rg.translation).squared_norm());
        let ang = rad_to_deg(rp.rotation.angle_to(&rg.rotation));
        sq_rot.push(ang * ang);
    }
    let rpe_trans = (pairwise_sum(&sq_trans) / sq_trans.len() as f64).sqrt();
    let rpe_rot = (pairwise_sum(&sq_rot) / sq_rot.len() as f64).sqrt();

    let mut report = MetricReport::new("pose-distance");
    report.insert("ate_rmse", ate)?;
    report.insert("rpe_trans_rmse", rpe_trans)?;
    report.insert("rpe_rot_rmse_deg", rpe_rot)?;
    report.set_count("frames", pred.len() as u64);
    report.set_count("rpe_pairs", sq_trans.len() as u64);
    report.set_config("rpe_stride", &rpe_stride.to_string());
    report.set_config("alignment", "sim3-umeyama");
    Ok(report)
}

/// Angular normal metrics over jointly valid pixels: mean and median error in
/// degrees plus the fraction under 11.25 degrees.
pub fn normal_metrics(pred: &NormalMap, gt: &NormalMap) -> Result<MetricReport> {
    if !pred.same_shape(gt) {
        return Err(Error::DimensionMismatch {
            context: "normal map shapes",
            expected: gt.normals().len(),
            actual: pred.normals().len(),
        });
    }
    let mut angles = Vec::new();
    for p in 0..pred.normals().len() {
        if pred.valid()[p] && gt.valid()[p] {
            let a = crate::linalg::unit_vector_angle(&pred.normals()[p], &gt.normals()[p]);
            angles.push(rad_to_deg(a));
        }
    }
    if angles.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let under = angles.iter().filter(|&&a| a < 11.25).count();
    let mut report = MetricReport::new("normal");
    report.insert("mean_deg", pairwise_sum(&angles) / angles.len() as f64)?;
    report.insert("median_deg", median(&angles).expect("non-empty"))?;
    report.insert("delta_11_25", under as f64 / angles.len() as f64)?;
    report.set_count("valid_pixels", angles.len() as u64);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn umeyama_identity() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let t = umeyama(&pts, &pts, true).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
        assert!(t.rotation.angle_to(&Rotation::identity()) < 1e-12);
    }

    #[test]
    fn umeyama_recovers_known_transform() {
        let pts: Vec<Vec3> = (0..20)
            .map(|i| {
                let f = i as f64;
                Vec3::new((f * 0.37).sin(), (f * 0.83).cos(), 0.1 * f)
            })
            .collect();
        let truth = Sim3::new(
            2.0,
            Rotation::from_axis_angle(Vec3::new(0.2, 1.0, -0.5), 0.8).unwrap(),
            Vec3::new(0.5, -1.5, 2.0),
        )
        .unwrap();
        let dst: Vec<Vec3> = pts.iter().map(|p| truth.apply(p)).collect();
        let est = umeyama(&pts, &dst, true).unwrap();
        assert!((est.scale - truth.scale).abs() < 1e-9);
        assert!(est.rotation.angle_to(&truth.rotation) < 1e-9);
        assert!((est.translation - truth.translation).norm() < 1e-9);
    }

    #[test]
    fn umeyama_never_returns_reflection() {
        let pts: Vec<Vec3> = (0..12)
            .map(|i| {
                let f = i as f64;
                Vec3::new((f * 1.1).sin(), (f * 0.7).cos(), (f * 0.3).sin() * 2.0)
            })
            .collect();
        let reflected: Vec<Vec3> = pts.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let est = umeyama(&pts, &reflected, true).unwrap();
        assert!(est.rotation.to_matrix().det() > 0.0);
        // A proper rotation cannot reproduce a reflection: residual stays > 0.
        let residual: f64 = pts
            .iter()
            .zip(reflected.iter())
            .map(|(s, d)| (est.apply(s) - *d).squared_norm())
            .sum();
        assert!(residual > 1e-3);
    }

    #[test]
    fn umeyama_degenerate_inputs() {
        let two = vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)];
        assert!(matches!(
            umeyama(&two, &two, true),
            Err(Error::DegenerateConfiguration)
        ));
        let line: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            umeyama(&line, &line, true),
            Err(Error::DegenerateConfiguration)
        ));
    }

    #[test]
    fn icp_identity_converges_immediately() {
        let pts: Vec<Vec3> = (0..30)
            .map(|i| {
                let f = i as f64;
                Vec3::new((f * 0.9).sin(), (f * 0.4).cos(), 0.2 * f)
            })
            .collect();
        let res = icp(&pts, &pts, &Sim3::identity(), IcpParams::default()).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.final_rms() < 1e-12);
        let t = res.transform;
        assert!((t.scale - 1.0).abs() < 1e-9);
        assert!(t.translation.norm() < 1e-9);
    }

    #[test]
    fn pointmap_metrics_identity_and_offset() {
        let pts: Vec<Vec3> = (0..50)
            .map(|i| {
                let f = i as f64;
                Vec3::new((f * 0.61).sin() * 2.0, (f * 0.23).cos(), 0.13 * f)
            })
            .collect();
        let normals = vec![Vec3::new(0.0, 0.0, -1.0); pts.len()];
        let cloud = PointCloud::with_normals(pts.clone(), normals.clone()).unwrap();
        let r = pointmap_metrics(&cloud, &cloud).unwrap();
        assert_eq!(r.get("acc_mean"), Some(0.0));
        assert_eq!(r.get("comp_mean"), Some(0.0));
        assert_eq!(r.get("nc_mean"), Some(1.0));

        // Uniform offset along x with normals perpendicular to x: the offset
        // must appear verbatim in acc/comp while N.C. stays 1. Points are
        // spaced far enough apart that each offset point keeps its source as
        // nearest neighbor.
        let delta = 0.05;
        let moved: Vec<Vec3> = pts.iter().map(|p| Vec3::new(p.x + delta, p.y, p.z)).collect();
        let pred = PointCloud::with_normals(moved, normals).unwrap();
        let r = pointmap_metrics(&pred, &cloud).unwrap();
        assert!((r.get("acc_mean").unwrap() - delta).abs() < 1e-12);
        assert!((r.get("comp_mean").unwrap() - delta).abs() < 1e-12);
        assert!((r.get("nc_mean").unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn depth_metrics_trivial_cases() {
        let gt = DepthMap::from_values(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = depth_metrics(&gt, &gt, DepthAlignment::None).unwrap();
        assert_eq!(r.get("abs_rel"), Some(0.0));
        assert_eq!(r.get("delta_1_25"), Some(1.0));

        let pred =
            DepthMap::from_values(2, 2, gt.values().iter().map(|v| 1.3 * v).collect()).unwrap();
        let r = depth_metrics(&pred, &gt, DepthAlignment::None).unwrap();
        assert!((r.get("abs_rel").unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(r.get("delta_1_25"), Some(0.0));

        let r = depth_metrics(&pred, &gt, DepthAlignment::MedianScale).unwrap();
        assert!(r.get("abs_rel").unwrap().abs() < 1e-12);
        assert_eq!(r.get("delta_1_25"), Some(1.0));
    }

    #[test]
    fn pose_angular_identity() {
        let poses: Vec<Pose> = (0..5)
            .map(|i| Pose {
                rotation: Rotation::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 0.3 * i as f64)
                    .unwrap(),
                translation: Vec3::new(i as f64, 0.0, 1.0),
            })
            .collect();
        let r = pose_metrics_angular(&poses, &poses, 30).unwrap();
        assert_eq!(r.get("rra_at_30"), Some(1.0));
        assert_eq!(r.get("rta_at_30"), Some(1.0));
        assert_eq!(r.get("auc_at_30"), Some(1.0));
    }

    #[test]
    fn pose_angular_45_degree_rotations_fail_rra() {
        let gt: Vec<Pose> = (0..4)
            .map(|i| Pose {
                rotation: Rotation::identity(),
                translation: Vec3::new(i as f64, 0.0, 0.0),
            })
            .collect();
        // Rotate each successive pose an extra 45 degrees: every pair's
        // relative rotation error is a nonzero multiple of 45.
        let pred: Vec<Pose> = (0..4)
            .map(|i| Pose {
                rotation: Rotation::from_axis_angle(
                    Vec3::new(0.0, 0.0, 1.0),
                    std::f64::consts::FRAC_PI_4 * i as f64,
                )
                .unwrap(),
                translation: Vec3::new(i as f64, 0.0, 0.0),
            })
            .collect();
        let r = pose_metrics_angular(&pred, &gt, 30).unwrap();
        assert_eq!(r.get("rra_at_30"), Some(0.0));
    }

    #[test]
    fn pose_distance_absorbs_global_offset() {
        let gt: Vec<Pose> = (0..12)
            .map(|i| {
                let a = i as f64 * 0.5;
                Pose {
                    rotation: Rotation::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), a).unwrap(),
                    translation: Vec3::new(a.cos() * 3.0, 0.2 * i as f64, a.sin() * 3.0),
                }
            })
            .collect();
        let r = pose_metrics_distance(&gt, &gt, 1).unwrap();
        assert!(r.get("ate_rmse").unwrap() < 1e-12);
        assert!(r.get("rpe_trans_rmse").unwrap() < 1e-12);
        assert!(r.get("rpe_rot_rmse_deg").unwrap() < 1e-12);

        let offset = Vec3::new(5.0, -2.0, 1.0);
        let moved: Vec<Pose> = gt
            .iter()
            .map(|p| Pose {
                rotation: p.rotation,
                translation: p.translation + offset,
            })
            .collect();
        let r = pose_metrics_distance(&moved, &gt, 1).unwrap();
        assert!(r.get("ate_rmse").unwrap() < 1e-9);
    }

    #[test]
    fn normal_metrics_exact_rotation() {
        let n = Vec3::new(0.0, 0.0, -1.0);
        let rot = Rotation::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), 30f64.to_radians()).unwrap();
        let a = NormalMap::new(2, 2, vec![n; 4], vec![true; 4]).unwrap();
        let b = NormalMap::new(2, 2, vec![rot.rotate(&n); 4], vec![true; 4]).unwrap();
        let r = normal_metrics(&b, &a).unwrap();
        assert!((r.get("mean_deg").unwrap() - 30.0).abs() < 1e-9);
        assert!((r.get("median_deg").unwrap() - 30.0).abs() < 1e-9);
        assert_eq!(r.get("delta_11_25"), Some(0.0));

        let r = normal_metrics(&a, &a).unwrap();
        assert_eq!(r.get("mean_deg"), Some(0.0));
        assert_eq!(r.get("delta_11_25"), Some(1.0));
    }
}
