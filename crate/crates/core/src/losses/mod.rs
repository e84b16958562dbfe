//! Multi-task geometry losses: depth-weighted L1 pointmap alignment with an
//! exact weighted-median scale solver, grid normals and normal losses,
//! masked depth-gradient losses, feature fusion, and the weighted total
//! objective.

mod grad;

pub use grad::{local_point_loss_grad, predicted_normal_loss_grad};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::depthprior::{ConfidenceMask, DepthMap};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::numeric::{pairwise_sum, weighted_median_indexed};

/// Pixels with ground-truth depth below this floor are excluded from the
/// scale solve and the local point loss; 1/z weights would blow up.
pub const DEPTH_WEIGHT_FLOOR: f64 = 1e-6;

/// Per-pixel 3D points on an image grid with a validity mask. Points are
/// finite wherever valid.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    height: usize,
    width: usize,
    points: Vec<Vec3>,
    valid: Vec<bool>,
}

impl PointMap {
    pub fn new(height: usize, width: usize, points: Vec<Vec3>, valid: Vec<bool>) -> Result<Self> {
        if points.len() != height * width || valid.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "point map storage",
                expected: height * width,
                actual: points.len().min(valid.len()),
            });
        }
        for (p, &ok) in points.iter().zip(valid.iter()) {
            if ok && !p.is_finite() {
                return Err(Error::InvalidParameter(
                    "valid point must be finite".to_string(),
                ));
            }
        }
        Ok(PointMap {
            height,
            width,
            points,
            valid,
        })
    }

    pub fn from_points(height: usize, width: usize, points: Vec<Vec3>) -> Result<Self> {
        let valid = vec![true; points.len()];
        PointMap::new(height, width, points, valid)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Vec3 {
        self.points[i * self.width + j]
    }

    #[inline]
    pub fn valid_at(&self, i: usize, j: usize) -> bool {
        self.valid[i * self.width + j]
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn same_shape(&self, other: &PointMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Applies f to every valid point, keeping the mask.
    pub fn map_points(&self, f: impl Fn(&Vec3) -> Vec3) -> PointMap {
        let points = self
            .points
            .iter()
            .zip(self.valid.iter())
            .map(|(p, &ok)| if ok { f(p) } else { *p })
            .collect();
        PointMap {
            height: self.height,
            width: self.width,
            points,
            valid: self.valid.clone(),
        }
    }
}

/// Per-pixel unit normals with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    height: usize,
    width: usize,
    normals: Vec<Vec3>,
    valid: Vec<bool>,
}

impl NormalMap {
    /// Validates unit norm (within 1e-9) wherever valid.
    pub fn new(height: usize, width: usize, normals: Vec<Vec3>, valid: Vec<bool>) -> Result<Self> {
        if normals.len() != height * width || valid.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "normal map storage",
                expected: height * width,
                actual: normals.len().min(valid.len()),
            });
        }
        for (n, &ok) in normals.iter().zip(valid.iter()) {
            if ok && (!n.is_finite() || (n.norm() - 1.0).abs() > 1e-9) {
                return Err(Error::InvalidParameter(format!(
                    "valid normal must be unit length, got norm {}",
                    n.norm()
                )));
            }
        }
        Ok(NormalMap {
            height,
            width,
            normals,
            valid,
        })
    }

    /// Skips the unit-norm check. Intended for gradient checks and other
    /// numeric probes that intentionally perturb raw components; pipeline
    /// outputs should go through `new`.
    pub fn new_unnormalized(
        height: usize,
        width: usize,
        normals: Vec<Vec3>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if normals.len() != height * width || valid.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "normal map storage",
                expected: height * width,
                actual: normals.len().min(valid.len()),
            });
        }
        Ok(NormalMap {
            height,
            width,
            normals,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Vec3 {
        self.normals[i * self.width + j]
    }

    #[inline]
    pub fn valid_at(&self, i: usize, j: usize) -> bool {
        self.valid[i * self.width + j]
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn same_shape(&self, other: &NormalMap) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Dense per-pixel feature grid, channel-last storage. A zero-channel grid is
/// permitted so that fusion with an empty side is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    features: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, features: Vec<f64>) -> Result<Self> {
        if features.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                context: "feature grid storage",
                expected: height * width * channels,
                actual: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "feature grid must be finite".to_string(),
            ));
        }
        Ok(FeatureGrid {
            height,
            width,
            channels,
            features,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, c: usize) -> f64 {
        self.features[(i * self.width + j) * self.channels + c]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// Weights of the total multi-task objective. `lambda_track` has no stated
/// default and is caller-set; the others default to the training values
/// lambda_moe=0.01, lambda_pts_local=0.5, lambda_pts_n=1.0, lambda_n=1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_track: f64,
    pub lambda_moe: f64,
    pub lambda_pts_local: f64,
    pub lambda_pts_n: f64,
    pub lambda_n: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_track: 1.0,
            lambda_moe: 0.01,
            lambda_pts_local: 0.5,
            lambda_pts_n: 1.0,
            lambda_n: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_track", self.lambda_track),
            ("lambda_moe", self.lambda_moe),
            ("lambda_pts_local", self.lambda_pts_local),
            ("lambda_pts_n", self.lambda_pts_n),
            ("lambda_n", self.lambda_n),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be nonnegative and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Identifies the breakpoint the optimal scale landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalePivot {
    pub frame: usize,
    pub pixel: usize,
    pub coord: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ScaleSolution {
    pub scale: f64,
    pub pivot: ScalePivot,
}

fn check_sequence_shapes(pred: &[PointMap], gt: &[PointMap]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "pointmap sequence lengths",
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    for (p, g) in pred.iter().zip(gt.iter()) {
        if !p.same_shape(g) {
            return Err(Error::DimensionMismatch {
                context: "pointmap frame shapes",
                expected: g.points.len(),
                actual: p.points.len(),
            });
        }
    }
    Ok(())
}

/// Exact minimizer of sum_{i,j} (1/z_ij) * ||s * pred_ij - gt_ij||_1 over the
/// whole sequence, via the weighted median of the per-coordinate breakpoints
/// gt_c/pred_c with weights |pred_c|/z. Coordinates with pred_c = 0 contribute
/// constant terms and are skipped.
pub fn solve_optimal_scale(pred: &[PointMap], gt: &[PointMap]) -> Result<f64> {
    solve_optimal_scale_detailed(pred, gt).map(|s| s.scale)
}

pub fn solve_optimal_scale_detailed(pred: &[PointMap], gt: &[PointMap]) -> Result<ScaleSolution> {
    check_sequence_shapes(pred, gt)?;
    let mut breakpoints: Vec<(f64, f64, usize)> = Vec::new();
    let mut tags: Vec<ScalePivot> = Vec::new();
    let mut any_valid = false;
    for (f, (pm, gm)) in pred.iter().zip(gt.iter()).enumerate() {
        for p in 0..pm.points.len() {
            if !(pm.valid[p] && gm.valid[p]) {
                continue;
            }
            let z = gm.points[p].z;
            if z <= DEPTH_WEIGHT_FLOOR {
                continue;
            }
            any_valid = true;
            for c in 0..3 {
                let a = pm.points[p].component(c);
                if a == 0.0 {
                    continue;
                }
                let b = gm.points[p].component(c);
                breakpoints.push((b / a, a.abs() / z, tags.len()));
                tags.push(ScalePivot {
                    frame: f,
                    pixel: p,
                    coord: c,
                });
            }
        }
    }
    if !any_valid {
        return Err(Error::NoValidPixels);
    }
    if breakpoints.is_empty() {
        return Err(Error::DegeneratePrediction);
    }
    let (scale, tag) =
        weighted_median_indexed(&mut breakpoints).expect("breakpoints checked non-empty");
    Ok(ScaleSolution {
        scale,
        pivot: tags[tag],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Plain sum over valid terms (the written objective).
    Sum,
    /// Sum divided by the number of contributing pixels; makes loss weights
    /// resolution-independent in the toy trainer.
    MeanPerValidPixel,
}

/// Local point loss: the alignment objective evaluated at the optimal scale.
/// Scale-invariant in the prediction by construction.
pub fn local_point_loss(pred: &[PointMap], gt: &[PointMap]) -> Result<f64> {
    local_point_loss_with(pred, gt, Reduction::Sum)
}

pub fn local_point_loss_with(
    pred: &[PointMap],
    gt: &[PointMap],
    reduction: Reduction,
) -> Result<f64> {
    let sol = solve_optimal_scale_detailed(pred, gt)?;
    let (total, pixels) = local_point_objective(pred, gt, sol.scale);
    Ok(match reduction {
        Reduction::Sum => total,
        Reduction::MeanPerValidPixel => total / pixels.max(1) as f64,
    })
}

/// Objective value at a given scale, with the number of contributing pixels.
/// Exposed so oracles can probe the same piecewise-linear function the solver
/// minimizes.
pub fn local_point_objective(pred: &[PointMap], gt: &[PointMap], scale: f64) -> (f64, usize) {
    let mut terms = Vec::new();
    let mut pixels = 0usize;
    for (pm, gm) in pred.iter().zip(gt.iter()) {
        for p in 0..pm.points.len() {
            if !(pm.valid[p] && gm.valid[p]) {
                continue;
            }
            let z = gm.points[p].z;
            if z <= DEPTH_WEIGHT_FLOOR {
                continue;
            }
            pixels += 1;
            let w = 1.0 / z;
            for c in 0..3 {
                let a = pm.points[p].component(c);
                let b = gm.points[p].component(c);
                terms.push(w * (scale * a - b).abs());
            }
        }
    }
    (pairwise_sum(&terms), pixels)
}

/// Grid normals from the cross product of forward differences:
/// n(i,j) = normalize((p(i,j+1) - p(i,j)) x (p(i+1,j) - p(i,j))), oriented so
/// the camera-facing component (-z) is nonnegative. The last row and column,
/// pixels with invalid neighbors, and degenerate (zero-area) pixels are
/// invalid.
pub fn grid_normals(pm: &PointMap) -> NormalMap {
    grid_normals_with(pm, true)
}

pub fn grid_normals_with(pm: &PointMap, orient_toward_camera: bool) -> NormalMap {
    let (h, w) = (pm.height, pm.width);
    let mut normals = vec![Vec3::ZERO; h * w];
    let mut valid = vec![false; h * w];
    if h >= 2 && w >= 2 {
        for i in 0..h - 1 {
            for j in 0..w - 1 {
                if !(pm.valid_at(i, j) && pm.valid_at(i, j + 1) && pm.valid_at(i + 1, j)) {
                    continue;
                }
                let p = pm.at(i, j);
                let dx = pm.at(i, j + 1) - p;
                let dy = pm.at(i + 1, j) - p;
                if let Some(mut n) = dx.cross(&dy).normalized() {
                    if orient_toward_camera && n.z > 0.0 {
                        n = -n;
                    }
                    normals[i * w + j] = n;
                    valid[i * w + j] = true;
                }
            }
        }
    }
    NormalMap::new(h, w, normals, valid).expect("normalized cross products are unit")
}

/// Sum of angular differences (radians) between grid normals of the predicted
/// and ground-truth pointmaps, over jointly valid normal pixels. The angle is
/// the arccos of the normal dot product, evaluated in the endpoint-exact
/// atan2 form so identical normals contribute exactly 0 and opposite normals
/// exactly pi.
pub fn point_normal_loss(pred: &PointMap, gt: &PointMap) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::DimensionMismatch {
            context: "pointmap shapes",
            expected: gt.points.len(),
            actual: pred.points.len(),
        });
    }
    let pn = grid_normals(pred);
    let gn = grid_normals(gt);
    let mut terms = Vec::new();
    for p in 0..pn.normals.len() {
        if pn.valid[p] && gn.valid[p] {
            terms.push(crate::linalg::unit_vector_angle(
                &pn.normals[p],
                &gn.normals[p],
            ));
        }
    }
    Ok(pairwise_sum(&terms))
}

/// Mean absolute componentwise difference over jointly valid pixels
/// (sum of |delta| over pixels and components, divided by 3 * count).
/// Returns 0 when no pixel is jointly valid.
pub fn predicted_normal_loss(pred: &NormalMap, gt: &NormalMap) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::DimensionMismatch {
            context: "normal map shapes",
            expected: gt.normals.len(),
            actual: pred.normals.len(),
        });
    }
    let mut terms = Vec::new();
    let mut count = 0usize;
    for p in 0..pred.normals.len() {
        if pred.valid[p] && gt.valid[p] {
            count += 1;
            for c in 0..3 {
                terms.push((pred.normals[p].component(c) - gt.normals[p].component(c)).abs());
            }
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(pairwise_sum(&terms) / (3 * count) as f64)
}

/// A masked loss value together with how many pixel pairs (or pixels)
/// contributed; a zero count signals an all-masked input worth warning about.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MaskedLoss {
    pub value: f64,
    pub pairs: usize,
}

const GRADIENT_SCALES: [usize; 3] = [1, 2, 4];

/// Multi-scale (1, 2, 4) mean L1 difference of forward-difference depth
/// gradients, restricted to pixel pairs where both endpoints are mask-true
/// and valid in both maps. Per-scale means are averaged over the scales that
/// have at least one pair; shift-invariant by construction.
pub fn depth_gradient_loss(
    pred: &DepthMap,
    target: &DepthMap,
    mask: &ConfidenceMask,
) -> Result<f64> {
    depth_gradient_loss_detailed(pred, target, mask).map(|m| m.value)
}

pub fn depth_gradient_loss_detailed(
    pred: &DepthMap,
    target: &DepthMap,
    mask: &ConfidenceMask,
) -> Result<MaskedLoss> {
    if !pred.same_shape(target)
        || mask.height() != pred.height()
        || mask.width() != pred.width()
    {
        return Err(Error::DimensionMismatch {
            context: "depth/mask shapes",
            expected: target.values().len(),
            actual: pred.values().len(),
        });
    }
    let (h, w) = (pred.height(), pred.width());
    let usable = |i: usize, j: usize| {
        mask.at(i, j) && pred.valid_at(i, j) && target.valid_at(i, j)
    };
    let mut scale_means = Vec::new();
    let mut pairs = 0usize;
    for &s in &GRADIENT_SCALES {
        let mut terms = Vec::new();
        if s < w {
            for i in 0..h {
                for j in 0..w - s {
                    if usable(i, j) && usable(i, j + s) {
                        let gp = pred.at(i, j + s) - pred.at(i, j);
                        let gt_ = target.at(i, j + s) - target.at(i, j);
                        terms.push((gp - gt_).abs());
                    }
                }
            }
        }
        if s < h {
            for i in 0..h - s {
                for j in 0..w {
                    if usable(i, j) && usable(i + s, j) {
                        let gp = pred.at(i + s, j) - pred.at(i, j);
                        let gt_ = target.at(i + s, j) - target.at(i, j);
                        terms.push((gp - gt_).abs());
                    }
                }
            }
        }
        if !terms.is_empty() {
            pairs += terms.len();
            scale_means.push(pairwise_sum(&terms) / terms.len() as f64);
        }
    }
    let value = if scale_means.is_empty() {
        0.0
    } else {
        pairwise_sum(&scale_means) / scale_means.len() as f64
    };
    Ok(MaskedLoss { value, pairs })
}

/// Prior-guided depth term: the gradient loss between the prediction and the
/// aligned prior, restricted to the confidence mask. A zero pair count means
/// the mask filtered everything out.
pub fn prior_guided_depth_loss(
    pred: &DepthMap,
    aligned_prior: &DepthMap,
    mask: &ConfidenceMask,
) -> Result<MaskedLoss> {
    depth_gradient_loss_detailed(pred, aligned_prior, mask)
}

/// Stand-in for the backbone depth supervision term: confidence-weighted
/// mean absolute depth error plus the multi-scale gradient loss. The exact
/// upstream formulation is not public; this composition is isolated here so
/// it can be swapped without touching callers.
pub fn baseline_depth_loss(
    pred: &DepthMap,
    gt: &DepthMap,
    mask: &ConfidenceMask,
) -> Result<MaskedLoss> {
    if !pred.same_shape(gt) || mask.height() != pred.height() || mask.width() != pred.width() {
        return Err(Error::DimensionMismatch {
            context: "depth/mask shapes",
            expected: gt.values().len(),
            actual: pred.values().len(),
        });
    }
    let mut abs_terms = Vec::new();
    for i in 0..pred.height() {
        for j in 0..pred.width() {
            if mask.at(i, j) && pred.valid_at(i, j) && gt.valid_at(i, j) {
                abs_terms.push((pred.at(i, j) - gt.at(i, j)).abs());
            }
        }
    }
    let abs_mean = if abs_terms.is_empty() {
        0.0
    } else {
        pairwise_sum(&abs_terms) / abs_terms.len() as f64
    };
    let grad = depth_gradient_loss_detailed(pred, gt, mask)?;
    Ok(MaskedLoss {
        value: abs_mean + grad.value,
        pairs: abs_terms.len(),
    })
}

/// Channel concatenation, f3d channels first.
pub fn fuse_features(f3d: &FeatureGrid, fs: &FeatureGrid) -> Result<FeatureGrid> {
    if f3d.height != fs.height || f3d.width != fs.width {
        return Err(Error::DimensionMismatch {
            context: "feature grid shapes",
            expected: f3d.height * f3d.width,
            actual: fs.height * fs.width,
        });
    }
    let channels = f3d.channels + fs.channels;
    let mut features = Vec::with_capacity(f3d.height * f3d.width * channels);
    for p in 0..f3d.height * f3d.width {
        features.extend_from_slice(&f3d.features[p * f3d.channels..(p + 1) * f3d.channels]);
        features.extend_from_slice(&fs.features[p * fs.channels..(p + 1) * fs.channels]);
    }
    FeatureGrid::new(f3d.height, f3d.width, channels, features)
}

/// Named scalar terms of the total objective. `cam` and `track` come from
/// out-of-scope heads and are accepted as opaque values.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct TotalLossParts {
    pub pts: f64,
    pub cam: f64,
    pub depth: f64,
    pub track: f64,
    pub moe: f64,
    pub pts_local: f64,
    pub pts_n: f64,
    pub n: f64,
}

/// L = L_pts + L_cam + L_depth + lt*L_track + lm*L_moe + lpl*L_pts_local
///   + lpn*L_pts_n + ln*L_n.
pub fn total_loss(parts: &TotalLossParts, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    let vals = [
        parts.pts, parts.cam, parts.depth, parts.track, parts.moe, parts.pts_local, parts.pts_n,
        parts.n,
    ];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    Ok(parts.pts
        + parts.cam
        + parts.depth
        + weights.lambda_track * parts.track
        + weights.lambda_moe * parts.moe
        + weights.lambda_pts_local * parts.pts_local
        + weights.lambda_pts_n * parts.pts_n
        + weights.lambda_n * parts.n)
}

/// Flat JSON-serializable loss breakdown keyed by term name.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LossBreakdown {
    pub terms: BTreeMap<String, LossTerm>,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossTerm {
    pub value: f64,
    pub count: usize,
}

impl LossBreakdown {
    pub fn add(&mut self, name: &str, value: f64, count: usize) {
        self.terms.insert(name.to_string(), LossTerm { value, count });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("loss breakdown serializes")
    }
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
