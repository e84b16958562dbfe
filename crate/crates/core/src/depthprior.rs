//! Confidence-based depth refinement: align a prior depth prediction to
//! ground truth with a robust scale fit, then keep supervision only where the
//! aligned prior agrees with ground truth within a relative tolerance.

use crate::error::{Error, Result};
use crate::numeric::weighted_median;

/// Relative-error threshold default for the confidence mask.
pub const DEFAULT_TAU: f64 = 0.1;
/// Denominator floor default; guards against instability from small depths.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Per-pixel positive depths with a validity mask. Values are finite and
/// strictly positive wherever valid; both dimensions are at least 2.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::InvalidParameter(format!(
                "depth map must be at least 2x2, got {height}x{width}"
            )));
        }
        if values.len() != height * width || valid.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "depth map storage",
                expected: height * width,
                actual: values.len().min(valid.len()),
            });
        }
        for (v, &ok) in values.iter().zip(valid.iter()) {
            if ok && !(v.is_finite() && *v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "valid depth must be finite and positive, got {v}"
                )));
            }
        }
        Ok(DepthMap {
            height,
            width,
            values,
            valid,
        })
    }

    /// All pixels valid; every value must be finite and positive.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let valid = vec![true; values.len()];
        DepthMap::new(height, width, values, valid)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        DepthMap::from_values(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    #[inline]
    pub fn valid_at(&self, i: usize, j: usize) -> bool {
        self.valid[i * self.width + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn same_shape(&self, other: &DepthMap) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Per-pixel confidence predicate with the parameters it was built from.
/// False wherever either input map was invalid.
#[derive(Debug, Clone)]
pub struct ConfidenceMask {
    height: usize,
    width: usize,
    mask: Vec<bool>,
    pub alpha: f64,
    pub tau: f64,
}

impl ConfidenceMask {
    /// All-true mask, for losses evaluated without confidence filtering.
    pub fn all_true(height: usize, width: usize) -> ConfidenceMask {
        ConfidenceMask {
            height,
            width,
            mask: vec![true; height * width],
            alpha: DEFAULT_ALPHA,
            tau: DEFAULT_TAU,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.width + j]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn true_count(&self) -> usize {
        self.mask.iter().filter(|&&v| v).count()
    }
}

/// How the prior is fitted to ground truth before masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorAlignment {
    /// Scale-only weighted-median L1 fit. Preserves positivity of depths.
    Scale,
    /// Scale plus shift, by alternating 1-D L1 fits. Pixels pushed to
    /// nonpositive depth become invalid in the output.
    ScaleShift,
}

#[derive(Debug, Clone)]
pub struct AlignedPrior {
    pub depth: DepthMap,
    pub scale: f64,
    pub shift: f64,
}

/// Scale-only alignment of `prior` onto `gt`: returns prior * s where s
/// minimizes sum |s * prior - gt| over jointly valid pixels. Output validity
/// is the joint validity.
pub fn align_prior_depth(prior: &DepthMap, gt: &DepthMap) -> Result<DepthMap> {
    align_prior_depth_with(prior, gt, PriorAlignment::Scale).map(|a| a.depth)
}

pub fn align_prior_depth_with(
    prior: &DepthMap,
    gt: &DepthMap,
    mode: PriorAlignment,
) -> Result<AlignedPrior> {
    if !prior.same_shape(gt) {
        return Err(Error::DimensionMismatch {
            context: "prior/gt depth shapes",
            expected: gt.values.len(),
            actual: prior.values.len(),
        });
    }
    let joint: Vec<usize> = (0..prior.values.len())
        .filter(|&p| prior.valid[p] && gt.valid[p])
        .collect();
    if joint.is_empty() {
        return Err(Error::DisjointMasks);
    }

    let (scale, shift) = match mode {
        PriorAlignment::Scale => {
            // sum_p |s*prior - gt| = sum_p prior * |s - gt/prior|: weighted
            // median of the per-pixel ratios with the prior depths as weights.
            let vw: Vec<(f64, f64)> = joint
                .iter()
                .map(|&p| (gt.values[p] / prior.values[p], prior.values[p]))
                .collect();
            (weighted_median(&vw).expect("joint set non-empty"), 0.0)
        }
        PriorAlignment::ScaleShift => fit_scale_shift_l1(prior, gt, &joint),
    };

    let mut values = vec![0.0; prior.values.len()];
    let mut valid = vec![false; prior.values.len()];
    for &p in &joint {
        let v = scale * prior.values[p] + shift;
        if v > 0.0 && v.is_finite() {
            values[p] = v;
            valid[p] = true;
        }
    }
    Ok(AlignedPrior {
        depth: DepthMap::new(prior.height, prior.width, values, valid)?,
        scale,
        shift,
    })
}

/// Iteratively reweighted least squares for the L1 objective
/// sum |s*prior + b - gt|: each pass solves the 2x2 weighted normal
/// equations with weights 1/max(|residual|, eps).
fn fit_scale_shift_l1(prior: &DepthMap, gt: &DepthMap, joint: &[usize]) -> (f64, f64) {
    let mut scale = 1.0;
    let mut shift = 0.0;
    let mut weights = vec![1.0; joint.len()];
    for _ in 0..64 {
        let (mut swpp, mut swp, mut sw, mut swpg, mut swg) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (idx, &p) in joint.iter().enumerate() {
            let w = weights[idx];
            let x = prior.values[p];
            let g = gt.values[p];
            swpp += w * x * x;
            swp += w * x;
            sw += w;
            swpg += w * x * g;
            swg += w * g;
        }
        let det = swpp * sw - swp * swp;
        if det.abs() < 1e-30 {
            break;
        }
        let new_scale = (swpg * sw - swp * swg) / det;
        let new_shift = (swpp * swg - swp * swpg) / det;
        let moved = (new_scale - scale).abs() + (new_shift - shift).abs();
        scale = new_scale;
        shift = new_shift;
        for (idx, &p) in joint.iter().enumerate() {
            let r = scale * prior.values[p] + shift - gt.values[p];
            weights[idx] = 1.0 / r.abs().max(1e-9);
        }
        if moved < 1e-13 {
            break;
        }
    }
    (scale, shift)
}

/// Per-pixel predicate |aligned - gt| / max(gt, alpha) < tau, false wherever
/// either map is invalid.
pub fn confidence_mask(
    aligned_prior: &DepthMap,
    gt: &DepthMap,
    alpha: f64,
    tau: f64,
) -> Result<ConfidenceMask> {
    if !aligned_prior.same_shape(gt) {
        return Err(Error::DimensionMismatch {
            context: "aligned prior/gt depth shapes",
            expected: gt.values.len(),
            actual: aligned_prior.values.len(),
        });
    }
    let mask = (0..gt.values.len())
        .map(|p| {
            aligned_prior.valid[p]
                && gt.valid[p]
                && (aligned_prior.values[p] - gt.values[p]).abs() / gt.values[p].max(alpha) < tau
        })
        .collect();
    Ok(ConfidenceMask {
        height: gt.height,
        width: gt.width,
        mask,
        alpha,
        tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from(vals: &[f64], h: usize, w: usize) -> DepthMap {
        DepthMap::from_values(h, w, vals.to_vec()).unwrap()
    }

    #[test]
    fn align_identity() {
        let gt = map_from(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let aligned = align_prior_depth(&gt.clone(), &gt).unwrap();
        assert_eq!(aligned.values(), gt.values());
    }

    #[test]
    fn align_recovers_half_scale() {
        let gt = map_from(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let prior = map_from(&[2.0, 4.0, 6.0, 8.0], 2, 2);
        let out = align_prior_depth_with(&prior, &gt, PriorAlignment::Scale).unwrap();
        assert!((out.scale - 0.5).abs() < 1e-15);
        for (a, b) in out.depth.values().iter().zip(gt.values().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn align_is_scale_equivariant() {
        let gt = map_from(&[1.0, 2.5, 3.0, 4.0, 0.5, 1.5], 2, 3);
        let prior = map_from(&[1.3, 2.0, 3.3, 4.4, 0.7, 1.2], 2, 3);
        let base = align_prior_depth(&prior, &gt).unwrap();
        let scaled_prior = map_from(
            &prior.values().iter().map(|v| v * 2.0).collect::<Vec<_>>(),
            2,
            3,
        );
        let scaled = align_prior_depth(&scaled_prior, &gt).unwrap();
        for (a, b) in base.values().iter().zip(scaled.values().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_masks_error() {
        let a = DepthMap::new(2, 2, vec![1.0; 4], vec![true, true, false, false]).unwrap();
        let b = DepthMap::new(2, 2, vec![1.0; 4], vec![false, false, true, true]).unwrap();
        assert!(matches!(
            align_prior_depth(&a, &b),
            Err(Error::DisjointMasks)
        ));
    }

    #[test]
    fn mask_matches_direct_arithmetic() {
        // |2.1 - 2.0| / max(2.0, 0.5) = 0.05 < 0.1 -> true
        let gt = map_from(&[2.0; 4], 2, 2);
        let prior = map_from(&[2.1; 4], 2, 2);
        let m = confidence_mask(&prior, &gt, DEFAULT_ALPHA, DEFAULT_TAU).unwrap();
        assert!(m.mask().iter().all(|&b| b));

        // |0.3 - 0.2| / max(0.2, 0.5) = 0.2 >= 0.1 -> false (alpha clamp active)
        let gt = map_from(&[0.2; 4], 2, 2);
        let prior = map_from(&[0.3; 4], 2, 2);
        let m = confidence_mask(&prior, &gt, DEFAULT_ALPHA, DEFAULT_TAU).unwrap();
        assert!(m.mask().iter().all(|&b| !b));
    }

    #[test]
    fn mask_false_on_invalid_pixels() {
        let gt = DepthMap::new(2, 2, vec![1.0; 4], vec![true, false, true, true]).unwrap();
        let prior = DepthMap::new(2, 2, vec![1.0; 4], vec![true, true, false, true]).unwrap();
        let m = confidence_mask(&prior, &gt, DEFAULT_ALPHA, DEFAULT_TAU).unwrap();
        assert_eq!(m.mask(), &[true, false, false, true]);
    }

    #[test]
    fn raising_tau_is_monotone() {
        let gt = map_from(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let prior = map_from(&[1.05, 2.4, 3.05, 5.2], 2, 2);
        let lo = confidence_mask(&prior, &gt, DEFAULT_ALPHA, 0.05).unwrap();
        let hi = confidence_mask(&prior, &gt, DEFAULT_ALPHA, 0.2).unwrap();
        for (a, b) in lo.mask().iter().zip(hi.mask().iter()) {
            assert!(!a | b, "raising tau must never turn a true pixel false");
        }
    }

    #[test]
    fn scale_shift_handles_offset_prior() {
        let gt = map_from(&[2.0, 3.0, 4.0, 5.0, 6.0, 7.0], 2, 3);
        let prior = map_from(
            &gt.values().iter().map(|v| 0.5 * v + 1.0).collect::<Vec<_>>(),
            2,
            3,
        );
        let out = align_prior_depth_with(&prior, &gt, PriorAlignment::ScaleShift).unwrap();
        assert!((out.scale - 2.0).abs() < 1e-9);
        assert!((out.shift + 2.0).abs() < 1e-9);
        for (a, b) in out.depth.values().iter().zip(gt.values().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
