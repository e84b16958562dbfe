//! Analytic gradients of the point-alignment and normal losses with respect
//! to the predicted quantities, finite-difference checked at the acceptance
//! gate.

use super::{
    sign, solve_optimal_scale_detailed, NormalMap, PointMap, DEPTH_WEIGHT_FLOOR,
};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::numeric::pairwise_sum;

/// Gradient of the (sum-reduced) local point loss with respect to every
/// predicted point coordinate, together with the loss value.
///
/// Because the optimal scale sits exactly on one breakpoint b0/a0, the loss
/// as a function of the prediction is
///   g(a) = sum_{m != m0} w_m |s(a) a_m - b_m|,   s(a) = b0 / a0,
/// so coordinates other than the pivot get the usual subgradient
/// w_m sign(.) s, while the pivot coordinate picks up the chain term through
/// ds/da0 = -s/a0. Valid away from breakpoint ties and |.| kinks; the
/// finite-difference harness rejects samples near those sets.
pub fn local_point_loss_grad(
    pred: &[PointMap],
    gt: &[PointMap],
) -> Result<(f64, Vec<Vec<Vec3>>)> {
    let sol = solve_optimal_scale_detailed(pred, gt)?;
    let s = sol.scale;
    let mut grads: Vec<Vec<Vec3>> = pred
        .iter()
        .map(|pm| vec![Vec3::ZERO; pm.points().len()])
        .collect();
    let mut terms = Vec::new();
    let mut chain = 0.0;
    for (f, (pm, gm)) in pred.iter().zip(gt.iter()).enumerate() {
        for p in 0..pm.points().len() {
            if !(pm.valid()[p] && gm.valid()[p]) {
                continue;
            }
            let z = gm.points()[p].z;
            if z <= DEPTH_WEIGHT_FLOOR {
                continue;
            }
            let w = 1.0 / z;
            for c in 0..3 {
                let a = pm.points()[p].component(c);
                let b = gm.points()[p].component(c);
                let r = s * a - b;
                terms.push(w * r.abs());
                if f == sol.pivot.frame && p == sol.pivot.pixel && c == sol.pivot.coord {
                    // The pivot term is identically zero around the optimum.
                    continue;
                }
                let sg = sign(r);
                let gcur = grads[f][p].component(c) + w * sg * s;
                grads[f][p].set_component(c, gcur);
                chain += w * sg * a;
            }
        }
    }
    let a0 = pred[sol.pivot.frame].points()[sol.pivot.pixel].component(sol.pivot.coord);
    if a0 == 0.0 {
        return Err(Error::DegeneratePrediction);
    }
    let pivot_grad = -chain * s / a0;
    let gp = &mut grads[sol.pivot.frame][sol.pivot.pixel];
    gp.set_component(sol.pivot.coord, gp.component(sol.pivot.coord) + pivot_grad);
    Ok((pairwise_sum(&terms), grads))
}

/// Gradient of the mean componentwise L1 normal loss with respect to the
/// predicted normals: sign(pred_c - gt_c) / (3 * count) on jointly valid
/// pixels, zero elsewhere. Nondifferentiable where components coincide; the
/// finite-difference harness rejects samples near that set.
pub fn predicted_normal_loss_grad(
    pred: &NormalMap,
    gt: &NormalMap,
) -> Result<(f64, Vec<Vec3>)> {
    if !pred.same_shape(gt) {
        return Err(Error::DimensionMismatch {
            context: "normal map shapes",
            expected: gt.normals().len(),
            actual: pred.normals().len(),
        });
    }
    let mut grads = vec![Vec3::ZERO; pred.normals().len()];
    let mut terms = Vec::new();
    let mut count = 0usize;
    for p in 0..pred.normals().len() {
        if pred.valid()[p] && gt.valid()[p] {
            count += 1;
        }
    }
    if count == 0 {
        return Ok((0.0, grads));
    }
    let denom = (3 * count) as f64;
    for p in 0..pred.normals().len() {
        if !(pred.valid()[p] && gt.valid()[p]) {
            continue;
        }
        for c in 0..3 {
            let d = pred.normals()[p].component(c) - gt.normals()[p].component(c);
            terms.push(d.abs());
            grads[p].set_component(c, sign(d) / denom);
        }
    }
    Ok((pairwise_sum(&terms) / denom, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_grad_is_zero_at_match() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let a = NormalMap::new(2, 2, vec![n; 4], vec![true; 4]).unwrap();
        let (loss, g) = predicted_normal_loss_grad(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn point_grad_value_matches_loss() {
        let mut pts = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                pts.push(Vec3::new(
                    0.4 * j as f64 + 0.1,
                    0.3 * i as f64 - 0.2,
                    1.5 + 0.2 * (i * 3 + j) as f64,
                ));
            }
        }
        let gt = PointMap::from_points(3, 3, pts).unwrap();
        let pred = gt.map_points(|p| Vec3::new(p.x * 1.1 + 0.02, p.y * 0.9, p.z * 1.05));
        let (loss, _) = local_point_loss_grad(std::slice::from_ref(&pred), std::slice::from_ref(&gt)).unwrap();
        let direct = super::super::local_point_loss(&[pred], &[gt]).unwrap();
        assert!((loss - direct).abs() < 1e-12);
    }
}
