//! 3x3 singular value decomposition via cyclic one-sided Jacobi.
//!
//! Each rotation is computed from the Gram entries of the current working
//! matrix (the same 2x2 subproblem as Jacobi on m^T m) but applied to the
//! columns of m directly, so small singular values keep full relative
//! accuracy instead of being washed out at the m^T m rounding floor. The left
//! factor falls out as the normalized working columns (the polar step);
//! rank-deficient directions are completed by cross products. Only the 3x3
//! case is needed (covariance matrices in similarity fitting), so a general
//! bidiagonalization SVD is not worth carrying.

use super::{Mat3, Vec3};

/// Singular values at or below this relative threshold are reported as zero
/// and their left directions completed orthogonally.
const RANK_EPS: f64 = 1e-13;

/// Returns (u, s, v) with m = u * diag(s) * v^T, s sorted descending and
/// nonnegative, u and v orthogonal. Degenerate inputs produce zero singular
/// values, never errors.
pub fn svd3(m: &Mat3) -> (Mat3, [f64; 3], Mat3) {
    let mut w = [m.col(0), m.col(1), m.col(2)];
    let mut v = [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
    ];

    for _sweep in 0..60 {
        let mut rotated = false;
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let alpha = w[p].dot(&w[p]);
            let beta = w[q].dot(&w[q]);
            let gamma = w[p].dot(&w[q]);
            if gamma == 0.0 || gamma.abs() <= 1e-17 * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = if zeta >= 0.0 {
                1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
            } else {
                1.0 / (zeta - (1.0 + zeta * zeta).sqrt())
            };
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = t * c;
            let wp = w[p];
            let wq = w[q];
            w[p] = wp * c - wq * s;
            w[q] = wp * s + wq * c;
            let vp = v[p];
            let vq = v[q];
            v[p] = vp * c - vq * s;
            v[q] = vp * s + vq * c;
        }
        if !rotated {
            break;
        }
    }

    let mut s = [w[0].norm(), w[1].norm(), w[2].norm()];
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    s = [s[order[0]], s[order[1]], s[order[2]]];
    let w = [w[order[0]], w[order[1]], w[order[2]]];
    let v_mat = Mat3::from_cols(v[order[0]], v[order[1]], v[order[2]]);

    let s_max = s[0];
    let mut u_fixed: Vec<Vec3> = Vec::with_capacity(3);
    for i in 0..3 {
        if s[i] <= s_max * RANK_EPS || s[i] == 0.0 {
            s[i] = 0.0;
            continue;
        }
        let mut c = w[i] * (1.0 / s[i]);
        for prev in &u_fixed {
            c = c - *prev * c.dot(prev);
        }
        match c.normalized() {
            Some(cn) => u_fixed.push(cn),
            None => {
                s[i] = 0.0;
            }
        }
    }
    complete_basis(&mut u_fixed);
    let u = Mat3::from_cols(u_fixed[0], u_fixed[1], u_fixed[2]);

    (u, s, v_mat)
}

/// Extends a (possibly empty) orthonormal set to a full orthonormal basis.
fn complete_basis(cols: &mut Vec<Vec3>) {
    let axes = [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
    ];
    while cols.len() < 3 {
        if cols.len() == 2 {
            let c = cols[0].cross(&cols[1]);
            cols.push(c.normalized().unwrap_or(axes[2]));
        } else {
            // Pick the axis least aligned with what we already have.
            let mut best = axes[0];
            let mut best_score = f64::INFINITY;
            for a in &axes {
                let score: f64 = cols.iter().map(|c| c.dot(a).abs()).sum();
                if score < best_score {
                    best_score = score;
                    best = *a;
                }
            }
            let mut c = best;
            for prev in cols.iter() {
                c = c - *prev * c.dot(prev);
            }
            cols.push(c.normalized().unwrap_or(best));
        }
    }
}
