//! Minimal dense 3D linear algebra: fixed-size vectors and matrices, unit
//! quaternion rotations, similarity transforms, a 3x3 SVD, and a k-d tree for
//! nearest-neighbor queries. Everything is f64 and immutable after
//! construction.

mod kdtree;
mod svd;

pub use kdtree::{nearest_linear, KdTree3};
pub use svd::svd3;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(&self, o: &Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Vec3) -> Vec3 {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    /// Unit vector in the same direction, or None for (near-)zero input.
    pub fn normalized(&self) -> Option<Vec3> {
        let n = self.norm();
        if n < 1e-300 {
            None
        } else {
            Some(*self * (1.0 / n))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Vec3 {
        Vec3::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn component(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    #[inline]
    pub fn set_component(&mut self, axis: usize, v: f64) {
        match axis {
            0 => self.x = v,
            1 => self.y = v,
            _ => self.z = v,
        }
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3 {
    pub m: [f64; 9],
}

impl Mat3 {
    pub fn identity() -> Mat3 {
        Mat3 {
            m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    pub fn zeros() -> Mat3 {
        Mat3 { m: [0.0; 9] }
    }

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Mat3 {
        Mat3 {
            m: [r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z],
        }
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3 {
            m: [c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.m[3 * r + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.m[3 * r + c] = v;
    }

    pub fn col(&self, c: usize) -> Vec3 {
        Vec3::new(self.at(0, c), self.at(1, c), self.at(2, c))
    }

    pub fn row_vec(&self, r: usize) -> Vec3 {
        Vec3::new(self.at(r, 0), self.at(r, 1), self.at(r, 2))
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.m;
        Mat3 {
            m: [m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]],
        }
    }

    pub fn mul(&self, o: &Mat3) -> Mat3 {
        let mut out = Mat3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += self.at(r, k) * o.at(k, c);
                }
                out.set(r, c, acc);
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &Vec3) -> Vec3 {
        Vec3::new(
            self.at(0, 0) * v.x + self.at(0, 1) * v.y + self.at(0, 2) * v.z,
            self.at(1, 0) * v.x + self.at(1, 1) * v.y + self.at(1, 2) * v.z,
            self.at(2, 0) * v.x + self.at(2, 1) * v.y + self.at(2, 2) * v.z,
        )
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = *self;
        for v in out.m.iter_mut() {
            *v *= s;
        }
        out
    }

    pub fn add(&self, o: &Mat3) -> Mat3 {
        let mut out = *self;
        for (a, b) in out.m.iter_mut().zip(o.m.iter()) {
            *a += *b;
        }
        out
    }

    pub fn sub(&self, o: &Mat3) -> Mat3 {
        let mut out = *self;
        for (a, b) in out.m.iter_mut().zip(o.m.iter()) {
            *a -= *b;
        }
        out
    }

    /// a * b^T for column vectors a, b.
    pub fn outer(a: &Vec3, b: &Vec3) -> Mat3 {
        Mat3 {
            m: [
                a.x * b.x,
                a.x * b.y,
                a.x * b.z,
                a.y * b.x,
                a.y * b.y,
                a.y * b.z,
                a.z * b.x,
                a.z * b.y,
                a.z * b.z,
            ],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|v| v.is_finite())
    }
}

/// Unit quaternion with w >= 0 (canonical sign).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Rotation {
    pub fn identity() -> Rotation {
        Rotation {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Builds from raw components, normalizing and canonicalizing the sign.
    pub fn from_quat(w: f64, x: f64, y: f64, z: f64) -> Result<Rotation> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::InvalidParameter(
                "quaternion has zero or non-finite norm".to_string(),
            ));
        }
        let mut q = Rotation {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        };
        if q.w < 0.0 {
            q = Rotation {
                w: -q.w,
                x: -q.x,
                y: -q.y,
                z: -q.z,
            };
        }
        Ok(q)
    }

    /// Axis is normalized internally; angle in radians.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Rotation> {
        let a = axis
            .normalized()
            .ok_or_else(|| Error::InvalidParameter("zero rotation axis".to_string()))?;
        let half = 0.5 * angle;
        let s = half.sin();
        Rotation::from_quat(half.cos(), a.x * s, a.y * s, a.z * s)
    }

    pub fn to_matrix(&self) -> Mat3 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Mat3 {
            m: [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        }
    }

    /// Shepperd-style extraction: picks the numerically largest pivot.
    /// The input must be (close to) a proper rotation matrix.
    pub fn from_matrix(m: &Mat3) -> Result<Rotation> {
        let t = m.at(0, 0) + m.at(1, 1) + m.at(2, 2);
        let (w, x, y, z);
        if t > 0.0 {
            let s = (t + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m.at(2, 1) - m.at(1, 2)) / s;
            y = (m.at(0, 2) - m.at(2, 0)) / s;
            z = (m.at(1, 0) - m.at(0, 1)) / s;
        } else if m.at(0, 0) > m.at(1, 1) && m.at(0, 0) > m.at(2, 2) {
            let s = (1.0 + m.at(0, 0) - m.at(1, 1) - m.at(2, 2)).sqrt() * 2.0;
            w = (m.at(2, 1) - m.at(1, 2)) / s;
            x = 0.25 * s;
            y = (m.at(0, 1) + m.at(1, 0)) / s;
            z = (m.at(0, 2) + m.at(2, 0)) / s;
        } else if m.at(1, 1) > m.at(2, 2) {
            let s = (1.0 + m.at(1, 1) - m.at(0, 0) - m.at(2, 2)).sqrt() * 2.0;
            w = (m.at(0, 2) - m.at(2, 0)) / s;
            x = (m.at(0, 1) + m.at(1, 0)) / s;
            y = 0.25 * s;
            z = (m.at(1, 2) + m.at(2, 1)) / s;
        } else {
            let s = (1.0 + m.at(2, 2) - m.at(0, 0) - m.at(1, 1)).sqrt() * 2.0;
            w = (m.at(1, 0) - m.at(0, 1)) / s;
            x = (m.at(0, 2) + m.at(2, 0)) / s;
            y = (m.at(1, 2) + m.at(2, 1)) / s;
            z = 0.25 * s;
        }
        Rotation::from_quat(w, x, y, z)
    }

    pub fn inverse(&self) -> Rotation {
        // Conjugate; canonical sign is preserved because w is unchanged.
        Rotation {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        // v' = v + 2 q_v x (q_v x v + w v)
        let qv = Vec3::new(self.x, self.y, self.z);
        let t = qv.cross(v) + *v * self.w;
        *v + qv.cross(&t) * 2.0
    }

    /// Geodesic angle in radians to another rotation, in [0, pi].
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let rel = self.inverse() * *other;
        let vec_norm = (rel.x * rel.x + rel.y * rel.y + rel.z * rel.z).sqrt();
        2.0 * vec_norm.atan2(rel.w.abs())
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    /// Hamilton product with sign canonicalization; (a * b).rotate(v) equals
    /// a.rotate(b.rotate(v)).
    fn mul(self, o: Rotation) -> Rotation {
        let w = self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z;
        let x = self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y;
        let y = self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x;
        let z = self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w;
        // Products of unit quaternions stay unit to machine precision; only
        // the sign needs fixing here.
        if w < 0.0 {
            Rotation {
                w: -w,
                x: -x,
                y: -y,
                z: -z,
            }
        } else {
            Rotation { w, x, y, z }
        }
    }
}

/// Angle in radians between two unit vectors, evaluated as
/// 2 * atan2(|a - b|, |a + b|). Equals arccos(a . b) mathematically but is
/// exact at both endpoints: identical vectors give exactly 0, opposite
/// vectors give exactly pi, and accuracy does not degrade near either.
pub fn unit_vector_angle(a: &Vec3, b: &Vec3) -> f64 {
    let diff = (*a - *b).norm();
    let sum = (*a + *b).norm();
    2.0 * diff.atan2(sum)
}

/// Similarity transform: x -> scale * R * x + t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Sim3 {
    pub fn identity() -> Sim3 {
        Sim3 {
            scale: 1.0,
            rotation: Rotation::identity(),
            translation: Vec3::ZERO,
        }
    }

    pub fn new(scale: f64, rotation: Rotation, translation: Vec3) -> Result<Sim3> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "similarity scale must be positive and finite, got {scale}"
            )));
        }
        if !translation.is_finite() {
            return Err(Error::InvalidParameter(
                "non-finite translation".to_string(),
            ));
        }
        Ok(Sim3 {
            scale,
            rotation,
            translation,
        })
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) * self.scale + self.translation
    }

    /// (self.compose(other))(x) == self(other(x)).
    pub fn compose(&self, other: &Sim3) -> Sim3 {
        Sim3 {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.rotation.rotate(&other.translation) * self.scale + self.translation,
        }
    }

    pub fn inverse(&self) -> Sim3 {
        let inv_rot = self.rotation.inverse();
        let inv_scale = 1.0 / self.scale;
        Sim3 {
            scale: inv_scale,
            rotation: inv_rot,
            translation: inv_rot.rotate(&self.translation) * (-inv_scale),
        }
    }
}
