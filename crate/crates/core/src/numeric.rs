//! Small shared numeric utilities: deterministic reductions, medians, and a
//! minimal dense row-major matrix used by the MoE layer and the toy trainer.

use crate::error::{Error, Result};

/// Deterministic pairwise tree reduction. Splits the slice in half until the
/// chunks are small, then sums sequentially. Single summation order regardless
/// of caller parallelism, and better rounding behavior than a running sum.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Median of a slice; even counts average the two middle elements.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Lower weighted median: the smallest value v_k (sorted ascending) whose
/// cumulative weight reaches half the total. Minimizes sum_i w_i * |s - v_i|.
///
/// Items are (value, weight, tag); the tag of the chosen item is returned so
/// callers can identify which breakpoint the optimum landed on. Weights must
/// be positive and finite.
pub fn weighted_median_indexed(items: &mut [(f64, f64, usize)]) -> Option<(f64, usize)> {
    if items.is_empty() {
        return None;
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    let total: f64 = items.iter().map(|it| it.1).sum();
    let half = 0.5 * total;
    let mut cum = 0.0;
    for &(v, w, tag) in items.iter() {
        cum += w;
        if cum >= half {
            return Some((v, tag));
        }
    }
    // Only reachable through rounding in the cumulative sum; take the last item.
    items.last().map(|&(v, _, tag)| (v, tag))
}

/// Weighted median without breakpoint identification.
pub fn weighted_median(values_weights: &[(f64, f64)]) -> Option<f64> {
    let mut items: Vec<(f64, f64, usize)> = values_weights
        .iter()
        .enumerate()
        .map(|(i, &(v, w))| (v, w, i))
        .collect();
    weighted_median_indexed(&mut items).map(|(v, _)| v)
}

pub fn deg_to_rad(deg: f64) -> f64 {
    deg * std::f64::consts::PI / 180.0
}

pub fn rad_to_deg(rad: f64) -> f64 {
    rad * 180.0 / std::f64::consts::PI
}

/// Dense row-major f64 matrix. Deliberately minimal: the MoE layer and the
/// toy trainer spell out their loops, so this only carries storage and shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix storage",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
