//! Adaptive k-sigma loss clipping: keep a sliding window of recent raw loss
//! values and clip incoming losses to mean + k * std of that window.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Error, Result};

/// Result of observing one loss value.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClipOutcome {
    pub clipped: f64,
    pub was_clipped: bool,
    /// Threshold in effect for this observation; None before warmup.
    pub threshold: Option<f64>,
}

/// Single-writer stateful clipper. Raw (unclipped) values enter the history,
/// so a persistent regime shift eventually raises the threshold instead of
/// the clipper adapting to its own output.
#[derive(Debug, Clone)]
pub struct LossClipper {
    window: VecDeque<f64>,
    capacity: usize,
    k: f64,
    warmup: usize,
}

impl LossClipper {
    /// `capacity >= warmup >= 2`, `k > 0`.
    pub fn new(capacity: usize, k: f64, warmup: usize) -> Result<Self> {
        if warmup < 2 || capacity < warmup {
            return Err(Error::InvalidParameter(format!(
                "need capacity >= warmup >= 2, got capacity={capacity} warmup={warmup}"
            )));
        }
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "k must be positive and finite, got {k}"
            )));
        }
        Ok(LossClipper {
            window: VecDeque::with_capacity(capacity),
            capacity,
            k,
            warmup,
        })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    /// Threshold mu + k*sigma over the current window, None before warmup.
    /// Sigma uses the population formula.
    pub fn threshold(&self) -> Option<f64> {
        if self.window.len() < self.warmup {
            return None;
        }
        let n = self.window.len() as f64;
        let mean = self.window.iter().sum::<f64>() / n;
        let var = self
            .window
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        Some(mean + self.k * var.sqrt())
    }

    /// Clips `loss` against the threshold computed from the window excluding
    /// the current value, then pushes the raw value into the history.
    /// Non-finite losses are rejected, never silently clipped.
    pub fn observe_and_clip(&mut self, loss: f64) -> Result<ClipOutcome> {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        let threshold = self.threshold();
        let (clipped, was_clipped) = match threshold {
            Some(t) if loss > t => (t, true),
            _ => (loss, false),
        };
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(loss);
        Ok(ClipOutcome {
            clipped,
            was_clipped,
            threshold,
        })
    }
}

impl Default for LossClipper {
    fn default() -> Self {
        LossClipper::new(256, 3.0, 16).expect("default parameters are valid")
    }
}
