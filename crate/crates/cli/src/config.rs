//! Declarative run configuration. Schema-validated before any computation;
//! unknown keys are rejected.

use std::path::Path;

use geomoe::losses::LossWeights;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub moe: MoeConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub clipper: ClipperConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoeConfig {
    pub experts: usize,
    pub top_k: usize,
    pub dim: usize,
    pub hidden: usize,
    /// Renormalize top-k probabilities before combining expert outputs.
    pub renormalize: bool,
    /// Relative jitter applied when replicating the dense FFN into experts.
    pub jitter: f64,
}

impl Default for MoeConfig {
    fn default() -> Self {
        MoeConfig {
            experts: 4,
            top_k: 1,
            dim: 8,
            hidden: 16,
            renormalize: false,
            jitter: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub lambda_track: f64,
    pub lambda_moe: f64,
    pub lambda_pts_local: f64,
    pub lambda_pts_n: f64,
    pub lambda_n: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        WeightsConfig {
            lambda_track: w.lambda_track,
            lambda_moe: w.lambda_moe,
            lambda_pts_local: w.lambda_pts_local,
            lambda_pts_n: w.lambda_pts_n,
            lambda_n: w.lambda_n,
        }
    }
}

impl WeightsConfig {
    pub fn to_loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_track: self.lambda_track,
            lambda_moe: self.lambda_moe,
            lambda_pts_local: self.lambda_pts_local,
            lambda_pts_n: self.lambda_pts_n,
            lambda_n: self.lambda_n,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipperConfig {
    pub capacity: usize,
    pub k_sigma: f64,
    pub warmup: usize,
    /// Clip the total loss (one clipper); per-term clipping is out of scope
    /// for the toy loop.
    pub clip_total: bool,
}

impl Default for ClipperConfig {
    fn default() -> Self {
        ClipperConfig {
            capacity: 256,
            k_sigma: 3.0,
            warmup: 16,
            clip_total: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub learning_rate: f64,
    pub tokens: usize,
    pub domains: usize,
    pub output_dim: usize,
    pub center_scale: f64,
    pub spread: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // Step and token counts calibrated from pilot runs: long enough for
        // the balance pressure to express itself, large enough a batch that
        // expert shares are not dominated by discretization.
        TrainConfig {
            stage1_steps: 300,
            stage2_steps: 1200,
            learning_rate: 0.1,
            tokens: 512,
            domains: 4,
            output_dim: 3,
            center_scale: 3.0,
            spread: 0.6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub icp_max_iters: usize,
    pub icp_tol: f64,
    pub auc_max_deg: u32,
    pub rpe_stride: usize,
    /// Keyframe subsampling stride applied to trajectories before pose
    /// metrics.
    pub keyframe_stride: usize,
    /// "median-scale" or "none".
    pub depth_alignment: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            icp_max_iters: 50,
            icp_tol: 1e-6,
            auc_max_deg: 30,
            rpe_stride: 1,
            keyframe_stride: 1,
            depth_alignment: "median-scale".to_string(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: default_seed(),
            moe: MoeConfig::default(),
            weights: WeightsConfig::default(),
            clipper: ClipperConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.version != CONFIG_VERSION {
            return fail(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                self.version
            ));
        }
        let m = &self.moe;
        if m.experts == 0 || m.top_k == 0 || m.top_k > m.experts {
            return fail(format!(
                "need 1 <= top_k <= experts, got top_k={} experts={}",
                m.top_k, m.experts
            ));
        }
        if m.dim == 0 || m.hidden == 0 {
            return fail("moe.dim and moe.hidden must be positive".to_string());
        }
        if !(m.jitter.is_finite() && m.jitter >= 0.0) {
            return fail(format!("moe.jitter must be nonnegative, got {}", m.jitter));
        }
        self.weights
            .to_loss_weights()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let c = &self.clipper;
        if c.warmup < 2 || c.capacity < c.warmup {
            return fail(format!(
                "need clipper.capacity >= warmup >= 2, got capacity={} warmup={}",
                c.capacity, c.warmup
            ));
        }
        if !(c.k_sigma.is_finite() && c.k_sigma > 0.0) {
            return fail(format!("clipper.k_sigma must be positive, got {}", c.k_sigma));
        }
        let t = &self.train;
        if t.stage1_steps == 0 || t.stage2_steps == 0 {
            return fail("train stage step counts must be positive".to_string());
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return fail(format!(
                "train.learning_rate must be positive, got {}",
                t.learning_rate
            ));
        }
        if t.domains < 2 {
            return fail(format!("need at least 2 domains, got {}", t.domains));
        }
        if t.tokens < t.domains {
            return fail(format!(
                "need at least one token per domain, got tokens={} domains={}",
                t.tokens, t.domains
            ));
        }
        if t.output_dim == 0 {
            return fail("train.output_dim must be positive".to_string());
        }
        let e = &self.eval;
        if e.icp_max_iters == 0 || e.auc_max_deg == 0 || e.rpe_stride == 0 || e.keyframe_stride == 0
        {
            return fail("eval iteration/stride/threshold values must be positive".to_string());
        }
        if !(e.icp_tol.is_finite() && e.icp_tol > 0.0) {
            return fail(format!("eval.icp_tol must be positive, got {}", e.icp_tol));
        }
        if e.depth_alignment != "median-scale" && e.depth_alignment != "none" {
            return fail(format!(
                "eval.depth_alignment must be \"median-scale\" or \"none\", got {:?}",
                e.depth_alignment
            ));
        }
        Ok(())
    }

    /// Canonical TOML echo of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
