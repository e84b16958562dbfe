//! Two-stage toy training loop on the multi-domain token task.
//!
//! Stage 1 trains a dense FFN (a single-expert layer) plus a linear head with
//! plain fixed-step SGD. Stage 2 replicates the trained FFN into an expert
//! bank with seeded jitter, resets the router to zero, and continues with
//! loss = task MSE + lambda_moe * load-balance. The total loss runs through
//! one k-sigma clipper; a clipped step scales its gradients by
//! clipped / raw so the update direction is preserved while the magnitude is
//! bounded.
//!
//! Fully deterministic: full-batch gradient descent, all randomness from
//! seeds derived off the config seed.

use std::fs;
use std::io::Write;
use std::path::Path;

use geomoe::moe::{
    load_balance_router_grad, moe_backward, moe_forward, route, MoeLayer, Router,
};
use geomoe::numeric::Matrix;
use geomoe::stability::LossClipper;
use geomoe::synth::{make_moe_task, DomainTaskSpec, MoeTask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{io_err, CliError};

/// Linear readout head: y = W h + b.
#[derive(Debug, Clone)]
struct LinearHead {
    w: Matrix,
    b: Vec<f64>,
}

impl LinearHead {
    fn seeded(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> LinearHead {
        let mut w = Matrix::zeros(out_dim, in_dim);
        let s = 1.0 / (in_dim as f64).sqrt();
        for v in w.data_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v = n * s;
        }
        LinearHead {
            w,
            b: vec![0.0; out_dim],
        }
    }

    fn forward(&self, h: &[f64], out: &mut [f64]) {
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = self.w.row(o);
            let mut acc = self.b[o];
            for (hv, wv) in h.iter().zip(row.iter()) {
                acc += hv * wv;
            }
            *out_v = acc;
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepLog {
    pub stage: u8,
    pub step: usize,
    pub total_raw: f64,
    pub total_clipped: f64,
    pub task_mse: f64,
    pub lb_loss: f64,
    /// Per-expert fraction of (token, slot) assignments at this step.
    pub dispatch_f: Vec<f64>,
    pub was_clipped: bool,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClipEvent {
    pub step: usize,
    pub raw: f64,
    pub threshold: f64,
}

/// Final measurements of one training run.
#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub seed: u64,
    pub lambda_moe: f64,
    pub initial_total: f64,
    pub final_total: f64,
    pub final_task_mse: f64,
    pub final_lb_loss: f64,
    /// Per-domain fraction of tokens routed (top-1) to the domain's modal
    /// expert.
    pub purity: Vec<f64>,
    pub mean_purity: f64,
    pub min_purity: f64,
    /// Largest fraction of tokens any single expert receives (top-1).
    pub max_expert_share: f64,
    /// Dispatch fractions f at the end of training.
    pub dispatch_f: Vec<f64>,
    pub clip_events: usize,
}

/// Routing summary against domain labels.
fn routing_summary(layer: &MoeLayer, task: &MoeTask, n_domains: usize) -> (Vec<f64>, f64) {
    let routing = route(layer, &task.tokens).expect("trained layer routes its own tokens");
    let t_count = task.tokens.rows();
    let e_count = layer.num_experts();
    let mut per_domain = vec![vec![0usize; e_count]; n_domains];
    let mut per_expert = vec![0usize; e_count];
    for t in 0..t_count {
        let top1 = routing.topk_indices[t][0];
        per_domain[task.domains[t]][top1] += 1;
        per_expert[top1] += 1;
    }
    let purity: Vec<f64> = per_domain
        .iter()
        .map(|counts| {
            let total: usize = counts.iter().sum();
            let modal = counts.iter().copied().max().unwrap_or(0);
            if total == 0 {
                0.0
            } else {
                modal as f64 / total as f64
            }
        })
        .collect();
    let max_share = per_expert
        .iter()
        .map(|&c| c as f64 / t_count as f64)
        .fold(0.0f64, f64::max);
    (purity, max_share)
}

struct Losses {
    total: f64,
    task_mse: f64,
    lb: f64,
    dispatch_f: Vec<f64>,
}

fn forward_losses(layer: &MoeLayer, head: &LinearHead, task: &MoeTask, lambda_moe: f64) -> Losses {
    let fwd = moe_forward(layer, &task.tokens).expect("shapes fixed by construction");
    let t_count = task.tokens.rows();
    let out_dim = task.targets.cols();
    let mut y = vec![0.0; out_dim];
    let mut sq = 0.0;
    for t in 0..t_count {
        head.forward(fwd.outputs.row(t), &mut y);
        for (o, yv) in y.iter().enumerate() {
            let d = yv - task.targets.at(t, o);
            sq += d * d;
        }
    }
    let task_mse = sq / (t_count * out_dim) as f64;
    let lb = geomoe::moe::load_balance_loss(&fwd.stats);
    Losses {
        total: task_mse + lambda_moe * lb,
        task_mse,
        lb,
        dispatch_f: fwd.stats.f,
    }
}

/// One full-batch SGD step; returns the loss values at the point where the
/// gradient was evaluated.
#[allow(clippy::too_many_arguments)]
fn sgd_step(
    layer: &mut MoeLayer,
    head: &mut LinearHead,
    task: &MoeTask,
    lambda_moe: f64,
    lr: f64,
    clipper: Option<&mut LossClipper>,
    step: usize,
    clip_log: &mut Vec<ClipEvent>,
) -> (Losses, bool, Option<f64>) {
    let fwd = moe_forward(layer, &task.tokens).expect("shapes fixed by construction");
    let t_count = task.tokens.rows();
    let out_dim = task.targets.cols();
    let dim = layer.dim();

    // Forward through the head, collecting the MSE and its gradient.
    let mut head_grad_w = Matrix::zeros(out_dim, dim);
    let mut head_grad_b = vec![0.0; out_dim];
    let mut upstream = Matrix::zeros(t_count, dim);
    let mut y = vec![0.0; out_dim];
    let mut sq = 0.0;
    let denom = (t_count * out_dim) as f64;
    for t in 0..t_count {
        let h = fwd.outputs.row(t);
        head.forward(h, &mut y);
        for o in 0..out_dim {
            let d = y[o] - task.targets.at(t, o);
            sq += d * d;
            let dy = 2.0 * d / denom;
            head_grad_b[o] += dy;
            let gw_row = head_grad_w.row_mut(o);
            let w_row = head.w.row(o);
            let up_row = upstream.row_mut(t);
            for k in 0..dim {
                gw_row[k] += dy * h[k];
                up_row[k] += dy * w_row[k];
            }
        }
    }
    let task_mse = sq / denom;

    let grads = moe_backward(layer, &task.tokens, &upstream).expect("forward succeeded");
    let (lb, lb_router_grad) =
        load_balance_router_grad(layer, &task.tokens, &fwd.routing, &fwd.stats);
    let total_raw = task_mse + lambda_moe * lb;

    // Stabilizer on the total loss; gradients scale with the clip ratio.
    let mut factor = 1.0;
    let mut was_clipped = false;
    let mut threshold: Option<f64> = None;
    if let Some(clip) = clipper {
        let out = clip
            .observe_and_clip(total_raw)
            .expect("training losses are finite");
        was_clipped = out.was_clipped;
        threshold = out.threshold;
        if out.was_clipped {
            clip_log.push(ClipEvent {
                step,
                raw: total_raw,
                threshold: out.threshold.expect("clipped implies threshold"),
            });
            factor = out.clipped / total_raw;
        }
    }

    let scale = lr * factor;
    for (w, g) in head.w.data_mut().iter_mut().zip(head_grad_w.data().iter()) {
        *w -= scale * g;
    }
    for (b, g) in head.b.iter_mut().zip(head_grad_b.iter()) {
        *b -= scale * g;
    }
    for (w, g) in layer
        .router
        .w
        .data_mut()
        .iter_mut()
        .zip(grads.router_w.data().iter())
    {
        *w -= scale * g;
    }
    for (w, g) in layer
        .router
        .w
        .data_mut()
        .iter_mut()
        .zip(lb_router_grad.data().iter())
    {
        *w -= scale * lambda_moe * g;
    }
    for (e, eg) in grads.experts.iter().enumerate() {
        let expert = &mut layer.experts[e];
        for (w, g) in expert.w1.data_mut().iter_mut().zip(eg.w1.data().iter()) {
            *w -= scale * g;
        }
        for (b, g) in expert.b1.iter_mut().zip(eg.b1.iter()) {
            *b -= scale * g;
        }
        for (w, g) in expert.w2.data_mut().iter_mut().zip(eg.w2.data().iter()) {
            *w -= scale * g;
        }
        for (b, g) in expert.b2.iter_mut().zip(eg.b2.iter()) {
            *b -= scale * g;
        }
    }

    (
        Losses {
            total: total_raw,
            task_mse,
            lb,
            dispatch_f: fwd.stats.f,
        },
        was_clipped,
        threshold,
    )
}

/// Runs the two-stage toy training loop. When `out_dir` is given, writes
/// train_log.jsonl, clip_events.jsonl, final_report.json, and the trained
/// layer under model/.
pub fn train_toy(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    let t = &cfg.train;
    let m = &cfg.moe;
    let lambda_moe = cfg.weights.lambda_moe;

    // Derived seeds: task spec, data, parameter init, replication jitter.
    let spec = DomainTaskSpec::generate(
        m.dim,
        t.output_dim,
        t.domains,
        t.center_scale,
        t.spread,
        cfg.seed,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let task = make_moe_task(&spec, t.tokens, cfg.seed.wrapping_add(1))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));

    // Stage 1: dense FFN as a single-expert layer plus the head.
    let mut dense = MoeLayer::seeded(m.dim, m.hidden, 1, 1, &mut init_rng)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut head = LinearHead::seeded(t.output_dim, m.dim, &mut init_rng);
    let mut clipper = if cfg.clipper.clip_total {
        Some(
            LossClipper::new(cfg.clipper.capacity, cfg.clipper.k_sigma, cfg.clipper.warmup)
                .map_err(|e| CliError::Config(e.to_string()))?,
        )
    } else {
        None
    };

    let initial_total = forward_losses(&dense, &head, &task, lambda_moe).total;
    let mut logs: Vec<StepLog> = Vec::new();
    let mut clip_log: Vec<ClipEvent> = Vec::new();

    for step in 0..t.stage1_steps {
        let (losses, was_clipped, threshold) = sgd_step(
            &mut dense,
            &mut head,
            &task,
            0.0, // no balancing pressure on a single expert
            t.learning_rate,
            clipper.as_mut(),
            step,
            &mut clip_log,
        );
        logs.push(StepLog {
            stage: 1,
            step,
            total_raw: losses.total,
            total_clipped: threshold.map_or(losses.total, |th| losses.total.min(th)),
            task_mse: losses.task_mse,
            lb_loss: losses.lb,
            dispatch_f: losses.dispatch_f,
            was_clipped,
            threshold,
        });
    }

    // Stage 2: replicate the dense FFN into the expert bank, zero router.
    let mut layer = MoeLayer::replicate(
        &dense.experts[0],
        m.experts,
        m.top_k,
        m.jitter,
        &mut jitter_rng,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    layer.renormalize = m.renormalize;
    debug_assert_eq!(layer.router.w.data(), Router::zeros(m.experts, m.dim).w.data());

    for step in 0..t.stage2_steps {
        let global_step = t.stage1_steps + step;
        let (losses, was_clipped, threshold) = sgd_step(
            &mut layer,
            &mut head,
            &task,
            lambda_moe,
            t.learning_rate,
            clipper.as_mut(),
            global_step,
            &mut clip_log,
        );
        logs.push(StepLog {
            stage: 2,
            step: global_step,
            total_raw: losses.total,
            total_clipped: threshold.map_or(losses.total, |th| losses.total.min(th)),
            task_mse: losses.task_mse,
            lb_loss: losses.lb,
            dispatch_f: losses.dispatch_f,
            was_clipped,
            threshold,
        });
    }

    let final_losses = forward_losses(&layer, &head, &task, lambda_moe);
    let (purity, max_share) = routing_summary(&layer, &task, t.domains);
    let fwd = moe_forward(&layer, &task.tokens).expect("trained layer");
    let mean_purity = purity.iter().sum::<f64>() / purity.len() as f64;
    let min_purity = purity.iter().copied().fold(f64::INFINITY, f64::min);

    let outcome = TrainOutcome {
        seed: cfg.seed,
        lambda_moe,
        initial_total,
        final_total: final_losses.total,
        final_task_mse: final_losses.task_mse,
        final_lb_loss: final_losses.lb,
        purity,
        mean_purity,
        min_purity,
        max_expert_share: max_share,
        dispatch_f: fwd.stats.f.clone(),
        clip_events: clip_log.len(),
    };

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_err)?;
        let mut log_file = fs::File::create(dir.join("train_log.jsonl")).map_err(io_err)?;
        for entry in &logs {
            let line = serde_json::to_string(entry)
                .map_err(|e| CliError::Io(format!("log serialization: {e}")))?;
            writeln!(log_file, "{line}").map_err(io_err)?;
        }
        let mut clip_file = fs::File::create(dir.join("clip_events.jsonl")).map_err(io_err)?;
        for entry in &clip_log {
            let line = serde_json::to_string(entry)
                .map_err(|e| CliError::Io(format!("clip log serialization: {e}")))?;
            writeln!(clip_file, "{line}").map_err(io_err)?;
        }
        #[derive(Serialize)]
        struct FinalReport<'a> {
            build: &'a str,
            config: &'a RunConfig,
            outcome: &'a TrainOutcome,
        }
        let report = FinalReport {
            build: crate::BUILD_ID,
            config: cfg,
            outcome: &outcome,
        };
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Io(format!("report serialization: {e}")))?;
        fs::write(dir.join("final_report.json"), json).map_err(io_err)?;
        geomoe::io::save_moe_layer(&dir.join("model"), &layer)
            .map_err(|e| CliError::Io(e.to_string()))?;
    }

    Ok(outcome)
}
