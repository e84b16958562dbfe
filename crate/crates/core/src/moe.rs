//! Mixture-of-experts layer: a linear router with softmax assignment, top-K
//! dispatch to feed-forward experts, probability-weighted combination, the
//! load-balancing loss E * sum_i F_i * G_i, and analytic gradients for the
//! whole forward pass.
//!
//! Forward and backward are pure functions of (layer, inputs); a layer can be
//! shared read-only across threads and updated by a single writer.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Tanh-approximate GELU, the transformer-FFN convention the experts are
/// replicated from. Smooth everywhere, so finite differences are meaningful.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

pub fn gelu_prime(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

/// Two-layer feed-forward expert with GELU activation: w2 gelu(w1 x + b1) + b2.
#[derive(Debug, Clone)]
pub struct ExpertFfn {
    pub dim: usize,
    pub hidden: usize,
    /// hidden x dim
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// dim x hidden
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl ExpertFfn {
    pub fn zeros(dim: usize, hidden: usize) -> ExpertFfn {
        ExpertFfn {
            dim,
            hidden,
            w1: Matrix::zeros(hidden, dim),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(dim, hidden),
            b2: vec![0.0; dim],
        }
    }

    /// Random init with 1/sqrt(fan-in) scaling; biases start at zero.
    pub fn seeded(dim: usize, hidden: usize, rng: &mut impl Rng) -> ExpertFfn {
        let mut e = ExpertFfn::zeros(dim, hidden);
        let s1 = 1.0 / (dim as f64).sqrt();
        for v in e.w1.data_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v = n * s1;
        }
        let s2 = 1.0 / (hidden as f64).sqrt();
        for v in e.w2.data_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v = n * s2;
        }
        e
    }

    /// Copy with multiplicative jitter p * (1 + rel * N(0,1)) on every
    /// parameter. Used when replicating one trained FFN into an expert bank;
    /// breaks the symmetry that would otherwise keep replicated experts
    /// identical under identical gradients.
    pub fn jittered_copy(&self, rel: f64, rng: &mut impl Rng) -> ExpertFfn {
        let mut e = self.clone();
        for v in e
            .w1
            .data_mut()
            .iter_mut()
            .chain(e.b1.iter_mut())
            .chain(e.w2.data_mut().iter_mut())
            .chain(e.b2.iter_mut())
        {
            let n: f64 = rng.sample(StandardNormal);
            *v *= 1.0 + rel * n;
        }
        e
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        let mut hidden = vec![0.0; self.hidden];
        for h in 0..self.hidden {
            let row = self.w1.row(h);
            let mut acc = self.b1[h];
            for (xv, wv) in x.iter().zip(row.iter()) {
                acc += xv * wv;
            }
            hidden[h] = gelu(acc);
        }
        for d in 0..self.dim {
            let row = self.w2.row(d);
            let mut acc = self.b2[d];
            for (hv, wv) in hidden.iter().zip(row.iter()) {
                acc += hv * wv;
            }
            out[d] = acc;
        }
    }

    /// Forward keeping pre-activations for the backward pass.
    fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut pre = vec![0.0; self.hidden];
        let mut act = vec![0.0; self.hidden];
        for h in 0..self.hidden {
            let row = self.w1.row(h);
            let mut acc = self.b1[h];
            for (xv, wv) in x.iter().zip(row.iter()) {
                acc += xv * wv;
            }
            pre[h] = acc;
            act[h] = gelu(acc);
        }
        let mut out = vec![0.0; self.dim];
        for d in 0..self.dim {
            let row = self.w2.row(d);
            let mut acc = self.b2[d];
            for (hv, wv) in act.iter().zip(row.iter()) {
                acc += hv * wv;
            }
            out[d] = acc;
        }
        (out, pre, act)
    }
}

/// Gradients matching the ExpertFfn parameter layout.
#[derive(Debug, Clone)]
pub struct ExpertFfnGrad {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl ExpertFfnGrad {
    pub fn zeros(dim: usize, hidden: usize) -> ExpertFfnGrad {
        ExpertFfnGrad {
            w1: Matrix::zeros(hidden, dim),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(dim, hidden),
            b2: vec![0.0; dim],
        }
    }
}

/// Linear router producing one logit per expert: f(x) = W x.
#[derive(Debug, Clone)]
pub struct Router {
    /// experts x dim
    pub w: Matrix,
}

impl Router {
    /// Zero-initialized router: initial routing is uniform, which avoids
    /// early expert collapse.
    pub fn zeros(experts: usize, dim: usize) -> Router {
        Router {
            w: Matrix::zeros(experts, dim),
        }
    }

    pub fn experts(&self) -> usize {
        self.w.rows()
    }

    pub fn dim(&self) -> usize {
        self.w.cols()
    }
}

/// An MoE layer: router, expert bank, and the top-K count.
#[derive(Debug, Clone)]
pub struct MoeLayer {
    pub router: Router,
    pub experts: Vec<ExpertFfn>,
    pub k: usize,
    /// When true, the top-K probabilities are renormalized to sum to one
    /// before combining expert outputs. Off by default: the combination uses
    /// the raw softmax probabilities.
    pub renormalize: bool,
}

impl MoeLayer {
    pub fn new(router: Router, experts: Vec<ExpertFfn>, k: usize) -> Result<MoeLayer> {
        if experts.is_empty() {
            return Err(Error::InvalidParameter("expert bank is empty".to_string()));
        }
        if k < 1 || k > experts.len() {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= k <= {}, got k={k}",
                experts.len()
            )));
        }
        let dim = experts[0].dim;
        let hidden = experts[0].hidden;
        for e in &experts {
            if e.dim != dim || e.hidden != hidden {
                return Err(Error::DimensionMismatch {
                    context: "expert shapes",
                    expected: dim,
                    actual: e.dim,
                });
            }
        }
        if router.experts() != experts.len() || router.dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "router shape",
                expected: experts.len(),
                actual: router.experts(),
            });
        }
        Ok(MoeLayer {
            router,
            experts,
            k,
            renormalize: false,
        })
    }

    /// Fresh random expert bank with a zero router.
    pub fn seeded(
        dim: usize,
        hidden: usize,
        experts: usize,
        k: usize,
        rng: &mut impl Rng,
    ) -> Result<MoeLayer> {
        let bank: Vec<ExpertFfn> = (0..experts)
            .map(|_| ExpertFfn::seeded(dim, hidden, rng))
            .collect();
        MoeLayer::new(Router::zeros(experts, dim), bank, k)
    }

    /// Expert-replication initializer: every expert starts as a jittered copy
    /// of `base` and the router starts at zero (uniform routing).
    pub fn replicate(
        base: &ExpertFfn,
        experts: usize,
        k: usize,
        jitter_rel: f64,
        rng: &mut impl Rng,
    ) -> Result<MoeLayer> {
        let bank: Vec<ExpertFfn> = (0..experts)
            .map(|_| base.jittered_copy(jitter_rel, rng))
            .collect();
        MoeLayer::new(Router::zeros(experts, base.dim), bank, k)
    }

    pub fn dim(&self) -> usize {
        self.experts[0].dim
    }

    pub fn hidden(&self) -> usize {
        self.experts[0].hidden
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }
}

/// Routing probabilities and the top-K selection per token. `topk_weights`
/// are the combination weights actually used by the forward pass: the raw
/// probabilities at `topk_indices`, or their renormalization when the layer
/// has `renormalize` set.
#[derive(Debug, Clone)]
pub struct RouterOutput {
    /// tokens x experts
    pub probs: Matrix,
    pub topk_indices: Vec<Vec<usize>>,
    pub topk_weights: Vec<Vec<f64>>,
}

/// Batch dispatch statistics for the load-balancing loss. `f` is the fraction
/// of (token, slot) assignments routed to each expert (sums to 1); `g` is the
/// mean routing probability per expert over the batch.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DispatchStats {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub token_count: usize,
}

fn check_tokens(layer: &MoeLayer, tokens: &Matrix) -> Result<()> {
    if tokens.cols() != layer.dim() {
        return Err(Error::DimensionMismatch {
            context: "token dimension",
            expected: layer.dim(),
            actual: tokens.cols(),
        });
    }
    if tokens.rows() == 0 {
        return Err(Error::InvalidParameter("empty token batch".to_string()));
    }
    if layer.k > layer.num_experts() {
        return Err(Error::InvalidParameter(format!(
            "k={} exceeds expert count {}",
            layer.k,
            layer.num_experts()
        )));
    }
    Ok(())
}

/// Softmax routing with max-subtraction; top-K ties break toward the lower
/// expert index.
pub fn route(layer: &MoeLayer, tokens: &Matrix) -> Result<RouterOutput> {
    check_tokens(layer, tokens)?;
    let t_count = tokens.rows();
    let e_count = layer.num_experts();
    let mut probs = Matrix::zeros(t_count, e_count);
    let mut topk_indices = Vec::with_capacity(t_count);
    let mut topk_weights = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let x = tokens.row(t);
        let mut logits = vec![0.0; e_count];
        for (e, l) in logits.iter_mut().enumerate() {
            let row = layer.router.w.row(e);
            let mut acc = 0.0;
            for (xv, wv) in x.iter().zip(row.iter()) {
                acc += xv * wv;
            }
            *l = acc;
        }
        let maxl = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (e, l) in logits.iter().enumerate() {
            let v = (l - maxl).exp();
            probs.set(t, e, v);
            denom += v;
        }
        for e in 0..e_count {
            probs.set(t, e, probs.at(t, e) / denom);
        }
        let mut order: Vec<usize> = (0..e_count).collect();
        order.sort_by(|&a, &b| probs.at(t, b).total_cmp(&probs.at(t, a)).then(a.cmp(&b)));
        let sel: Vec<usize> = order[..layer.k].to_vec();
        let mut weights: Vec<f64> = sel.iter().map(|&e| probs.at(t, e)).collect();
        if layer.renormalize {
            let s: f64 = weights.iter().sum();
            for w in weights.iter_mut() {
                *w /= s;
            }
        }
        topk_indices.push(sel);
        topk_weights.push(weights);
    }
    Ok(RouterOutput {
        probs,
        topk_indices,
        topk_weights,
    })
}

/// Dispatch statistics from a routing result.
pub fn dispatch_stats(routing: &RouterOutput, experts: usize, k: usize) -> DispatchStats {
    let t_count = routing.topk_indices.len();
    let mut f = vec![0.0; experts];
    let mut g = vec![0.0; experts];
    for sel in &routing.topk_indices {
        for &e in sel {
            f[e] += 1.0;
        }
    }
    let denom = (t_count * k) as f64;
    for v in f.iter_mut() {
        *v /= denom;
    }
    for t in 0..t_count {
        for e in 0..experts {
            g[e] += routing.probs.at(t, e);
        }
    }
    for v in g.iter_mut() {
        *v /= t_count as f64;
    }
    DispatchStats {
        f,
        g,
        token_count: t_count,
    }
}

/// Forward result: combined outputs, dispatch statistics, and the routing.
#[derive(Debug, Clone)]
pub struct MoeForward {
    pub outputs: Matrix,
    pub stats: DispatchStats,
    pub routing: RouterOutput,
}

/// MoE(x) = sum over the K selected experts of P(x)_i * expert_i(x).
/// Probabilities are not renormalized after top-K unless the layer says so.
pub fn moe_forward(layer: &MoeLayer, tokens: &Matrix) -> Result<MoeForward> {
    let routing = route(layer, tokens)?;
    let t_count = tokens.rows();
    let dim = layer.dim();
    let mut outputs = Matrix::zeros(t_count, dim);
    let mut buf = vec![0.0; dim];
    for t in 0..t_count {
        let x = tokens.row(t);
        for (rank, &e) in routing.topk_indices[t].iter().enumerate() {
            let w = routing.topk_weights[t][rank];
            layer.experts[e].forward(x, &mut buf);
            let row = outputs.row_mut(t);
            for (o, b) in row.iter_mut().zip(buf.iter()) {
                *o += w * b;
            }
        }
    }
    let stats = dispatch_stats(&routing, layer.num_experts(), layer.k);
    Ok(MoeForward {
        outputs,
        stats,
        routing,
    })
}

/// Load-balancing loss L = E * sum_i F_i * G_i. Uniform routing probabilities
/// give exactly 1; full collapse (f = g = one-hot) gives exactly E.
pub fn load_balance_loss(stats: &DispatchStats) -> f64 {
    let e = stats.f.len() as f64;
    let mut acc = 0.0;
    for (fi, gi) in stats.f.iter().zip(stats.g.iter()) {
        acc += fi * gi;
    }
    e * acc
}

/// Gradients of a scalar objective through the MoE forward pass.
#[derive(Debug, Clone)]
pub struct MoeGradients {
    /// experts x dim
    pub router_w: Matrix,
    pub experts: Vec<ExpertFfnGrad>,
    /// tokens x dim
    pub tokens: Matrix,
}

/// Analytic backward pass for `moe_forward` given dL/d(outputs).
///
/// Gradient flows through the selected experts and through the softmax
/// probabilities of the selected experts (which touch every router row via
/// the softmax normalizer); the top-K selection itself is treated as
/// non-differentiable. Experts never selected receive zero gradient.
pub fn moe_backward(layer: &MoeLayer, tokens: &Matrix, upstream: &Matrix) -> Result<MoeGradients> {
    check_tokens(layer, tokens)?;
    if upstream.rows() != tokens.rows() || upstream.cols() != layer.dim() {
        return Err(Error::DimensionMismatch {
            context: "upstream gradient shape",
            expected: tokens.rows() * layer.dim(),
            actual: upstream.rows() * upstream.cols(),
        });
    }
    let routing = route(layer, tokens)?;
    let e_count = layer.num_experts();
    let dim = layer.dim();
    let hidden = layer.hidden();
    let mut grads = MoeGradients {
        router_w: Matrix::zeros(e_count, dim),
        experts: (0..e_count).map(|_| ExpertFfnGrad::zeros(dim, hidden)).collect(),
        tokens: Matrix::zeros(tokens.rows(), dim),
    };
    for t in 0..tokens.rows() {
        let x = tokens.row(t);
        let up = upstream.row(t);
        let sel = &routing.topk_indices[t];
        let weights = &routing.topk_weights[t];
        // dL/d(combination weight) per selected expert.
        let mut dweight = vec![0.0; sel.len()];
        for (rank, &e) in sel.iter().enumerate() {
            let w_sel = weights[rank];
            let (y, pre, act) = layer.experts[e].forward_cached(x);
            dweight[rank] = up.iter().zip(y.iter()).map(|(u, yv)| u * yv).sum();

            // Backprop through the expert, scaled by the combination weight.
            let eg = &mut grads.experts[e];
            let mut dact = vec![0.0; hidden];
            for d in 0..dim {
                let dy = w_sel * up[d];
                eg.b2[d] += dy;
                let w2_row = layer.experts[e].w2.row(d);
                let g2_row = eg.w2.row_mut(d);
                for h in 0..hidden {
                    g2_row[h] += dy * act[h];
                    dact[h] += dy * w2_row[h];
                }
            }
            for h in 0..hidden {
                let dpre = dact[h] * gelu_prime(pre[h]);
                eg.b1[h] += dpre;
                let w1_row = layer.experts[e].w1.row(h);
                let g1_row = eg.w1.row_mut(h);
                let tg = grads.tokens.row_mut(t);
                for d in 0..dim {
                    g1_row[d] += dpre * x[d];
                    tg[d] += dpre * w1_row[d];
                }
            }
        }
        // dL/d(raw probability) for the selected experts.
        let mut dprob = vec![0.0; e_count];
        if layer.renormalize {
            let s: f64 = sel.iter().map(|&e| routing.probs.at(t, e)).sum();
            let inner: f64 = sel
                .iter()
                .enumerate()
                .map(|(rank, &e)| dweight[rank] * routing.probs.at(t, e))
                .sum();
            for (rank, &e) in sel.iter().enumerate() {
                dprob[e] = dweight[rank] / s - inner / (s * s);
            }
        } else {
            for (rank, &e) in sel.iter().enumerate() {
                dprob[e] = dweight[rank];
            }
        }
        // Softmax backward: dlogit_j = p_j (dprob_j - sum_i dprob_i p_i).
        let mut dot = 0.0;
        for e in 0..e_count {
            dot += dprob[e] * routing.probs.at(t, e);
        }
        for e in 0..e_count {
            let dlogit = routing.probs.at(t, e) * (dprob[e] - dot);
            if dlogit == 0.0 {
                continue;
            }
            let gr = grads.router_w.row_mut(e);
            for d in 0..dim {
                gr[d] += dlogit * x[d];
            }
            let wr = layer.router.w.row(e);
            let tg = grads.tokens.row_mut(t);
            for d in 0..dim {
                tg[d] += dlogit * wr[d];
            }
        }
    }
    Ok(grads)
}

/// Router gradient of the load-balancing loss with the dispatch fractions F
/// treated as constants (they are piecewise constant in the parameters);
/// gradient flows through the mean probabilities G only. Returns the loss and
/// d(loss)/d(router W).
pub fn load_balance_router_grad(
    layer: &MoeLayer,
    tokens: &Matrix,
    routing: &RouterOutput,
    stats: &DispatchStats,
) -> (f64, Matrix) {
    let e_count = layer.num_experts();
    let t_count = tokens.rows();
    let loss = load_balance_loss(stats);
    // dL/dprob[t][i] = E * f_i / T.
    let coef: Vec<f64> = stats
        .f
        .iter()
        .map(|fi| e_count as f64 * fi / t_count as f64)
        .collect();
    let mut grad = Matrix::zeros(e_count, layer.dim());
    for t in 0..t_count {
        let x = tokens.row(t);
        let mut dot = 0.0;
        for e in 0..e_count {
            dot += coef[e] * routing.probs.at(t, e);
        }
        for e in 0..e_count {
            let dlogit = routing.probs.at(t, e) * (coef[e] - dot);
            let gr = grad.row_mut(e);
            for d in 0..layer.dim() {
                gr[d] += dlogit * x[d];
            }
        }
    }
    (loss, grad)
}
