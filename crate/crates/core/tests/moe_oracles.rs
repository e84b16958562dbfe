//! Oracle tests for the MoE layer: a direct exp/normalize softmax oracle, a
//! dense all-experts evaluation with top-k masking, a from-scratch
//! load-balance recomputation, and finite-difference gradient checks.

use geomoe::moe::{
    dispatch_stats, load_balance_loss, load_balance_router_grad, moe_backward, moe_forward,
    route, MoeLayer,
};
use geomoe::numeric::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng, span: f64) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.random_range(-span..span);
    }
    m
}

fn random_layer(
    dim: usize,
    hidden: usize,
    experts: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> MoeLayer {
    let mut layer = MoeLayer::seeded(dim, hidden, experts, k, rng).unwrap();
    for v in layer.router.w.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    layer
}

/// Straightforward softmax: exp then normalize, no max subtraction.
fn softmax_oracle(logits: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|e| e / s).collect()
}

#[test]
fn route_matches_direct_softmax_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let layer = random_layer(6, 4, 5, 2, &mut rng);
    let tokens = random_matrix(64, 6, &mut rng, 1.5);
    let routing = route(&layer, &tokens).unwrap();
    for t in 0..64 {
        let x = tokens.row(t);
        let logits: Vec<f64> = (0..5)
            .map(|e| {
                layer
                    .router
                    .w
                    .row(e)
                    .iter()
                    .zip(x.iter())
                    .map(|(w, xv)| w * xv)
                    .sum()
            })
            .collect();
        let oracle = softmax_oracle(&logits);
        for e in 0..5 {
            assert!(
                (routing.probs.at(t, e) - oracle[e]).abs() < 1e-12,
                "token {t} expert {e}"
            );
        }
    }
}

#[test]
fn forward_matches_dense_masked_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let layer = random_layer(5, 7, 4, 2, &mut rng);
    let tokens = random_matrix(16, 5, &mut rng, 1.0);
    let fwd = moe_forward(&layer, &tokens).unwrap();
    // Dense oracle: evaluate every expert for every token, zero out the
    // non-top-k terms, and sum with raw probabilities.
    for t in 0..16 {
        let x = tokens.row(t);
        let sel = &fwd.routing.topk_indices[t];
        let mut expect = [0.0; 5];
        for e in 0..4 {
            if !sel.contains(&e) {
                continue;
            }
            let p = fwd.routing.probs.at(t, e);
            let mut out = vec![0.0; 5];
            layer.experts[e].forward(x, &mut out);
            for d in 0..5 {
                expect[d] += p * out[d];
            }
        }
        for d in 0..5 {
            assert!(
                (fwd.outputs.at(t, d) - expect[d]).abs() < 1e-12,
                "token {t} dim {d}"
            );
        }
    }
}

#[test]
fn forward_with_full_k_equals_dense_mixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let layer = random_layer(4, 6, 3, 3, &mut rng);
    let tokens = random_matrix(8, 4, &mut rng, 1.0);
    let fwd = moe_forward(&layer, &tokens).unwrap();
    for t in 0..8 {
        let x = tokens.row(t);
        let mut expect = [0.0; 4];
        for e in 0..3 {
            let p = fwd.routing.probs.at(t, e);
            let mut out = vec![0.0; 4];
            layer.experts[e].forward(x, &mut out);
            for d in 0..4 {
                expect[d] += p * out[d];
            }
        }
        for d in 0..4 {
            assert!((fwd.outputs.at(t, d) - expect[d]).abs() < 1e-12);
        }
    }
}

#[test]
fn load_balance_matches_brute_force_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let layer = random_layer(5, 6, 4, 2, &mut rng);
    let tokens = random_matrix(48, 5, &mut rng, 1.2);
    let fwd = moe_forward(&layer, &tokens).unwrap();
    let loss = load_balance_loss(&fwd.stats);

    // From scratch: recompute f as assignment counts over T*k and g as mean
    // probabilities, then E * sum f_i g_i.
    let routing = route(&layer, &tokens).unwrap();
    let e_count = 4;
    let t_count = 48;
    let k = 2;
    let mut counts = vec![0usize; e_count];
    for sel in &routing.topk_indices {
        for &e in sel {
            counts[e] += 1;
        }
    }
    let mut expect = 0.0;
    for e in 0..e_count {
        let f = counts[e] as f64 / (t_count * k) as f64;
        let mut g = 0.0;
        for t in 0..t_count {
            g += routing.probs.at(t, e);
        }
        g /= t_count as f64;
        expect += f * g;
    }
    expect *= e_count as f64;
    assert!((loss - expect).abs() < 1e-12);
}

/// Scalar probe L = sum_t sum_d upstream[t][d] * outputs[t][d]; its gradient
/// with respect to any parameter is exactly what moe_backward reports for
/// that upstream.
fn probe_loss(layer: &MoeLayer, tokens: &Matrix, upstream: &Matrix) -> f64 {
    let fwd = moe_forward(layer, tokens).unwrap();
    let mut acc = 0.0;
    for t in 0..tokens.rows() {
        for d in 0..layer.dim() {
            acc += upstream.at(t, d) * fwd.outputs.at(t, d);
        }
    }
    acc
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Smallest gap between the k-th and (k+1)-th routing probability over the
/// batch; finite differencing is only meaningful away from selection ties.
fn selection_margin(layer: &MoeLayer, tokens: &Matrix) -> f64 {
    let routing = route(layer, tokens).unwrap();
    let mut margin = f64::INFINITY;
    for t in 0..tokens.rows() {
        let mut probs: Vec<f64> = (0..layer.num_experts())
            .map(|e| routing.probs.at(t, e))
            .collect();
        probs.sort_by(|a, b| b.total_cmp(a));
        if layer.k < probs.len() {
            margin = margin.min(probs[layer.k - 1] - probs[layer.k]);
        }
    }
    margin
}

#[test]
fn backward_matches_finite_differences() {
    const H: f64 = 1e-5;
    let mut checked_instances = 0;
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let mut layer = random_layer(6, 8, 3, 2, &mut rng);
        let tokens = random_matrix(5, 6, &mut rng, 1.0);
        let upstream = random_matrix(5, 6, &mut rng, 1.0);
        if selection_margin(&layer, &tokens) < 1e-3 {
            continue;
        }
        checked_instances += 1;
        let grads = moe_backward(&layer, &tokens, &upstream).unwrap();

        // Router weights.
        for i in 0..layer.router.w.data().len() {
            let orig = layer.router.w.data()[i];
            layer.router.w.data_mut()[i] = orig + H;
            let fp = probe_loss(&layer, &tokens, &upstream);
            layer.router.w.data_mut()[i] = orig - H;
            let fm = probe_loss(&layer, &tokens, &upstream);
            layer.router.w.data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * H);
            assert!(
                rel_err(grads.router_w.data()[i], fd) < 1e-4,
                "router[{i}] analytic {} vs fd {fd}",
                grads.router_w.data()[i]
            );
        }

        // Expert parameters, all four groups of every expert.
        for e in 0..3 {
            for group in 0..4 {
                let len = match group {
                    0 => layer.experts[e].w1.data().len(),
                    1 => layer.experts[e].b1.len(),
                    2 => layer.experts[e].w2.data().len(),
                    _ => layer.experts[e].b2.len(),
                };
                for i in 0..len {
                    let read = |l: &MoeLayer| match group {
                        0 => l.experts[e].w1.data()[i],
                        1 => l.experts[e].b1[i],
                        2 => l.experts[e].w2.data()[i],
                        _ => l.experts[e].b2[i],
                    };
                    let write = |l: &mut MoeLayer, v: f64| match group {
                        0 => l.experts[e].w1.data_mut()[i] = v,
                        1 => l.experts[e].b1[i] = v,
                        2 => l.experts[e].w2.data_mut()[i] = v,
                        _ => l.experts[e].b2[i] = v,
                    };
                    let orig = read(&layer);
                    write(&mut layer, orig + H);
                    let fp = probe_loss(&layer, &tokens, &upstream);
                    write(&mut layer, orig - H);
                    let fm = probe_loss(&layer, &tokens, &upstream);
                    write(&mut layer, orig);
                    let fd = (fp - fm) / (2.0 * H);
                    let analytic = match group {
                        0 => grads.experts[e].w1.data()[i],
                        1 => grads.experts[e].b1[i],
                        2 => grads.experts[e].w2.data()[i],
                        _ => grads.experts[e].b2[i],
                    };
                    assert!(
                        rel_err(analytic, fd) < 1e-4,
                        "expert {e} group {group} [{i}]: analytic {analytic} vs fd {fd}"
                    );
                }
            }
        }

        // Token inputs.
        let mut tokens_mut = tokens.clone();
        for i in 0..tokens_mut.data().len() {
            let orig = tokens_mut.data()[i];
            tokens_mut.data_mut()[i] = orig + H;
            let fp = probe_loss(&layer, &tokens_mut, &upstream);
            tokens_mut.data_mut()[i] = orig - H;
            let fm = probe_loss(&layer, &tokens_mut, &upstream);
            tokens_mut.data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * H);
            assert!(
                rel_err(grads.tokens.data()[i], fd) < 1e-4,
                "tokens[{i}]: analytic {} vs fd {fd}",
                grads.tokens.data()[i]
            );
        }
    }
    assert!(checked_instances >= 4, "too many instances near ties");
}

#[test]
fn renormalized_backward_matches_finite_differences() {
    const H: f64 = 1e-5;
    let (mut layer, tokens, upstream) = (2100u64..2160)
        .find_map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut layer = random_layer(4, 6, 4, 2, &mut rng);
            layer.renormalize = true;
            let tokens = random_matrix(4, 4, &mut rng, 1.0);
            let upstream = random_matrix(4, 4, &mut rng, 1.0);
            (selection_margin(&layer, &tokens) > 1e-2).then_some((layer, tokens, upstream))
        })
        .expect("a tie-free instance exists in the seed range");
    let grads = moe_backward(&layer, &tokens, &upstream).unwrap();
    for i in 0..layer.router.w.data().len() {
        let orig = layer.router.w.data()[i];
        layer.router.w.data_mut()[i] = orig + H;
        let fp = probe_loss(&layer, &tokens, &upstream);
        layer.router.w.data_mut()[i] = orig - H;
        let fm = probe_loss(&layer, &tokens, &upstream);
        layer.router.w.data_mut()[i] = orig;
        let fd = (fp - fm) / (2.0 * H);
        assert!(
            rel_err(grads.router_w.data()[i], fd) < 1e-4,
            "router[{i}] analytic {} vs fd {fd}",
            grads.router_w.data()[i]
        );
    }
}

#[test]
fn load_balance_gradient_matches_finite_differences() {
    const H: f64 = 1e-5;
    // Scan for an instance comfortably away from selection ties; finite
    // differences are meaningless across an argmax flip.
    let (mut layer, tokens) = (2200u64..2260)
        .find_map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layer = random_layer(5, 6, 4, 1, &mut rng);
            let tokens = random_matrix(12, 5, &mut rng, 1.0);
            (selection_margin(&layer, &tokens) > 1e-2).then_some((layer, tokens))
        })
        .expect("a tie-free instance exists in the seed range");

    let lb = |l: &MoeLayer| {
        let routing = route(l, &tokens).unwrap();
        let stats = dispatch_stats(&routing, l.num_experts(), l.k);
        load_balance_loss(&stats)
    };

    let routing = route(&layer, &tokens).unwrap();
    let stats = dispatch_stats(&routing, layer.num_experts(), layer.k);
    let (loss, grad) = load_balance_router_grad(&layer, &tokens, &routing, &stats);
    assert!((loss - lb(&layer)).abs() < 1e-12);

    for i in 0..layer.router.w.data().len() {
        let orig = layer.router.w.data()[i];
        layer.router.w.data_mut()[i] = orig + H;
        let fp = lb(&layer);
        layer.router.w.data_mut()[i] = orig - H;
        let fm = lb(&layer);
        layer.router.w.data_mut()[i] = orig;
        let fd = (fp - fm) / (2.0 * H);
        assert!(
            rel_err(grad.data()[i], fd) < 1e-4,
            "lb router[{i}]: analytic {} vs fd {fd}",
            grad.data()[i]
        );
    }
}

#[test]
fn bit_identical_outputs_for_identical_seeds() {
    let make = || {
        let mut rng = ChaCha8Rng::seed_from_u64(555);
        let layer = random_layer(6, 8, 4, 2, &mut rng);
        let tokens = random_matrix(10, 6, &mut rng, 1.0);
        let fwd = moe_forward(&layer, &tokens).unwrap();
        (fwd.outputs, fwd.stats.f, fwd.stats.g)
    };
    let (o1, f1, g1) = make();
    let (o2, f2, g2) = make();
    assert_eq!(o1.data(), o2.data());
    assert_eq!(f1, f2);
    assert_eq!(g1, g2);
}
