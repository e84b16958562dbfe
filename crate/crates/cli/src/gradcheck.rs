//! Finite-difference verification of every analytic gradient in the library:
//! the MoE backward pass (router, all expert parameter groups, token inputs),
//! the load-balance router gradient, the local point loss gradient, and the
//! predicted normal loss gradient. Central differences with step 1e-5 in
//! 64-bit; a comparison passes when the worst per-parameter relative error
//! stays under 1e-4.

use geomoe::linalg::Vec3;
use geomoe::losses::{
    local_point_loss, local_point_loss_grad, predicted_normal_loss, predicted_normal_loss_grad,
    solve_optimal_scale_detailed, NormalMap, PointMap,
};
use geomoe::moe::{
    dispatch_stats, load_balance_loss, load_balance_router_grad, moe_backward, moe_forward,
    route, MoeLayer,
};
use geomoe::numeric::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub seed: u64,
    pub parameters: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

impl GradCheck {
    fn new(name: String, seed: u64, parameters: usize, max_rel_err: f64) -> GradCheck {
        GradCheck {
            name,
            seed,
            parameters,
            pass: max_rel_err < REL_TOL,
            max_rel_err,
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng, span: f64) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.random_range(-span..span);
    }
    m
}

fn selection_margin(layer: &MoeLayer, tokens: &Matrix) -> f64 {
    let routing = route(layer, tokens).expect("matching shapes");
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

/// Draws an instance whose top-k selection has a comfortable probability
/// margin; finite differences across an argmax flip are meaningless.
fn tie_free_instance(base_seed: u64) -> (MoeLayer, Matrix, Matrix, u64) {
    for offset in 0..64 {
        let seed = base_seed.wrapping_add(offset * 7919);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = MoeLayer::seeded(6, 8, 3, 2, &mut rng).expect("valid shape");
        for v in layer.router.w.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let tokens = random_matrix(5, 6, &mut rng, 1.0);
        let upstream = random_matrix(5, 6, &mut rng, 1.0);
        if selection_margin(&layer, &tokens) > 1e-2 {
            return (layer, tokens, upstream, seed);
        }
    }
    panic!("no tie-free MoE instance found near seed {base_seed}");
}

fn probe_loss(layer: &MoeLayer, tokens: &Matrix, upstream: &Matrix) -> f64 {
    let fwd = moe_forward(layer, tokens).expect("matching shapes");
    let mut acc = 0.0;
    for t in 0..tokens.rows() {
        for d in 0..layer.dim() {
            acc += upstream.at(t, d) * fwd.outputs.at(t, d);
        }
    }
    acc
}

/// All parameter groups of the MoE backward pass for one instance.
fn check_moe_backward(base_seed: u64, out: &mut Vec<GradCheck>) {
    let (mut layer, tokens, upstream, seed) = tie_free_instance(base_seed);
    let grads = moe_backward(&layer, &tokens, &upstream).expect("matching shapes");

    let mut router_err: f64 = 0.0;
    for i in 0..layer.router.w.data().len() {
        let orig = layer.router.w.data()[i];
        layer.router.w.data_mut()[i] = orig + FD_STEP;
        let fp = probe_loss(&layer, &tokens, &upstream);
        layer.router.w.data_mut()[i] = orig - FD_STEP;
        let fm = probe_loss(&layer, &tokens, &upstream);
        layer.router.w.data_mut()[i] = orig;
        router_err = router_err.max(rel_err(grads.router_w.data()[i], (fp - fm) / (2.0 * FD_STEP)));
    }
    out.push(GradCheck::new(
        "moe_backward/router_w".to_string(),
        seed,
        layer.router.w.data().len(),
        router_err,
    ));

    for group in ["w1", "b1", "w2", "b2"] {
        let mut err: f64 = 0.0;
        let mut params = 0;
        for e in 0..layer.num_experts() {
            let len = match group {
                "w1" => layer.experts[e].w1.data().len(),
                "b1" => layer.experts[e].b1.len(),
                "w2" => layer.experts[e].w2.data().len(),
                _ => layer.experts[e].b2.len(),
            };
            params += len;
            for i in 0..len {
                let read = |l: &MoeLayer| match group {
                    "w1" => l.experts[e].w1.data()[i],
                    "b1" => l.experts[e].b1[i],
                    "w2" => l.experts[e].w2.data()[i],
                    _ => l.experts[e].b2[i],
                };
                let write = |l: &mut MoeLayer, v: f64| match group {
                    "w1" => l.experts[e].w1.data_mut()[i] = v,
                    "b1" => l.experts[e].b1[i] = v,
                    "w2" => l.experts[e].w2.data_mut()[i] = v,
                    _ => l.experts[e].b2[i] = v,
                };
                let orig = read(&layer);
                write(&mut layer, orig + FD_STEP);
                let fp = probe_loss(&layer, &tokens, &upstream);
                write(&mut layer, orig - FD_STEP);
                let fm = probe_loss(&layer, &tokens, &upstream);
                write(&mut layer, orig);
                let analytic = match group {
                    "w1" => grads.experts[e].w1.data()[i],
                    "b1" => grads.experts[e].b1[i],
                    "w2" => grads.experts[e].w2.data()[i],
                    _ => grads.experts[e].b2[i],
                };
                err = err.max(rel_err(analytic, (fp - fm) / (2.0 * FD_STEP)));
            }
        }
        out.push(GradCheck::new(
            format!("moe_backward/expert_{group}"),
            seed,
            params,
            err,
        ));
    }

    let mut tokens_mut = tokens.clone();
    let mut err: f64 = 0.0;
    for i in 0..tokens_mut.data().len() {
        let orig = tokens_mut.data()[i];
        tokens_mut.data_mut()[i] = orig + FD_STEP;
        let fp = probe_loss(&layer, &tokens_mut, &upstream);
        tokens_mut.data_mut()[i] = orig - FD_STEP;
        let fm = probe_loss(&layer, &tokens_mut, &upstream);
        tokens_mut.data_mut()[i] = orig;
        err = err.max(rel_err(grads.tokens.data()[i], (fp - fm) / (2.0 * FD_STEP)));
    }
    out.push(GradCheck::new(
        "moe_backward/tokens".to_string(),
        seed,
        tokens.data().len(),
        err,
    ));
}

fn check_load_balance(base_seed: u64, out: &mut Vec<GradCheck>) {
    let (mut layer, tokens, _, seed) = tie_free_instance(base_seed);
    let lb = |l: &MoeLayer| {
        let routing = route(l, &tokens).expect("matching shapes");
        let stats = dispatch_stats(&routing, l.num_experts(), l.k);
        load_balance_loss(&stats)
    };
    let routing = route(&layer, &tokens).expect("matching shapes");
    let stats = dispatch_stats(&routing, layer.num_experts(), layer.k);
    let (_, grad) = load_balance_router_grad(&layer, &tokens, &routing, &stats);
    let mut err: f64 = 0.0;
    for i in 0..layer.router.w.data().len() {
        let orig = layer.router.w.data()[i];
        layer.router.w.data_mut()[i] = orig + FD_STEP;
        let fp = lb(&layer);
        layer.router.w.data_mut()[i] = orig - FD_STEP;
        let fm = lb(&layer);
        layer.router.w.data_mut()[i] = orig;
        err = err.max(rel_err(grad.data()[i], (fp - fm) / (2.0 * FD_STEP)));
    }
    out.push(GradCheck::new(
        "load_balance/router_w".to_string(),
        seed,
        layer.router.w.data().len(),
        err,
    ));
}

fn random_pointmap(h: usize, w: usize, rng: &mut ChaCha8Rng) -> PointMap {
    let pts: Vec<Vec3> = (0..h * w)
        .map(|_| {
            Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..3.0),
            )
        })
        .collect();
    PointMap::from_points(h, w, pts).expect("finite points")
}

fn check_local_point_loss(seed: u64, out: &mut Vec<GradCheck>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = random_pointmap(3, 4, &mut rng);
    let scale = rng.random_range(0.5..2.0);
    let pred_pts: Vec<Vec3> = gt
        .points()
        .iter()
        .map(|p| {
            Vec3::new(
                p.x * scale + rng.random_range(-0.08..0.08),
                p.y * scale + rng.random_range(-0.08..0.08),
                p.z * scale + rng.random_range(-0.08..0.08),
            )
        })
        .collect();
    let pred = PointMap::from_points(3, 4, pred_pts).expect("finite points");
    let sol = solve_optimal_scale_detailed(std::slice::from_ref(&pred), std::slice::from_ref(&gt))
        .expect("valid instance");
    let (_, grads) = local_point_loss_grad(std::slice::from_ref(&pred), std::slice::from_ref(&gt)).expect("valid instance");

    let mut err: f64 = 0.0;
    let mut checked = 0usize;
    for pix in 0..12 {
        for c in 0..3 {
            let a = pred.points()[pix].component(c);
            let b = gt.points()[pix].component(c);
            let is_pivot =
                sol.pivot.frame == 0 && sol.pivot.pixel == pix && sol.pivot.coord == c;
            // Keep clear of |.| kinks for non-pivot coordinates.
            if !is_pivot && (sol.scale * a - b).abs() < 1e-3 {
                continue;
            }
            let probe = |delta: f64| -> Option<f64> {
                let mut moved = pred.points().to_vec();
                let mut v = moved[pix];
                v.set_component(c, v.component(c) + delta);
                moved[pix] = v;
                let pm = PointMap::new(3, 4, moved, pred.valid().to_vec()).ok()?;
                let s2 = solve_optimal_scale_detailed(std::slice::from_ref(&pm), std::slice::from_ref(&gt)).ok()?;
                (s2.pivot == sol.pivot).then(|| local_point_loss(&[pm], std::slice::from_ref(&gt)).unwrap())
            };
            let (fp, fm) = match (probe(FD_STEP), probe(-FD_STEP)) {
                (Some(fp), Some(fm)) => (fp, fm),
                _ => continue, // pivot hopped between breakpoints
            };
            let fd = (fp - fm) / (2.0 * FD_STEP);
            err = err.max(rel_err(grads[0][pix].component(c), fd));
            checked += 1;
        }
    }
    out.push(GradCheck::new(
        "local_point_loss/points".to_string(),
        seed,
        checked,
        err,
    ));
}

fn check_predicted_normal_loss(seed: u64, out: &mut Vec<GradCheck>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_unit = || loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() > 0.1 {
            break v.normalized().unwrap();
        }
    };
    let pred_n: Vec<Vec3> = (0..12).map(|_| rand_unit()).collect();
    let gt_n: Vec<Vec3> = (0..12).map(|_| rand_unit()).collect();
    let gt = NormalMap::new(3, 4, gt_n.clone(), vec![true; 12]).expect("unit normals");
    let pred =
        NormalMap::new_unnormalized(3, 4, pred_n.clone(), vec![true; 12]).expect("shape ok");
    let (_, grads) = predicted_normal_loss_grad(&pred, &gt).expect("matching shapes");

    let mut err: f64 = 0.0;
    let mut checked = 0usize;
    for pix in 0..12 {
        for c in 0..3 {
            // The L1 loss is nondifferentiable where components coincide.
            if (pred_n[pix].component(c) - gt_n[pix].component(c)).abs() < 1e-3 {
                continue;
            }
            let eval = |delta: f64| -> f64 {
                let mut moved = pred_n.clone();
                let mut v = moved[pix];
                v.set_component(c, v.component(c) + delta);
                moved[pix] = v;
                let pm = NormalMap::new_unnormalized(3, 4, moved, vec![true; 12]).unwrap();
                predicted_normal_loss(&pm, &gt).unwrap()
            };
            let fd = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            err = err.max(rel_err(grads[pix].component(c), fd));
            checked += 1;
        }
    }
    out.push(GradCheck::new(
        "predicted_normal_loss/normals".to_string(),
        seed,
        checked,
        err,
    ));
}

/// Runs the whole suite over `instances` seeded random instances.
/// Every instance contributes one comparison per gradient group.
pub fn run_gradient_suite(base_seed: u64, instances: usize) -> Vec<GradCheck> {
    let mut out = Vec::new();
    for i in 0..instances as u64 {
        let seed = base_seed.wrapping_add(i * 1_000_003);
        check_moe_backward(seed, &mut out);
        check_load_balance(seed.wrapping_add(17), &mut out);
        check_local_point_loss(seed.wrapping_add(29), &mut out);
        check_predicted_normal_loss(seed.wrapping_add(43), &mut out);
    }
    out
}
