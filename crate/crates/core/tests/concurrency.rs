//! Compile-time checks of the concurrency contracts: immutable-after-
//! construction types are shareable across threads, and a shared read-only
//! layer really can serve concurrent forward passes.

use geomoe::depthprior::{ConfidenceMask, DepthMap};
use geomoe::eval::MetricReport;
use geomoe::linalg::{KdTree3, Mat3, Rotation, Sim3, Vec3};
use geomoe::losses::{FeatureGrid, NormalMap, PointMap};
use geomoe::moe::{moe_forward, MoeLayer};
use geomoe::numeric::Matrix;
use geomoe::stability::LossClipper;
use geomoe::synth::{CameraParams, Scene};

fn assert_send_sync<T: Send + Sync>() {}

#[test]
fn shared_types_are_send_sync() {
    assert_send_sync::<Vec3>();
    assert_send_sync::<Mat3>();
    assert_send_sync::<Rotation>();
    assert_send_sync::<Sim3>();
    assert_send_sync::<KdTree3>();
    assert_send_sync::<Matrix>();
    assert_send_sync::<DepthMap>();
    assert_send_sync::<ConfidenceMask>();
    assert_send_sync::<PointMap>();
    assert_send_sync::<NormalMap>();
    assert_send_sync::<FeatureGrid>();
    assert_send_sync::<MoeLayer>();
    assert_send_sync::<MetricReport>();
    assert_send_sync::<Scene>();
    assert_send_sync::<CameraParams>();
    // Single-writer, but still movable between threads.
    assert_send_sync::<LossClipper>();
}

#[test]
fn layer_shared_across_threads_gives_identical_outputs() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    let mut layer = MoeLayer::seeded(6, 8, 4, 2, &mut rng).unwrap();
    for v in layer.router.w.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let mut tokens = Matrix::zeros(16, 6);
    for v in tokens.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let layer = std::sync::Arc::new(layer);
    let tokens = std::sync::Arc::new(tokens);
    let reference = moe_forward(&layer, &tokens).unwrap().outputs;
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let layer = layer.clone();
            let tokens = tokens.clone();
            std::thread::spawn(move || moe_forward(&layer, &tokens).unwrap().outputs)
        })
        .collect();
    for h in handles {
        let out = h.join().unwrap();
        assert_eq!(out.data(), reference.data());
    }
}
