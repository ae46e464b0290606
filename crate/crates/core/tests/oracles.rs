//! Fast paths checked against slow, independently written references.

use feathernet_core::arch::{ArchSpec, HeadKind, Variant};
use feathernet_core::blocks::{BlockConfig, BlockKind, InvertedResidual, StreamingConfig, StreamingModule};
use feathernet_core::layers::Parameterized;
use feathernet_core::model::Model;
use feathernet_core::reference::cost_oracle;
use feathernet_core::ops::{conv2d, conv2d_naive, depthwise_conv2d, flatten, ConvGeometry};
use feathernet_core::train::he_initialize;
use feathernet_core::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn max_rel(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let scale = b.data().iter().fold(1e-6f64, |m, v| m.max(v.abs() as f64));
    a.max_abs_diff(b) / scale
}

#[test]
fn fast_conv_matches_nested_loops_on_50_geometries() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let groups = [1, 1, 2, 3][rng.random_range(0..4)];
        let cin = groups * rng.random_range(1..=4);
        let cout = groups * rng.random_range(1..=4);
        let k: usize = rng.random_range(1..=5);
        let stride = rng.random_range(1..=3);
        let pad: usize = rng.random_range(0..=2);
        let h = rng.random_range(k.saturating_sub(2 * pad).max(1)..=12);
        let w = rng.random_range(k.saturating_sub(2 * pad).max(1)..=12);
        let n = rng.random_range(1..=3);
        let geom = ConvGeometry::new(k, stride, pad).with_groups(groups);
        let x = random(&mut rng, Shape::new(n, cin, h, w));
        let wt = random(&mut rng, Shape::new(cout, cin / groups, k, k));
        let bias: Vec<f32> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = conv2d(&x, &wt, Some(&bias), &geom).unwrap();
        let slow = conv2d_naive(&x, &wt, Some(&bias), &geom).unwrap();
        assert_eq!(fast.shape(), slow.shape());
        worst = worst.max(max_rel(&fast, &slow));
    }
    assert!(worst < 1e-6, "worst relative difference {worst:e}");
}

#[test]
fn depthwise_kernel_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..20 {
        let c = rng.random_range(1..=6);
        let stride = rng.random_range(1..=2);
        let (h, w) = (rng.random_range(3..=9), rng.random_range(3..=9));
        let geom = ConvGeometry::new(3, stride, 1).with_groups(c);
        let x = random(&mut rng, Shape::new(2, c, h, w));
        let wt = random(&mut rng, Shape::new(c, 1, 3, 3));
        let dw = depthwise_conv2d(&x, &wt, &geom).unwrap();
        let slow = conv2d_naive(&x, &wt, None, &geom).unwrap();
        assert!(max_rel(&dw, &slow) < 1e-6);
    }
}

#[test]
fn streaming_equals_depthwise_then_flatten_in_stream_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    for _ in 0..20 {
        let c = rng.random_range(1..=5);
        let (h, w) = (rng.random_range(2..=9), rng.random_range(2..=9));
        let cfg = StreamingConfig::new((c, h, w), 3, 2, 1).unwrap();
        let mut sm = StreamingModule::<f32>::new(cfg);
        he_initialize(&mut sm, rng.random());
        let x = random(&mut rng, Shape::new(2, c, h, w));
        let fv = sm.forward(&x).unwrap();
        let fm = conv2d_naive(&x, &sm.conv.weight, None, &ConvGeometry::new(3, 2, 1).with_groups(c)).unwrap();
        let (_, ho, wo) = cfg.output;
        assert_eq!(fv.shape(), Shape::matrix(2, c * ho * wo));
        for n in 0..2 {
            for m in 0..c {
                for y in 0..ho {
                    for xx in 0..wo {
                        let idx = cfg.index(y, xx, m).unwrap();
                        assert_eq!(idx, m * ho * wo + y * wo + xx);
                        let a = fv.sample(n)[idx];
                        let b = fm.at(n, m, y, xx);
                        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
                    }
                }
            }
        }
        // flatten of the layer's own depthwise output is exactly the same vector
        assert_eq!(flatten(sm.conv.forward(&x).unwrap()).data(), fv.data());
    }
}

#[test]
fn feathernet_streaming_vector_is_1024() {
    let cfg = StreamingConfig::feathernet((64, 7, 7)).unwrap();
    assert_eq!(cfg.output, (64, 4, 4));
    assert_eq!(cfg.vector_len(), 1024);
}

#[test]
fn counters_match_table_walking_oracle_exactly() {
    for variant in [Variant::A, Variant::B] {
        for head in [HeadKind::Linear2, HeadKind::None, HeadKind::GapLinear2] {
            let spec = ArchSpec::feathernet(variant, head);
            let m = Model::<f32>::new(spec.clone()).unwrap();
            let report = m.cost_report(224).unwrap();
            let (p, ma) = cost_oracle(&spec);
            assert_eq!(report.params, p, "{variant:?} {head:?} params");
            assert_eq!(report.madds, ma, "{variant:?} {head:?} madds");
            assert_eq!(m.count_params(), p);
            assert_eq!(report.layers.iter().map(|l| l.params).sum::<u64>(), p);
        }
    }
    let b = cost_oracle(&ArchSpec::feathernet(Variant::B, HeadKind::Linear2));
    let a = cost_oracle(&ArchSpec::feathernet(Variant::A, HeadKind::Linear2));
    assert_eq!(b, (353_334, 80_202_272));
    assert_eq!(a, (347_382, 77_743_648));
}

#[test]
fn block_c_equals_block_b_without_pool_branch_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let mut b = InvertedResidual::<f32>::new(BlockConfig::new(BlockKind::B, 4, 6, 2)).unwrap();
    he_initialize(&mut b, 3);
    let x = random(&mut rng, Shape::new(2, 4, 8, 8));
    let c = b.without_pool_branch();
    let pool = b.pool_branch_mut().unwrap();
    pool.conv.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
    // zero pool conv and identity BN leave a zero branch
    assert_eq!(b.forward(&x).unwrap(), c.forward(&x).unwrap());
    assert!(c.param_count() < b.param_count());
}
