use feathernet_core::arch::{ArchSpec, HeadKind, Variant};
use feathernet_core::blocks::{BlockConfig, BlockKind, InvertedResidual, SeModule};
use feathernet_core::layers::{Parameterized, TensorKind};
use feathernet_core::model::{build_feathernet, Model};
use feathernet_core::train::he_initialize;
use feathernet_core::weights::{decode, encode};
use feathernet_core::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal_batch(n: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(Shape::new(n, 3, 224, 224), |_| StandardNormal.sample(&mut rng))
}

#[test]
fn variant_b_shapes() {
    let m = build_feathernet::<f32>(Variant::B, HeadKind::Linear2, 0).unwrap();
    let x = normal_batch(2, 1);
    let fv = m.embed(&x).unwrap();
    assert_eq!(fv.shape(), Shape::matrix(2, 1024));
    let report = m.cost_report(224).unwrap();
    let last_block = report.layers.iter().rev().find(|l| l.name.starts_with("stage7")).unwrap();
    assert_eq!(last_block.output, (64, 7, 7));
    let logits = m.forward(&x).unwrap();
    assert_eq!(logits.shape(), Shape::matrix(2, 2));
    assert!(logits.all_finite());
}

#[test]
fn embedding_head_outputs_the_feature_vector() {
    let m = build_feathernet::<f32>(Variant::B, HeadKind::None, 0).unwrap();
    assert_eq!(m.forward(&normal_batch(1, 2)).unwrap().shape(), Shape::matrix(1, 1024));
}

#[test]
fn same_seed_same_model_and_duplicate_rows_agree() {
    let a = build_feathernet::<f32>(Variant::A, HeadKind::Linear2, 9).unwrap();
    let b = build_feathernet::<f32>(Variant::A, HeadKind::Linear2, 9).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, build_feathernet::<f32>(Variant::A, HeadKind::Linear2, 10).unwrap());
    let one = normal_batch(1, 3);
    let mut two = one.data().to_vec();
    two.extend_from_slice(one.data());
    let y = a.forward(&Tensor::new(Shape::new(2, 3, 224, 224), two).unwrap()).unwrap();
    assert_eq!(y.sample(0), y.sample(1));
}

#[test]
fn wrong_input_rejected_with_expected_shape() {
    let m = build_feathernet::<f32>(Variant::B, HeadKind::Linear2, 0).unwrap();
    let err = m.forward(&Tensor::zeros(Shape::new(1, 3, 112, 112))).unwrap_err().to_string();
    assert!(err.contains("Nx3x224x224") && err.contains("1x3x112x112"), "{err}");
    assert!(m.cost_report(112).is_err());
}

#[test]
fn forward_is_invariant_under_save_and_load() {
    let m = build_feathernet::<f32>(Variant::B, HeadKind::GapLinear2, 4).unwrap();
    let bytes = encode(&m);
    let back: Model<f32> = decode(&bytes).unwrap();
    assert_eq!(encode(&back), bytes);
    let x = normal_batch(1, 5);
    assert_eq!(m.forward(&x).unwrap(), back.forward(&x).unwrap());
}

#[test]
fn costs_near_target_budget() {
    for (variant, madds) in [(Variant::B, 83_050_000.0), (Variant::A, 79_990_000.0)] {
        let m = Model::<f32>::new(ArchSpec::feathernet(variant, HeadKind::Linear2)).unwrap();
        let r = m.cost_report(224).unwrap();
        assert!((r.params as f64 / 350_000.0 - 1.0).abs() <= 0.10, "{variant:?} params {}", r.params);
        assert!((r.madds as f64 / madds - 1.0).abs() <= 0.10, "{variant:?} madds {}", r.madds);
        let stem = &r.layers[0];
        assert_eq!((stem.name.as_str(), stem.madds), ("stem.conv", 10_838_016));
    }
    let a = Model::<f32>::new(ArchSpec::feathernet(Variant::A, HeadKind::Linear2)).unwrap();
    let b = Model::<f32>::new(ArchSpec::feathernet(Variant::B, HeadKind::Linear2)).unwrap();
    assert!(a.count_params() <= b.count_params());
}

#[test]
fn head_ablations_differ_only_in_head_layers() {
    let names = |h| {
        let m = Model::<f32>::new(ArchSpec::feathernet(Variant::B, h)).unwrap();
        let mut v = Vec::new();
        m.visit("", &mut |n, _, t| v.push((n.to_string(), t.shape())));
        v
    };
    let lin = names(HeadKind::Linear2);
    let gap = names(HeadKind::GapLinear2);
    let none = names(HeadKind::None);
    let body = |v: &[(String, Shape)]| v.iter().filter(|(n, _)| !n.starts_with("head.")).cloned().collect::<Vec<_>>();
    assert_eq!(body(&lin), body(&gap));
    assert_eq!(body(&lin), none);
    assert_eq!(lin.len() - none.len(), 2);
    let head_w = |v: &[(String, Shape)]| v.iter().find(|(n, _)| n == "head.linear.weight").unwrap().1;
    assert_eq!(head_w(&lin), Shape::matrix(1024, 2));
    assert_eq!(head_w(&gap), Shape::matrix(64, 2));
}

#[test]
fn adding_a_layer_never_lowers_the_count() {
    let spec = ArchSpec::feathernet(Variant::B, HeadKind::Linear2);
    let base = Model::<f32>::new(spec.clone()).unwrap().count_params();
    let mut deeper = spec;
    deeper.rows[5].repeat += 1;
    assert!(Model::<f32>::new(deeper).unwrap().count_params() > base);
}

#[test]
fn he_variance_matches_fan_in() {
    let mut block = InvertedResidual::<f32>::new(BlockConfig::new(BlockKind::A, 48, 32, 6)).unwrap();
    he_initialize(&mut block, 11);
    // 288 output channels over 32 inputs with a 3x3 kernel
    let mut conv = feathernet_core::layers::Conv::<f32>::new(32, 288, feathernet_core::ops::ConvGeometry::new(3, 1, 1), false);
    he_initialize(&mut conv, 12);
    let w = conv.weight.data();
    let fan_in = 32.0 * 9.0;
    let mean = w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64;
    let var = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / w.len() as f64;
    assert!((var / (2.0 / fan_in) - 1.0).abs() < 0.10, "variance {var}");
    block.visit("", &mut |name, kind, t| match kind {
        TensorKind::BnScale | TensorKind::RunningVar => assert!(t.data().iter().all(|&v| v == 1.0), "{name}"),
        TensorKind::BnShift | TensorKind::RunningMean | TensorKind::Bias => assert!(t.data().iter().all(|&v| v == 0.0), "{name}"),
        _ => {}
    });
}

#[test]
fn block_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // 5 x BlockA stage
    let a = InvertedResidual::<f32>::new(BlockConfig::new(BlockKind::A, 48, 48, 6)).unwrap();
    assert_eq!(a.config().expanded(), 288);

    // zeroed main path with a skip is the identity
    let mut a = InvertedResidual::<f32>::new(BlockConfig::new(BlockKind::A, 4, 4, 2)).unwrap();
    he_initialize(&mut a, 1);
    a.project.conv.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
    let x = Tensor::<f32>::from_fn(Shape::new(2, 4, 5, 5), |_| rng.random_range(-1.0..1.0));
    assert_eq!(a.forward(&x).unwrap(), x);

    // second table row and fourth stage transition
    let b = InvertedResidual::<f32>::new(BlockConfig::new(BlockKind::B, 32, 16, 1)).unwrap();
    assert!(b.expand.is_none());
    let y = b.forward(&Tensor::zeros(Shape::new(1, 32, 112, 112))).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 16, 56, 56));
    let c = InvertedResidual::<f32>::new(BlockConfig::new(BlockKind::C, 32, 48, 6)).unwrap();
    assert_eq!(c.forward(&Tensor::zeros(Shape::new(1, 32, 28, 28))).unwrap().shape(), Shape::new(1, 48, 14, 14));

    // zero both final convs of a BlockB: zero output
    let mut b = InvertedResidual::<f32>::new(BlockConfig::new(BlockKind::B, 4, 6, 2)).unwrap();
    he_initialize(&mut b, 2);
    b.project.conv.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
    b.pool_branch_mut().unwrap().conv.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
    let x = Tensor::<f32>::from_fn(Shape::new(1, 4, 8, 8), |_| rng.random_range(-1.0..1.0));
    let y = b.forward(&x).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 6, 4, 4));
    assert!(y.data().iter().all(|&v| v == 0.0));

    // odd extents cannot feed the pooling branch
    assert!(b.forward(&Tensor::zeros(Shape::new(1, 4, 7, 7))).is_err());
}

#[test]
fn se_examples() {
    let mut se = SeModule::<f32>::new(64, 8).unwrap();
    assert_eq!(se.bottleneck(), 8);
    he_initialize(&mut se, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::<f32>::from_fn(Shape::new(2, 64, 3, 3), |_| rng.random_range(-5.0..5.0));
    let g = se.gates(&x).unwrap();
    assert!(g.data().iter().all(|&v| v > 0.0 && v < 1.0));
    se.excite.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
    assert_eq!(se.forward(&x).unwrap(), x.map(|v| v * 0.5));
    assert!(SeModule::<f32>::new(60, 8).is_err());
}
