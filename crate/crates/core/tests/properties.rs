use feathernet_core::augment::{augment_pixel, AugmentParams};
use feathernet_core::blocks::stream_index;
use feathernet_core::fusion::{cascade_decide, Branch, FusionConfig, ScoreRecord, Thresholds};
use feathernet_core::image::Label;
use feathernet_core::metrics::{error_rates, tpr_at_fpr, ScoredSet};
use feathernet_core::ops::{self, avg_pool2d, conv2d, depthwise_conv2d, output_extent, ConvGeometry};
use feathernet_core::train::{focal_loss, lr_at_epoch, TrainConfig};
use feathernet_core::{Shape, Tensor};
use proptest::prelude::*;

fn tensor(shape: Shape, seed: u64) -> Tensor<f64> {
    // cheap deterministic fill
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_and_pool_shape_rule(h in 1usize..20, w in 1usize..20, k in 1usize..5, s in 1usize..4, p in 0usize..3, c in 1usize..4) {
        let x = tensor(Shape::new(1, c, h, w), 1);
        let wt = tensor(Shape::new(2, c, k, k), 2);
        let geom = ConvGeometry::new(k, s, p);
        let expect = |e: usize| (e + 2 * p >= k).then(|| (e + 2 * p - k) / s + 1);
        match (expect(h), expect(w)) {
            (Some(oh), Some(ow)) => {
                let y = conv2d(&x, &wt, None, &geom).unwrap();
                prop_assert_eq!(y.shape(), Shape::new(1, 2, oh, ow));
                prop_assert_eq!(output_extent(h, k, s, p).unwrap(), oh);
            }
            _ => prop_assert!(conv2d(&x, &wt, None, &geom).is_err()),
        }
        if h >= k && w >= k {
            let y = avg_pool2d(&x, (k, k), (s, s)).unwrap();
            prop_assert_eq!(y.shape(), Shape::new(1, c, (h - k) / s + 1, (w - k) / s + 1));
        } else {
            prop_assert!(avg_pool2d(&x, (k, k), (s, s)).is_err());
        }
    }

    #[test]
    fn grouped_conv_equals_depthwise(c in 1usize..6, h in 3usize..10, w in 3usize..10, s in 1usize..3, seed in any::<u64>()) {
        let x = tensor(Shape::new(2, c, h, w), seed);
        let wt = tensor(Shape::new(c, 1, 3, 3), seed ^ 1);
        let geom = ConvGeometry::new(3, s, 1).with_groups(c);
        let a = conv2d(&x, &wt, None, &geom).unwrap();
        let b = depthwise_conv2d(&x, &wt, &geom).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn stream_index_is_a_bijection(h in 1usize..6, w in 1usize..6, c in 1usize..5) {
        let mut seen = vec![false; h * w * c];
        for m in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let n = stream_index(y, x, m, h, w, c).unwrap();
                    prop_assert!(!seen[n]);
                    seen[n] = true;
                }
            }
        }
        prop_assert!(seen.iter().all(|&b| b));
        prop_assert!(stream_index(h, 0, 0, h, w, c).is_err());
        prop_assert!(stream_index(0, 0, c, h, w, c).is_err());
    }

    #[test]
    fn flatten_then_reshape_round_trips(n in 1usize..3, c in 1usize..4, h in 1usize..5, w in 1usize..5) {
        let x = tensor(Shape::new(n, c, h, w), 9);
        let f = ops::flatten(x.clone());
        prop_assert_eq!(f.shape(), Shape::matrix(n, c * h * w));
        prop_assert_eq!(f.reshape(x.shape()).unwrap(), x);
    }

    #[test]
    fn softmax_rows_sum_to_one(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let p = ops::softmax2(&Tensor::new(Shape::matrix(1, 2), vec![a, b]).unwrap()).unwrap();
        prop_assert!((p.data()[0] + p.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn focal_without_focusing_is_cross_entropy(a in -20.0f64..20.0, b in -20.0f64..20.0, label in 0u8..2) {
        let logits = Tensor::new(Shape::matrix(1, 2), vec![a, b]).unwrap();
        let (fl, _) = focal_loss(&logits, &[label], 1.0, 0.0).unwrap();
        let z = [a, b];
        let m = a.max(b);
        let ce = -(z[label as usize] - m - ((a - m).exp() + (b - m).exp()).ln());
        // the probability floor of 1e-12 caps the loss at -ln(1e-12)
        let expected = ce.min(-(1e-12f64).ln());
        prop_assert!((fl - expected).abs() < 1e-9, "{fl} vs {expected}");
    }

    #[test]
    fn augmentation_is_monotone_and_bounded(scaler in 0.125f64..=0.2, offset in 100.0f64..=200.0) {
        let p = AugmentParams::new(scaler, offset).unwrap();
        let mut prev = 0u8;
        for v in 0..=255u8 {
            let out = augment_pixel(v, &p);
            prop_assert!(out >= prev);
            prop_assert!(out <= 251);
            prev = out;
        }
    }

    #[test]
    fn acer_invariant_under_label_and_score_flip(data in prop::collection::vec((0u32..=1000, any::<bool>()), 4..60), t in 0u32..=1000) {
        let mut data = data;
        data[0].1 = true;
        data[1].1 = false;
        let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 1000.0).collect();
        let labels: Vec<Label> = data.iter().map(|(_, r)| if *r { Label::Real } else { Label::Fake }).collect();
        let set = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
        // with s -> 1 - s the strict/non-strict boundary moves, so flip on a
        // threshold that no score can sit on
        let thr = (t as f64 + 0.5) / 1000.0;
        let r = error_rates(&set, thr);
        let flipped = ScoredSet::new(
            scores.iter().map(|s| 1.0 - s).collect(),
            labels.iter().map(|l| if *l == Label::Real { Label::Fake } else { Label::Real }).collect(),
        ).unwrap();
        let f = error_rates(&flipped, 1.0 - thr);
        prop_assert_eq!(r.apcer, f.npcer);
        prop_assert_eq!(r.npcer, f.apcer);
        prop_assert_eq!(r.acer, f.acer);
    }

    #[test]
    fn metrics_invariant_under_increasing_transform(data in prop::collection::vec((0u32..=100, any::<bool>()), 4..60)) {
        let mut data = data;
        data[0].1 = true;
        data[1].1 = false;
        let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 100.0).collect();
        let labels: Vec<Label> = data.iter().map(|(_, r)| if *r { Label::Real } else { Label::Fake }).collect();
        let set = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
        let squashed = ScoredSet::new(scores.iter().map(|s| s * s * s).collect(), labels).unwrap();
        let mut prev = 0.0;
        for target in [0.0, 1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0] {
            let (a, ta) = tpr_at_fpr(&set, target);
            let (b, tb) = tpr_at_fpr(&squashed, target);
            prop_assert_eq!(a, b);
            prop_assert!(ta == tb || (ta * ta * ta - tb).abs() < 1e-15);
            prop_assert!(a >= prev);
            prev = a;
        }
        for s in &scores {
            prop_assert_eq!(error_rates(&set, *s), error_rates(&squashed, s * s * s));
        }
    }

    #[test]
    fn lr_schedule_never_increases(e in 0usize..400) {
        let c = TrainConfig::default();
        prop_assert!(lr_at_epoch(&c, e + 1) <= lr_at_epoch(&c, e));
    }

    #[test]
    fn cascade_outputs_come_from_the_allowed_set(k in prop::collection::vec(0u32..=256, 4), ir in 0u32..=256, other_ir in 0u32..=256, shift in 0u32..=256) {
        // dyadic scores and weights of 1/4 keep every mean exact
        let s: Vec<f64> = k.iter().map(|&v| v as f64 / 256.0).collect();
        let ir = ir as f64 / 256.0;
        let names = ["a", "b", "c", "d"];
        let cfg = FusionConfig::uniform(&names, "a", "ir", Thresholds::default()).unwrap();
        let rec = |s: &[f64], ir: f64| {
            names.iter().zip(s).fold(ScoreRecord::new("x"), |r, (n, v)| r.with(n, *v)).with("ir", ir)
        };
        let d = cascade_decide(&rec(&s, ir), &cfg).unwrap();
        let hi = s.iter().cloned().fold(f64::MIN, f64::max);
        let lo = s.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!([d.trace.mean, s[0], ir, hi, lo].contains(&d.score));
        match d.trace.branch {
            Branch::Ensemble => {
                // anchor moves, another member compensates so the mean is fixed;
                // IR score and the stage-2 thresholds change freely
                let delta = (shift as f64 / 256.0).min(1.0 - s[0]).min(s[1]);
                let mut moved = s.clone();
                moved[0] += delta;
                moved[1] -= delta;
                let t = Thresholds { anchor: 0.99, ir: 0.99, ..Thresholds::default() };
                let cfg2 = FusionConfig::uniform(&names, "a", "ir", t).unwrap();
                let d2 = cascade_decide(&rec(&moved, other_ir as f64 / 256.0), &cfg2).unwrap();
                prop_assert_eq!(d2.score, d.score);
                prop_assert_eq!(d2.trace.branch, Branch::Ensemble);
            }
            Branch::Ir => {
                prop_assert!(ir < 0.5);
                prop_assert_eq!(d.score, ir);
            }
            Branch::Anchor => prop_assert_eq!(d.score, s[0]),
            Branch::Blend => prop_assert!(d.score == hi || d.score == lo),
        }
    }
}
