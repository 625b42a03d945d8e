//! Forward kernels against direct loop implementations.

mod common;

use common::*;
use proptest::prelude::*;
use rsp_core::nn::model::model_forward;
use rsp_core::nn::ops::conv2d_forward;
use rsp_core::nn::ParameterSet;
use rsp_core::tensor::Tensor;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_six_loop_oracle(
        c in 1usize..=4, h in 1usize..=6, w in 1usize..=6,
        k in 1usize..=4, kh in 1usize..=3, kw in 1usize..=3,
        stride in 1usize..=2, pad in 0usize..=1, seed in any::<u64>(),
    ) {
        prop_assume!(h + 2 * pad >= kh && w + 2 * pad >= kw);
        let mut r = rng(seed);
        let x = Tensor::from_fn(&[1, c, h, w], |_| rand::Rng::random_range(&mut r, -1.0f32..1.0)).unwrap();
        let kern = Tensor::from_fn(&[k, c, kh, kw], |_| rand::Rng::random_range(&mut r, -1.0f32..1.0)).unwrap();
        let bias = Tensor::from_fn(&[k], |_| rand::Rng::random_range(&mut r, -1.0f32..1.0)).unwrap();
        let got = conv2d_forward(&x, &kern, Some(&bias), stride, pad).unwrap();
        let f64s = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        let mut ops = 0;
        let (want, ho, wo) = naive_conv(&f64s(&x), (c, h, w), &f64s(&kern), (k, kh, kw), Some(&f64s(&bias)), stride, pad, &mut ops);
        prop_assert_eq!(got.shape(), &[1, k, ho, wo][..]);
        for (a, b) in got.data().iter().zip(&want) {
            prop_assert!((*a as f64 - b).abs() <= 1e-6 * (1.0 + b.abs()), "{} vs {}", a, b);
        }
    }

    #[test]
    fn network_forward_matches_composition(seed in any::<u64>()) {
        let mut r = rng(seed);
        let arch = random_arch(&mut r);
        let params = ParameterSet::init(&arch, seed).unwrap();
        let (x, _) = random_batch(&arch, 3, &mut r);
        let got = model_forward(&arch, &params, &stack(&arch, &x)).unwrap();
        let classes = arch.class_count().unwrap();
        prop_assert_eq!(got.shape(), &[3, classes][..]);
        let mut ops = 0;
        for (s, sample) in x.iter().enumerate() {
            let want = naive_forward(&arch, &params, sample, &mut ops);
            for (a, b) in got.data()[s * classes..(s + 1) * classes].iter().zip(&want) {
                prop_assert!((*a as f64 - b).abs() <= 1e-4 * (1.0 + b.abs()), "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn inferred_shapes_match_executed_shapes(seed in any::<u64>()) {
        let mut r = rng(seed);
        let arch = random_arch(&mut r);
        let shapes = arch.validate().unwrap();
        let params = ParameterSet::init(&arch, seed).unwrap();
        let (x, _) = random_batch(&arch, 1, &mut r);
        let mut ops = 0;
        let out = naive_forward(&arch, &params, &x[0], &mut ops);
        prop_assert_eq!(out.len(), shapes.last().unwrap().numel());
        prop_assert_eq!(shapes.len(), arch.layers.len() + 1);
    }
}

#[test]
fn forward_is_deterministic() {
    let mut r = rng(12);
    for _ in 0..20 {
        let arch = random_arch(&mut r);
        let params = ParameterSet::init(&arch, 7).unwrap();
        let (x, _) = random_batch(&arch, 4, &mut r);
        let batch = stack(&arch, &x);
        let a = model_forward(&arch, &params, &batch).unwrap();
        let b = model_forward(&arch, &params, &batch).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}

#[test]
fn init_is_seed_deterministic() {
    let arch = random_arch(&mut rng(3));
    assert!(ParameterSet::init(&arch, 1).unwrap().bit_eq(&ParameterSet::init(&arch, 1).unwrap()));
    assert!(!ParameterSet::init(&arch, 1).unwrap().bit_eq(&ParameterSet::init(&arch, 2).unwrap()));
}
