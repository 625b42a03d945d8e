//! Properties of shrink planning, calibration, survivor selection and
//! accounting on random architectures.

mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use rsp_core::compress::*;
use rsp_core::nn::model::model_forward;
use rsp_core::nn::{ArchitectureDescriptor, ParameterSet};

fn random_config(r: &mut rand_chacha::ChaCha8Rng) -> CompressionConfig {
    CompressionConfig {
        epsilon: [0.05, 0.1, 0.25, 0.5, 1.0][r.random_range(0..5)],
        unit_mode: if r.random_bool(0.5) { UnitMode::PerLayer } else { UnitMode::PerResidualBlock },
        shrink_linear_layers: r.random_bool(0.8),
    }
}

fn random_profile(arch: &ArchitectureDescriptor, r: &mut rand_chacha::ChaCha8Rng) -> SparsityProfile {
    let ratios: Vec<f64> = arch
        .prunable_layers()
        .iter()
        .map(|_| if r.random_bool(0.2) { [0.0, 1.0][r.random_range(0..2)] } else { r.random() })
        .collect();
    SparsityProfile::from_layer_ratios(arch, &ratios).unwrap()
}

/// `ceil(eps * k)` without floating-point overshoot on exact products.
fn floor_width(eps: f64, k: usize) -> usize {
    ((eps * k as f64) - 1e-9).ceil().max(1.0) as usize
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn shrunk_architectures_execute_within_bounds(seed in any::<u64>()) {
        let mut r = rng(seed);
        let arch = random_arch(&mut r);
        let cfg = random_config(&mut r);
        let profile = random_profile(&arch, &mut r);
        let plan = shrink_plan(&arch, &profile, &cfg).unwrap();
        let pruned = calibrate(&apply_plan(&arch, &plan)).unwrap();
        pruned.validate().unwrap();
        for i in arch.prunable_layers() {
            let k = arch.layers[i].width().unwrap();
            let k2 = pruned.layers[i].width().unwrap();
            prop_assert!(floor_width(cfg.epsilon, k) <= k2 && k2 <= k, "layer {}: {} -> {}", i, k, k2);
        }
        let params = ParameterSet::init(&pruned, seed).unwrap();
        let (x, _) = random_batch(&pruned, 2, &mut r);
        let logits = model_forward(&pruned, &params, &stack(&pruned, &x)).unwrap();
        prop_assert!(logits.all_finite());
    }

    #[test]
    fn calibration_is_idempotent(seed in any::<u64>()) {
        let mut r = rng(seed);
        let arch = random_arch(&mut r);
        let profile = random_profile(&arch, &mut r);
        let plan = shrink_plan(&arch, &profile, &random_config(&mut r)).unwrap();
        let once = calibrate(&apply_plan(&arch, &plan)).unwrap();
        prop_assert_eq!(calibrate(&once).unwrap(), once.clone());
        // consistent inputs pass through untouched
        prop_assert_eq!(calibrate(&arch).unwrap(), arch);
    }

    #[test]
    fn more_sparsity_never_widens(seed in any::<u64>()) {
        let mut r = rng(seed);
        let arch = random_arch(&mut r);
        let cfg = CompressionConfig::default();
        let n = arch.prunable_layers().len();
        let lo: Vec<f64> = (0..n).map(|_| r.random_range(0.0..0.5)).collect();
        let hi: Vec<f64> = lo.iter().map(|s| s + r.random_range(0.0..0.5)).collect();
        let a = shrink_plan(&arch, &SparsityProfile::from_layer_ratios(&arch, &lo).unwrap(), &cfg).unwrap();
        let b = shrink_plan(&arch, &SparsityProfile::from_layer_ratios(&arch, &hi).unwrap(), &cfg).unwrap();
        for (x, y) in a.layers.iter().zip(&b.layers) {
            prop_assert!(y.new <= x.new);
        }
    }

    #[test]
    fn top_k_matches_brute_force(norms in prop::collection::vec(0u8..4, 1..10), k in 0usize..10) {
        let k = k.min(norms.len());
        let norms: Vec<f64> = norms.into_iter().map(f64::from).collect();
        prop_assert_eq!(top_k_by_norm(&norms, k), brute_force_top_k(&norms, k));
    }

    #[test]
    fn flops_match_instrumented_forward(seed in any::<u64>()) {
        let mut r = rng(seed);
        let arch = random_arch(&mut r);
        let params = ParameterSet::init(&arch, seed).unwrap();
        let (x, _) = random_batch(&arch, 1, &mut r);
        let mut ops = 0;
        naive_forward(&arch, &params, &x[0], &mut ops);
        prop_assert_eq!(count_flops(&arch).unwrap(), ops);
        prop_assert_eq!(count_params(&arch).unwrap(), params.numel() as u64);
    }

    #[test]
    fn compress_keeps_heaviest_filters(seed in any::<u64>()) {
        let mut r = rng(seed);
        let arch = random_arch(&mut r);
        let params = random_sparse_params(&arch, &mut r);
        let c = compress(&arch, &params, &CompressionConfig::default()).unwrap();
        c.plan.check().unwrap();
        c.params.check_against(&c.arch).unwrap();
        for e in &c.plan.layers {
            let norms = filter_norms(&params, e.layer).unwrap();
            let kept: f64 = e.survivors.iter().map(|&s| norms[s]).sum();
            // untied layers keep the k largest norms
            if c.plan.groups.iter().all(|g| !g.contains(&e.layer)) {
                let mut sorted = norms.clone();
                sorted.sort_by(|a, b| b.total_cmp(a));
                let best: f64 = sorted[..e.new].iter().sum();
                prop_assert!((kept - best).abs() <= 1e-9 * (1.0 + best));
            }
        }
    }
}
