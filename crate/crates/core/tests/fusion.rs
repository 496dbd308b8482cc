mod common;

use mitoeval::fusion::{
    concat_channels, conv1x1, fuse_backward, fuse_forward, layer_norm, FeatureMap, FusionCase, FusionWeights,
};
use mitoeval::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_map(rng: &mut impl Rng, c: usize, h: usize, w: usize, scale: f64) -> FeatureMap {
    FeatureMap::new(c, h, w, (0..c * h * w).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Largest `|a − n| / max(1, |a|, |n|)` between `fuse_backward` and central
/// differences of the test-local reference forward pass.
fn max_rel_error_against_reference(case: &FusionCase, step: f64) -> f64 {
    let (c, hh, ww) = case.he.shape();
    let hw = hh * ww;
    let w = &case.weights;
    let grads = case.backward().unwrap();
    let up = case.upstream.data();
    let loss = |h: &[f64], p: &[f64], g: &[f64], b: &[f64], cw: &[f64], cb: &[f64]| -> f64 {
        common::fusion_reference(c, hw, h, p, g, b, cw, cb, w.epsilon).iter().zip(up).map(|(a, b)| a * b).sum()
    };
    let mut params = [
        case.he.data().to_vec(),
        case.phh3.data().to_vec(),
        w.ln_gamma.clone(),
        w.ln_beta.clone(),
        w.conv_weight.clone(),
        w.conv_bias.clone(),
    ];
    let analytic = [
        grads.d_h.data().to_vec(),
        grads.d_p.data().to_vec(),
        grads.d_gamma.clone(),
        grads.d_beta.clone(),
        grads.d_conv_weight.clone(),
        grads.d_conv_bias.clone(),
    ];
    let mut worst: f64 = 0.0;
    for g in 0..params.len() {
        for i in 0..params[g].len() {
            let orig = params[g][i];
            params[g][i] = orig + step;
            let plus = loss(&params[0], &params[1], &params[2], &params[3], &params[4], &params[5]);
            params[g][i] = orig - step;
            let minus = loss(&params[0], &params[1], &params[2], &params[3], &params[4], &params[5]);
            params[g][i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[g][i];
            worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()));
        }
    }
    worst
}

#[test]
fn gradients_match_reference_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = FusionCase::random(rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4), seed);
        let err = max_rel_error_against_reference(&case, 1e-6);
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn shipped_fixture_passes_its_gradient_check() {
    let case = FusionCase::from_json(&common::fixture("fuse_weights.json"), &common::fixture("fuse_maps.json")).unwrap();
    assert!(case.gradient_check(1e-6).unwrap().max_rel_error < 1e-6);
    assert!(max_rel_error_against_reference(&case, 1e-6) < 1e-6);
}

#[test]
fn worked_single_channel_example() {
    let h = FeatureMap::new(1, 1, 1, vec![3.0]).unwrap();
    let p = FeatureMap::new(1, 1, 1, vec![1.0]).unwrap();
    let mut w = FusionWeights::identity_norm(1);
    w.conv_weight = vec![0.5, -0.5];
    let out = fuse_forward(&h, &p, &w).unwrap();
    assert!((out.data()[0] - 1.0).abs() < 1e-4);
    // exactly 1/√(1 + ε)
    assert!((out.data()[0] - 1.0 / (1.0 + 1e-5f64).sqrt()).abs() < 1e-15);
}

#[test]
fn forward_matches_reference_pass() {
    let case = FusionCase::random(3, 4, 2, 17);
    let w = &case.weights;
    let expected = common::fusion_reference(
        3,
        8,
        case.he.data(),
        case.phh3.data(),
        &w.ln_gamma,
        &w.ln_beta,
        &w.conv_weight,
        &w.conv_bias,
        w.epsilon,
    );
    for (a, b) in case.forward().unwrap().data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn dead_relu_blocks_input_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (h, p) = (random_map(&mut rng, 2, 3, 3, 1.0), random_map(&mut rng, 2, 3, 3, 1.0));
    let mut w = FusionWeights::identity_norm(2);
    w.conv_bias = vec![-10.0, -10.0];
    let up = FeatureMap::new(2, 3, 3, vec![1.0; 18]).unwrap();
    let g = fuse_backward(&h, &p, &w, &up).unwrap();
    assert!(g.d_h.data().iter().chain(g.d_p.data()).all(|&v| v == 0.0));
}

#[test]
fn mismatched_streams_are_rejected() {
    let h = FeatureMap::zeros(2, 3, 3);
    let p = FeatureMap::zeros(2, 3, 4);
    assert!(matches!(concat_channels(&h, &p), Err(Error::ShapeMismatch(_))));
    assert!(matches!(fuse_forward(&h, &p, &FusionWeights::identity_norm(2)), Err(Error::ShapeMismatch(_))));
}

proptest! {
    #[test]
    fn output_shape_follows_input(c in 1usize..6, h in 1usize..7, w in 1usize..7, seed in any::<u64>()) {
        let case = FusionCase::random(c, h, w, seed);
        prop_assert_eq!(case.forward().unwrap().shape(), (c, h, w));
        let cat = concat_channels(&case.he, &case.phh3).unwrap();
        prop_assert_eq!(cat.shape(), (2 * c, h, w));
        for ch in 0..2 * c {
            for y in 0..h {
                for x in 0..w {
                    let src = if ch < c { case.he.get(ch, y, x) } else { case.phh3.get(ch - c, y, x) };
                    prop_assert_eq!(cat.get(ch, y, x), src);
                    prop_assert_eq!(cat.data()[(ch * h + y) * w + x], src);
                }
            }
        }
    }

    #[test]
    fn normalized_statistics(c in 1usize..6, hw in 1usize..10, scale in 0.01f64..100.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_map(&mut rng, 2 * c, 1, hw, scale);
        let eps = 1e-5;
        let y = layer_norm(&x, &vec![1.0; 2 * c], &vec![0.0; 2 * c], eps).unwrap();
        let n = 2 * c;
        for loc in 0..hw {
            let col = |m: &FeatureMap| (0..n).map(|ch| m.get(ch, 0, loc)).collect::<Vec<_>>();
            let (xs, ys) = (col(&x), col(&y));
            let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
            let var = |v: &[f64]| { let m = mean(v); v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n as f64 };
            let s2 = var(&xs);
            prop_assert!(mean(&ys).abs() < 1e-12);
            prop_assert!((var(&ys) - s2 / (s2 + eps)).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_shift_per_location_is_invisible(c in 1usize..5, hw in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_map(&mut rng, 2 * c, 1, hw, 3.0);
        // keep σ ≥ 1 per location so ε barely matters
        let mut data = x.data().to_vec();
        for loc in 0..hw {
            data[loc] += 4.0;
            data[hw + loc] -= 4.0;
        }
        let x = FeatureMap::new(2 * c, 1, hw, data).unwrap();
        let shifts: Vec<f64> = (0..hw).map(|_| rng.random_range(-50.0..50.0)).collect();
        let moved: Vec<f64> = x.data().iter().enumerate().map(|(i, v)| v + shifts[i % hw]).collect();
        let moved = FeatureMap::new(2 * c, 1, hw, moved).unwrap();
        let (g, b) = (vec![1.0; 2 * c], vec![0.0; 2 * c]);
        let (a, m) = (layer_norm(&x, &g, &b, 1e-5).unwrap(), layer_norm(&moved, &g, &b, 1e-5).unwrap());
        for (u, v) in a.data().iter().zip(m.data()) {
            prop_assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn conv_is_linear_without_bias(c_in in 1usize..6, c_out in 1usize..4, hw in 1usize..6, alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_map(&mut rng, c_in, 1, hw, 1.0);
        let y = random_map(&mut rng, c_in, 1, hw, 1.0);
        let weight: Vec<f64> = (0..c_in * c_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let zero = vec![0.0; c_out];
        let mix: Vec<f64> = x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = conv1x1(&FeatureMap::new(c_in, 1, hw, mix).unwrap(), &weight, &zero).unwrap();
        let (cx, cy) = (conv1x1(&x, &weight, &zero).unwrap(), conv1x1(&y, &weight, &zero).unwrap());
        for i in 0..lhs.data().len() {
            prop_assert!((lhs.data()[i] - (alpha * cx.data()[i] + beta * cy.data()[i])).abs() < 1e-12);
        }
        // per-pixel matrix product
        for co in 0..c_out {
            for loc in 0..hw {
                let direct: f64 = (0..c_in).map(|j| weight[co * c_in + j] * x.get(j, 0, loc)).sum();
                prop_assert!((cx.get(co, 0, loc) - direct).abs() < 1e-12);
            }
        }
    }
}
