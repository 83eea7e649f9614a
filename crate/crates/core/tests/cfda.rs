mod support;

use proptest::prelude::*;
use unmixsr_autodiff::{Graph, Tensor};
use unmixsr_core::cfda::{self, CfdaConfig, DeformParams};
use unmixsr_core::nn::ParamBuilder;
use unmixsr_core::Raster;

use support::*;

fn config() -> CfdaConfig {
    CfdaConfig { channels: 6, down: 2, omega: 2.0, pe_bands: 2, kernel: 3 }
}

#[test]
fn deform_conv_matches_gather_oracle_for_a_5x5_kernel() {
    let mut r = rng(1);
    let (k, cin, cout) = (5, 3, 2);
    let f = rand_raster(&mut r, 6, 7, cin, -1.0, 1.0);
    let offsets = rand_raster(&mut r, 6, 7, 2 * k * k, -4.0, 4.0);
    let masks = rand_raster(&mut r, 6, 7, k * k, 0.0, 1.0);
    let w = rand_tensor(&mut r, &[k, k, cin, cout], 0.5);
    let params = DeformParams { offsets: offsets.clone(), masks: masks.clone(), delta: None };
    let got = cfda::modulated_deform_conv(&f, &params, &w, None).unwrap();
    assert!(max_abs_diff(got.data(), deform_conv(&f, &offsets, &masks, &w, None).data()) < 1e-12);
}

#[test]
fn integer_offsets_equal_a_shifted_convolution() {
    let mut r = rng(2);
    let f = rand_raster(&mut r, 8, 8, 2, -1.0, 1.0);
    let w = rand_tensor(&mut r, &[3, 3, 2, 2], 0.5);
    let mut off = vec![0.0; 64 * 18];
    for px in 0..64 {
        for j in 0..9 {
            off[px * 18 + 2 * j] = 1.0;
        }
    }
    let params = DeformParams {
        offsets: Raster::new(8, 8, 18, off).unwrap(),
        masks: Raster::filled(8, 8, 9, 1.0).unwrap(),
        delta: None,
    };
    let got = cfda::modulated_deform_conv(&f, &params, &w, None).unwrap();
    let mut shifted = Raster::filled(8, 8, 2, 0.0).unwrap();
    for y in 0..8 {
        for x in 0..7 {
            for c in 0..2 {
                shifted.set(y, x, c, f.get(y, x + 1, c));
            }
        }
    }
    let plain = conv(&shifted, &w, None);
    // Column 0 differs: deformable taps read real pixels where the shifted copy is padding.
    for y in 0..8 {
        for x in 1..8 {
            assert!(max_abs_diff(got.pixel(y, x), plain.pixel(y, x)) < 1e-12);
        }
    }
}

#[test]
fn deform_gradients_match_finite_differences() {
    let mut r = rng(3);
    let shapes = [vec![5, 5, 2], vec![5, 5, 18], vec![5, 5, 9], vec![3, 3, 2, 3], vec![3]];
    let inputs: Vec<Tensor> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| match i {
            1 => rand_tensor(&mut r, s, 1.6),
            2 => rand_tensor(&mut r, s, 1.0).map(|v| 0.5 + 0.4 * v),
            _ => rand_tensor(&mut r, s, 1.0),
        })
        .collect();
    let probe = rand_tensor(&mut r, &[5, 5, 3], 1.0);
    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let v: Vec<_> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let out = cfda::modulated_deform_conv_var(&mut g, v[0], v[1], v[2], v[3], Some(v[4])).unwrap();
        let l = g.weighted_sum(out, &probe);
        let val = g.value(l).data()[0];
        let grads = g.backward(l);
        (val, v.iter().map(|&x| grads.get(x).unwrap().clone()).collect::<Vec<_>>())
    };
    let (_, analytic) = eval(&inputs);
    let h = 1e-7;
    for (which, t) in inputs.iter().enumerate() {
        for i in (0..t.numel()).step_by(7) {
            let mut p = inputs.clone();
            let mut m = inputs.clone();
            p[which].data_mut()[i] += h;
            m[which].data_mut()[i] -= h;
            let num = (eval(&p).0 - eval(&m).0) / (2.0 * h);
            let a = analytic[which].data()[i];
            assert!((num - a).abs() < 1e-5 * num.abs().max(1.0), "input {which}[{i}]: {num} vs {a}");
        }
    }
}

#[test]
fn fresh_module_has_zero_flow_and_half_masks() {
    let cfg = config();
    let mut b = ParamBuilder::new(4);
    cfda::init(&mut b, "m", &cfg).unwrap();
    let p = b.finish();
    let mut g = Graph::new();
    let bound = p.bind(&mut g);
    let mut r = rng(4);
    let f = g.constant(rand_tensor(&mut r, &[8, 8, 6], 1.0));
    let f_ref = g.constant(rand_tensor(&mut r, &[8, 8, 6], 1.0));
    let o = cfda::forward(&mut g, &bound, "m", &cfg, f, f_ref).unwrap();
    assert_eq!(g.value(o.flow).max_abs(), 0.0);
    assert_eq!(g.value(o.offsets).max_abs(), 0.0);
    assert!(g.value(o.masks).data().iter().all(|&v| v == 0.5));
    assert!(g.value(o.similarity).data().iter().all(|&v| v == 0.5));
    assert_eq!(g.shape(o.aggregated), &[8, 8, 6]);
}

#[test]
fn bad_configs_and_shapes_are_rejected() {
    let mut b = ParamBuilder::new(0);
    assert!(cfda::init(&mut b, "m", &CfdaConfig { kernel: 2, ..config() }).is_err());
    assert!(cfda::init(&mut b, "n", &CfdaConfig { down: 3, ..config() }).is_err());
    let cfg = config();
    let mut b = ParamBuilder::new(0);
    cfda::init(&mut b, "m", &cfg).unwrap();
    let p = b.finish();
    let mut g = Graph::new();
    let bound = p.bind(&mut g);
    let f = g.constant(Tensor::zeros(&[8, 8, 6]));
    let f_ref = g.constant(Tensor::zeros(&[8, 4, 6]));
    assert!(cfda::forward(&mut g, &bound, "m", &cfg, f, f_ref).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn offsets_stay_within_one_pixel_of_the_flow(seed in 0u64..5000, scale in 0.05f64..0.5) {
        let cfg = config();
        let mut b = ParamBuilder::randomized(seed, scale);
        cfda::init(&mut b, "m", &cfg).unwrap();
        let p = b.finish();
        let mut g = Graph::new();
        let bound = p.bind(&mut g);
        let mut r = rng(seed);
        let f = g.constant(rand_tensor(&mut r, &[8, 8, 6], 1.0));
        let f_ref = g.constant(rand_tensor(&mut r, &[8, 8, 6], 1.0));
        let o = cfda::forward(&mut g, &bound, "m", &cfg, f, f_ref).unwrap();
        let (off, flow) = (g.value(o.offsets).data(), g.value(o.flow).data());
        for px in 0..64 {
            for j in 0..9 {
                for d in 0..2 {
                    prop_assert!((off[px * 18 + 2 * j + d] - flow[px * 2 + d]).abs() <= 1.0 + 1e-12);
                }
            }
        }
        prop_assert!(g.value(o.masks).data().iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(g.value(o.similarity).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
