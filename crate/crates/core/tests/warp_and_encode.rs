mod support;

use proptest::prelude::*;
use unmixsr_autodiff::{Graph, Tensor};
use unmixsr_core::warp_and_encode::{
    bilinear_warp, fractional_flow, positional_encode, positional_encode_var, warp_var, FlowField, SimilarityMap,
};
use unmixsr_core::Raster;

use support::*;

#[test]
fn warp_matches_pointwise_bilinear_oracle() {
    let mut r = rng(1);
    let f = rand_raster(&mut r, 7, 9, 3, -1.0, 1.0);
    let flow = rand_raster(&mut r, 7, 9, 2, -3.0, 3.0);
    let got = bilinear_warp(&f, &FlowField::new(flow.clone()).unwrap()).unwrap();
    assert!(max_abs_diff(got.data(), warp(&f, &flow).data()) < 1e-12);
}

#[test]
fn zero_flow_is_identity_and_integer_flow_shifts() {
    let f = rand_raster(&mut rng(2), 6, 6, 2, 0.0, 1.0);
    assert_eq!(bilinear_warp(&f, &FlowField::uniform(6, 6, 0.0, 0.0).unwrap()).unwrap(), f);
    let out = bilinear_warp(&f, &FlowField::uniform(6, 6, 1.0, 2.0).unwrap()).unwrap();
    for y in 0..4 {
        for x in 0..5 {
            assert_eq!(out.pixel(y, x), f.pixel(y + 2, x + 1));
        }
    }
}

#[test]
fn flow_shape_mismatch_is_rejected() {
    let f = Raster::filled(4, 4, 1, 0.0).unwrap();
    assert!(bilinear_warp(&f, &FlowField::uniform(4, 5, 0.0, 0.0).unwrap()).is_err());
    assert!(FlowField::new(Raster::filled(4, 4, 3, 0.0).unwrap()).is_err());
}

#[test]
fn similarity_map_must_lie_in_the_open_unit_interval() {
    assert!(SimilarityMap::new(Raster::filled(2, 2, 1, 0.5).unwrap()).is_ok());
    assert!(SimilarityMap::new(Raster::filled(2, 2, 1, 1.0).unwrap()).is_err());
    assert!(SimilarityMap::new(Raster::filled(2, 2, 1, 0.0).unwrap()).is_err());
}

#[test]
fn encoding_layout_and_values() {
    let flow = FlowField::new(Raster::new(1, 1, 2, vec![0.25, 0.75]).unwrap()).unwrap();
    let pe = positional_encode(&flow, 2.0, 3).unwrap();
    assert_eq!(pe.data.channels(), 12);
    let gamma: [f64; 6] = [0.5, 1.5, 1.0, 3.0, 2.0, 6.0];
    for (i, g) in gamma.iter().enumerate() {
        assert!((pe.data.get(0, 0, i) - g.sin()).abs() < 1e-15);
        assert!((pe.data.get(0, 0, 6 + i) - g.cos()).abs() < 1e-15);
    }
    assert!(positional_encode(&flow, 2.0, 0).is_err());
    assert!(positional_encode(&flow, -1.0, 2).is_err());
}

#[test]
fn fractional_part_is_in_unit_interval() {
    let flow = FlowField::new(Raster::new(1, 2, 2, vec![-1.25, 2.5, 3.0, -0.0]).unwrap()).unwrap();
    let d = fractional_flow(&flow);
    assert_eq!(d.raster().data(), &[0.75, 0.5, 0.0, 0.0]);
}

#[test]
fn graph_encoding_equals_plain_encoding_of_the_fractional_flow() {
    let flow = rand_raster(&mut rng(3), 4, 5, 2, -4.0, 4.0);
    let plain = positional_encode(&fractional_flow(&FlowField::new(flow.clone()).unwrap()), 2.0, 4).unwrap();
    let mut g = Graph::new();
    let v = g.constant(flow.to_tensor());
    let e = positional_encode_var(&mut g, v, 2.0, 4);
    assert!(max_abs_diff(g.value(e).data(), plain.data.data()) < 1e-12);
}

#[test]
fn warp_gradients_match_finite_differences() {
    let mut r = rng(4);
    let f = rand_tensor(&mut r, &[5, 6, 2], 1.0);
    let flow = rand_tensor(&mut r, &[5, 6, 2], 1.7);
    let probe = rand_tensor(&mut r, &[5, 6, 2], 1.0);
    let eval = |f: &Tensor, fl: &Tensor| {
        let mut g = Graph::new();
        let (a, b) = (g.leaf(f.clone()), g.leaf(fl.clone()));
        let w = warp_var(&mut g, a, b).unwrap();
        let l = g.weighted_sum(w, &probe);
        let v = g.value(l).data()[0];
        let grads = g.backward(l);
        (v, grads.get(a).unwrap().clone(), grads.get(b).unwrap().clone())
    };
    let (_, gf, gflow) = eval(&f, &flow);
    let h = 1e-7;
    for i in (0..f.numel()).step_by(5) {
        let (mut p, mut m) = (f.clone(), f.clone());
        p.data_mut()[i] += h;
        m.data_mut()[i] -= h;
        let num = (eval(&p, &flow).0 - eval(&m, &flow).0) / (2.0 * h);
        assert!((num - gf.data()[i]).abs() < 1e-6 * num.abs().max(1.0));
    }
    for i in 0..flow.numel() {
        let (mut p, mut m) = (flow.clone(), flow.clone());
        p.data_mut()[i] += h;
        m.data_mut()[i] -= h;
        let num = (eval(&f, &p).0 - eval(&f, &m).0) / (2.0 * h);
        assert!((num - gflow.data()[i]).abs() < 1e-5 * num.abs().max(1.0), "flow[{i}]: {num} vs {}", gflow.data()[i]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn uniform_warp_of_a_constant_is_constant(v in -2.0f64..2.0, dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
        let f = Raster::filled(5, 5, 2, v).unwrap();
        let out = bilinear_warp(&f, &FlowField::uniform(5, 5, dx, dy).unwrap()).unwrap();
        prop_assert!(out.data().iter().all(|x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn encoding_is_bounded_and_periodic_in_whole_pixels(seed in 0u64..5000, shift in -3i32..3) {
        let flow = rand_raster(&mut rng(seed), 3, 3, 2, -5.0, 5.0);
        let moved = Raster::new(3, 3, 2, flow.data().iter().map(|v| v + shift as f64).collect()).unwrap();
        let a = positional_encode(&fractional_flow(&FlowField::new(flow).unwrap()), 2.0, 3).unwrap();
        let b = positional_encode(&fractional_flow(&FlowField::new(moved).unwrap()), 2.0, 3).unwrap();
        prop_assert!(a.data.data().iter().all(|v| v.abs() <= 1.0));
        prop_assert!(max_abs_diff(a.data.data(), b.data.data()) < 1e-9);
    }
}
