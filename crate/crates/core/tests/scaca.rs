mod support;

use proptest::prelude::*;
use unmixsr_autodiff::{Graph, Tensor};
use unmixsr_core::nn::{ModelParameters, ParamBuilder};
use unmixsr_core::scaca;

use support::*;

fn attention_params(seed: u64, c: usize, m: usize) -> ModelParameters {
    let mut b = ParamBuilder::randomized(seed, 0.3);
    scaca::init_block(&mut b, "blk", c, m).unwrap();
    b.finish()
}

#[test]
fn windowed_attention_matches_dense_oracle_on_a_3x2_tiling() {
    let (c, m) = (4, 3);
    let p = attention_params(1, c, m);
    let f = rand_raster(&mut rng(1), 9, 6, c, -1.0, 1.0);
    let mut g = Graph::new();
    let bound = p.bind(&mut g);
    let fv = g.constant(f.to_tensor());
    let ones = g.constant(Tensor::full(&[9, 6, c], 1.0));
    let (out, attn) = scaca::spatial_cross_attention(&mut g, &bound, "blk.sa", fv, ones, m).unwrap();
    let (oracle, rows) = dense_window_attention(&p, "blk.sa", &f, m);
    assert_eq!(g.shape(attn), &[6, 9, 9]);
    assert!(max_abs_diff(g.value(out).data(), &oracle) < 1e-12);
    assert!(max_abs_diff(g.value(attn).data(), &rows.concat()) < 1e-12);
}

#[test]
fn reference_modulation_scales_values() {
    // With V ⊙ ref, doubling the reference doubles the attention output before projection.
    let (c, m) = (4, 4);
    let p = attention_params(2, c, m);
    let mut r = rng(2);
    let f = rand_tensor(&mut r, &[4, 4, c], 1.0);
    let run = |scale: f64| {
        let mut g = Graph::new();
        let bound = p.bind(&mut g);
        let fv = g.constant(f.clone());
        let refm = g.constant(Tensor::full(&[4, 4, c], scale));
        let (_, attn) = scaca::spatial_cross_attention(&mut g, &bound, "blk.sa", fv, refm, m).unwrap();
        g.value(attn).clone()
    };
    // Attention weights depend only on F, never on the reference.
    assert_eq!(run(1.0), run(3.0));
}

#[test]
fn features_smaller_than_the_window_are_padded() {
    let (c, m) = (4, 4);
    let p = attention_params(3, c, m);
    let mut g = Graph::new();
    let bound = p.bind(&mut g);
    let mut r = rng(3);
    let f = g.constant(rand_tensor(&mut r, &[2, 3, c], 1.0));
    let fr = g.constant(rand_tensor(&mut r, &[2, 3, c], 1.0));
    let o = scaca::scaca_block(&mut g, &bound, "blk", f, fr, m).unwrap();
    assert_eq!(g.shape(o.out), &[2, 3, c]);
    assert!(g.value(o.out).is_finite());
}

#[test]
fn channel_attention_matches_dense_oracle() {
    let c = 5;
    let p = attention_params(4, c, 2);
    let f = rand_raster(&mut rng(4), 3, 4, c, -1.0, 1.0);
    let mut g = Graph::new();
    let bound = p.bind(&mut g);
    let fv = g.constant(f.to_tensor());
    let ones = g.constant(Tensor::full(&[3, 4, c], 1.0));
    let (out, attn) = scaca::channel_cross_attention(&mut g, &bound, "blk.ca", fv, ones).unwrap();
    let (oracle, rows) = dense_channel_attention(&p, "blk.ca", &f);
    assert_eq!(g.shape(attn), &[1, c, c]);
    assert!(max_abs_diff(g.value(out).data(), &oracle) < 1e-12);
    assert!(max_abs_diff(g.value(attn).data(), &rows.concat()) < 1e-12);
}

#[test]
fn partition_covers_every_element_once() {
    let idx = scaca::window_partition_index(6, 9, 2, 3);
    let mut seen = idx.clone();
    seen.sort_unstable();
    assert_eq!(seen, (0..6 * 9 * 2).collect::<Vec<_>>());
    let rel = scaca::relative_position_index(3);
    assert!(rel.iter().all(|&i| i < 25));
    assert_eq!(rel[0], 12);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let p = attention_params(5, 4, 2);
    let mut g = Graph::new();
    let bound = p.bind(&mut g);
    let f = g.constant(Tensor::zeros(&[4, 4, 4]));
    let fr = g.constant(Tensor::zeros(&[4, 2, 4]));
    assert!(scaca::spatial_cross_attention(&mut g, &bound, "blk.sa", f, fr, 2).is_err());
    assert!(scaca::channel_cross_attention(&mut g, &bound, "blk.ca", f, fr).is_err());
    assert!(scaca::spatial_cross_attention(&mut g, &bound, "blk.sa", f, f, 3).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..5000, h in 1usize..9, w in 1usize..9) {
        let c = 4;
        let p = attention_params(seed, c, 4);
        let mut g = Graph::new();
        let bound = p.bind(&mut g);
        let mut r = rng(seed);
        let f = g.constant(rand_tensor(&mut r, &[h, w, c], 2.0));
        let fr = g.constant(rand_tensor(&mut r, &[h, w, c], 2.0));
        let o = scaca::scaca_block(&mut g, &bound, "blk", f, fr, 4).unwrap();
        for a in [o.spatial_attention, o.channel_attention] {
            let t = g.value(a);
            let n = t.last_dim();
            for row in t.data().chunks(n) {
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
