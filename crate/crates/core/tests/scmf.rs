mod support;

use proptest::prelude::*;
use unmixsr_autodiff::{Graph, Tensor};
use unmixsr_core::nn::ParamBuilder;
use unmixsr_core::scmf;

use support::*;

#[test]
fn fresh_fusion_passes_the_decoder_through() {
    let c = 4;
    let mut b = ParamBuilder::new(1);
    scmf::init(&mut b, "f", c).unwrap();
    let p = b.finish();
    let mut g = Graph::new();
    let bound = p.bind(&mut g);
    let mut r = rng(1);
    let enc = g.constant(rand_tensor(&mut r, &[5, 5, c], 1.0));
    let dec_t = rand_tensor(&mut r, &[5, 5, c], 1.0);
    let dec = g.constant(dec_t.clone());
    let o = scmf::scmf_fuse(&mut g, &bound, "f", enc, dec).unwrap();
    assert_eq!(g.value(o.out), &dec_t);
    assert!(g.value(o.m_spa).data().iter().all(|&v| v == 0.5));
    assert!(g.value(o.m_spe).data().iter().all(|&v| v == 0.5));
    assert_eq!(g.shape(o.m_spa), &[5, 5, 1]);
    assert_eq!(g.shape(o.m_spe), &[1, 1, c]);
}

#[test]
fn channel_gate_matches_pooled_oracle() {
    let c = 3;
    let mut b = ParamBuilder::randomized(2, 0.5);
    scmf::init(&mut b, "f", c).unwrap();
    let p = b.finish();
    let mut r = rng(2);
    let cat = rand_tensor(&mut r, &[4, 6, 2 * c], 1.0);
    let mut g = Graph::new();
    let bound = p.bind(&mut g);
    let x = g.constant(cat.clone());
    let (f_spe, m) = scmf::channel_modulation(&mut g, &bound, "f", x);
    let gap: Vec<f64> = (0..2 * c).map(|ch| cat.data().iter().skip(ch).step_by(2 * c).sum::<f64>() / 24.0).collect();
    let logits = dense(&gap, 2 * c, param(&p, "f.spe.gate.w"), Some(param(&p, "f.spe.gate.b")));
    let gate: Vec<f64> = logits.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
    assert!(max_abs_diff(g.value(m).data(), &gate) < 1e-12);
    let v = dense(cat.data(), 2 * c, param(&p, "f.spe.v.w"), Some(param(&p, "f.spe.v.b")));
    let expect: Vec<f64> = v.iter().enumerate().map(|(i, x)| x * gate[i % c]).collect();
    assert!(max_abs_diff(g.value(f_spe).data(), &expect) < 1e-12);
}

#[test]
fn shape_mismatch_is_rejected() {
    let mut b = ParamBuilder::new(3);
    scmf::init(&mut b, "f", 2).unwrap();
    let p = b.finish();
    let mut g = Graph::new();
    let bound = p.bind(&mut g);
    let a = g.constant(Tensor::zeros(&[4, 4, 2]));
    let d = g.constant(Tensor::zeros(&[2, 2, 2]));
    assert!(scmf::scmf_fuse(&mut g, &bound, "f", a, d).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gates_lie_in_the_open_unit_interval(seed in 0u64..5000, scale in 0.01f64..0.5) {
        let c = 4;
        let mut b = ParamBuilder::randomized(seed, scale);
        scmf::init(&mut b, "f", c).unwrap();
        let p = b.finish();
        let mut g = Graph::new();
        let bound = p.bind(&mut g);
        let mut r = rng(seed);
        let enc = g.constant(rand_tensor(&mut r, &[6, 6, c], 1.0));
        let dec = g.constant(rand_tensor(&mut r, &[6, 6, c], 1.0));
        let o = scmf::scmf_fuse(&mut g, &bound, "f", enc, dec).unwrap();
        for m in [o.m_spa, o.m_spe] {
            prop_assert!(g.value(m).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
