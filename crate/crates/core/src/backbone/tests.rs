use super::*;
use crate::oa::elbo_at;
use crate::ordering::{sample_permutation, Permutation};
use crate::rng::seeded;
use crate::upscale::upscale_elbo_at;

fn small(config: ModelConfig, seed: u64) -> (Network, Vec<f64>) {
    let net = Network::new(config).unwrap();
    let params = net.init_with_head(&mut seeded(seed), 0.5);
    (net, params)
}

fn batch(net: &Network, seed: u64, n: usize, ce_weight: f64) -> Vec<Objective> {
    let c = net.config();
    let variant = c.variant().unwrap();
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let x: Vec<u32> = (0..c.dims).map(|_| rng.random_range(0..c.classes as u32)).collect();
            Objective::sample(&variant, c.head(), c.classes, &x, ce_weight, &mut rng).unwrap()
        })
        .collect()
}

use rand::Rng as _;

fn gradient_check(config: ModelConfig) {
    let (net, params) = small(config, 1);
    let objs = batch(&net, 2, 3, 0.3);
    let analytic = net.loss_and_grad(&params, &objs).unwrap().grads;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] += h;
        let up = net.loss_and_grad(&p, &objs).unwrap().loss_bits;
        p[i] -= 2.0 * h;
        let down = net.loss_and_grad(&p, &objs).unwrap().loss_bits;
        let numeric = (up - down) / (2.0 * h);
        let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-3);
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "relative gradient error {worst}");
}

#[test]
fn gradients_match_finite_differences_order_agnostic() {
    gradient_check(ModelConfig::order_agnostic(4, 5, 6, 2));
}

#[test]
fn gradients_match_finite_differences_data_upscale() {
    gradient_check(ModelConfig::upscale(4, 8, 2, 5, 2));
}

#[test]
fn gradients_match_finite_differences_direct_upscale() {
    let mut c = ModelConfig::upscale(3, 9, 3, 5, 1);
    c.parametrization = Parametrization::Direct;
    gradient_check(c);
}

#[test]
fn head_bias_gradient_is_softmax_minus_target() {
    let (net, params) = small(ModelConfig::order_agnostic(3, 4, 4, 1), 3);
    let x = [2u32, 0, 3];
    let sigma = Permutation::identity(3);
    let variant = net.config().variant().unwrap();
    let obj = Objective::at(&variant, Head::Full, 4, &x, 1, 3, &sigma, 0.0).unwrap();
    let g = net.loss_and_grad(&params, std::slice::from_ref(&obj)).unwrap().grads;
    let logits = net.forward(&params, &obj.input, &obj.mask, 1, 3).unwrap();
    let probs = softmax(&logits[2 * 4..3 * 4]);
    let bias = net.layout().head_bias;
    for k in 0..4 {
        let expected = obj.coef / std::f64::consts::LN_2 * (probs[k] - (k == 3) as u8 as f64);
        assert!((g[bias + k] - expected).abs() < 1e-12);
    }
}

#[test]
fn loss_matches_stochastic_bound_estimators() {
    let (net, params) = small(ModelConfig::order_agnostic(5, 4, 6, 2), 4);
    let model = BackboneModel::new(&net, &params);
    let variant = net.config().variant().unwrap();
    let absorbing = AbsorbingState::Broadcast(0);
    let mut rng = seeded(5);
    for t in 1..=5 {
        let sigma = sample_permutation(&mut rng, 5).unwrap();
        let x = [1u32, 3, 0, 2, 2];
        let e = elbo_at(&x, &model, &absorbing, &sigma, t).unwrap();
        let obj = Objective::at(&variant, Head::Full, 4, &x, 1, t, &sigma, 0.0).unwrap();
        let r = net.loss_and_grad(&params, &[obj]).unwrap();
        assert!((r.elbo_bits_per_dim * 5.0 + e.value_bits).abs() < 1e-9);
        assert!((r.components[0] - e.component_bits).abs() < 1e-9);
    }

    for head in [Parametrization::Data, Parametrization::Direct] {
        let mut c = ModelConfig::upscale(4, 16, 2, 6, 1);
        c.parametrization = head;
        let (net, params) = small(c, 6);
        let model = BackboneModel::new(&net, &params);
        let variant = net.config().variant().unwrap();
        let t = variant.transitions().unwrap().clone();
        let x = [15u32, 0, 6, 9];
        for s in 1..=4 {
            for step in 1..=4 {
                let sigma = sample_permutation(&mut rng, 4).unwrap();
                let e = upscale_elbo_at(&x, &model, &t, s, step, &sigma).unwrap();
                let obj = Objective::at(&variant, net.config().head(), 16, &x, s, step, &sigma, 0.0).unwrap();
                let r = net.loss_and_grad(&params, &[obj]).unwrap();
                assert!((r.elbo_bits_per_dim * 4.0 + e.value_bits).abs() < 1e-8, "{head:?} s={s} t={step}");
            }
        }
    }
}

#[test]
fn duplicated_example_keeps_the_mean_gradient() {
    let (net, params) = small(ModelConfig::order_agnostic(4, 3, 5, 1), 7);
    let objs = batch(&net, 8, 1, 0.0);
    let one = net.loss_and_grad(&params, &objs).unwrap();
    let two = net.loss_and_grad(&params, &[objs[0].clone(), objs[0].clone()]).unwrap();
    for (a, b) in one.grads.iter().zip(&two.grads) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((one.loss_bits - two.loss_bits).abs() < 1e-12);
}

#[test]
fn without_positions_outputs_commute_with_permutations() {
    let mut c = ModelConfig::order_agnostic(4, 5, 6, 2);
    c.positional = false;
    let (net, params) = small(c, 9);
    let input = [4u32, 1, 0, 2];
    let mask = Mask::new(vec![true, false, true, false]);
    let out = net.forward(&params, &input, &mask, 1, 3).unwrap();
    let perm = [2usize, 0, 3, 1];
    let p_input: Vec<u32> = perm.iter().map(|&i| input[i]).collect();
    let p_mask = Mask::new(perm.iter().map(|&i| mask.get(i)).collect());
    let p_out = net.forward(&params, &p_input, &p_mask, 1, 3).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        for k in 0..5 {
            assert!((p_out[new * 5 + k] - out[old * 5 + k]).abs() < 1e-12);
        }
    }
}

#[test]
fn every_output_depends_on_every_input() {
    let (net, params) = small(ModelConfig::order_agnostic(4, 5, 6, 1), 10);
    let mask = Mask::new(vec![false; 4]);
    let base = net.forward(&params, &[0, 0, 0, 0], &mask, 1, 1).unwrap();
    for i in 0..4 {
        let mut input = [0u32; 4];
        input[i] = 3;
        let out = net.forward(&params, &input, &mask, 1, 1).unwrap();
        for j in 0..4 {
            assert!((0..5).any(|k| (out[j * 5 + k] - base[j * 5 + k]).abs() > 1e-9), "output {j} ignores input {i}");
        }
    }
}

#[test]
fn fresh_network_is_uniform() {
    let net = Network::new(ModelConfig::order_agnostic(3, 4, 4, 1)).unwrap();
    let params: Vec<f32> = net.init(&mut seeded(0));
    let model = BackboneModel::new(&net, &params);
    let out = model.predict(&[0, 1, 2], &Mask::new(vec![false; 3]), 1, 1);
    assert!(out.iter().all(|&p| (p - 0.25).abs() < 1e-7));
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let net = Network::new(ModelConfig::order_agnostic(4, 3, 4, 1)).unwrap();
        let mut store = ParamStore::new(net.init::<f32>(&mut seeded(11)));
        for step in 0..100 {
            let objs = batch(&net, 100 + step, 6, 0.0);
            let mut g = net.loss_and_grad(&store.params, &objs).unwrap().grads;
            clip_grad_norm(&mut g, 100.0);
            adam_step(&mut store, &g, &AdamConfig::default()).unwrap();
            ema_update(&mut store, 0.99);
        }
        store
    };
    assert_eq!(run(), run());
}

#[test]
fn config_validation() {
    let mut c = ModelConfig::order_agnostic(3, 4, 4, 1);
    c.parametrization = Parametrization::Direct;
    assert!(Network::new(c).is_err());
    let mut c = ModelConfig::upscale(3, 2, 2, 4, 1);
    c.parametrization = Parametrization::Direct;
    assert!(Network::new(c).is_err());
    assert!(Network::new(ModelConfig::upscale(3, 8, 1, 4, 1)).is_err());
    assert!(Network::new(ModelConfig::order_agnostic(0, 4, 4, 1)).is_err());
}

#[test]
fn bad_inputs_are_rejected() {
    let (net, params) = small(ModelConfig::order_agnostic(3, 4, 4, 1), 0);
    let mask = Mask::new(vec![false; 3]);
    assert!(net.forward(&params, &[0, 4, 0], &mask, 1, 1).is_err());
    assert!(net.forward(&params, &[0, 0], &mask, 1, 1).is_err());
    assert!(net.forward(&params, &[0, 0, 0], &mask, 2, 1).is_err());
    assert!(net.forward(&params[1..], &[0, 0, 0], &mask, 1, 1).is_err());
}
