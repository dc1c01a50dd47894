use super::*;
use crate::backbone::{BackboneModel, ModelConfig, Network};
use crate::model::{CountingModel, HashedModel, UniformModel};
use crate::process::scheduled_loglik;
use crate::rng::seeded;
use crate::upscale::TransitionSet;
use proptest::prelude::*;
use rand::seq::index::sample;
use rand::Rng as _;

fn random_schedule(rng: &mut crate::rng::Rng, dims: usize, budget: usize) -> Schedule {
    let mut cuts: Vec<u32> = sample(rng, dims - 1, budget - 1).into_iter().map(|c| c as u32 + 1).collect();
    cuts.sort_unstable();
    cuts.push(dims as u32);
    Schedule::new(cuts, 0.0).unwrap()
}

fn plan(permutation: Permutation, schedule: Schedule) -> CodingPlan {
    CodingPlan { permutation, schedules: vec![schedule], precision: DEFAULT_PRECISION, model_hash: 42 }
}

#[test]
fn random_network_round_trips_a_thousand_inputs() {
    let net = Network::new(ModelConfig::order_agnostic(8, 16, 8, 1)).unwrap();
    let params: Vec<f32> = net.init_with_head(&mut seeded(1), 1.0);
    let model = BackboneModel::new(&net, &params);
    let variant = net.config().variant().unwrap();
    let mut rng = seeded(2);
    for _ in 0..1000 {
        let x: Vec<u32> = (0..8).map(|_| rng.random_range(0..16)).collect();
        let budget = rng.random_range(1..=8);
        let p = plan(sample_permutation(&mut rng, 8).unwrap(), random_schedule(&mut rng, 8, budget));
        let (file, _) = compress(&x, &model, &variant, &p).unwrap();
        let file = CompressedFile::from_bytes(&file.to_bytes()).unwrap();
        assert_eq!(decompress(&file, &model, &variant, 42).unwrap().0, x);
    }
}

#[test]
fn payload_is_within_the_quantization_bound() {
    let d = 16;
    let model = HashedModel { dims: d, classes: 256, seed: 5, branch: None };
    let variant = Variant::order_agnostic();
    let mut rng = seeded(3);
    for budget in [16, 4, 1] {
        for _ in 0..20 {
            let x: Vec<u32> = (0..d).map(|_| rng.random_range(0..256)).collect();
            let sigma = sample_permutation(&mut rng, d).unwrap();
            let schedule = random_schedule(&mut rng, d, budget);
            let ideal = -scheduled_loglik(&x, &model, &variant, &sigma, std::slice::from_ref(&schedule)).unwrap();
            let (file, report) = compress(&x, &model, &variant, &plan(sigma, schedule)).unwrap();
            assert!((report.ideal_bits - ideal).abs() < 1e-9);
            let bits = 8.0 * file.payload.len() as f64;
            assert!(bits >= ideal && bits <= ideal + d as f64 * 0.002 + 64.0, "{bits} vs {ideal}");
        }
    }
}

#[test]
fn network_calls_equal_budget_times_stages() {
    let t = TransitionSet::new(27, 3).unwrap();
    let variant = Variant::Upscale(t);
    let model = CountingModel::new(HashedModel { dims: 6, classes: 27, seed: 1, branch: Some(3) });
    let x = vec![26, 0, 13, 5, 9, 1];
    let p = plan(Permutation::identity(6), Schedule::new(vec![2, 3, 6], 0.0).unwrap());
    let (file, report) = compress(&x, &model, &variant, &p).unwrap();
    assert_eq!(report.network_calls, 9);
    model.reset();
    let (back, report) = decompress(&file, &model, &variant, 42).unwrap();
    assert_eq!(back, x);
    assert_eq!(report.network_calls, 9);
    assert_eq!(model.calls(), 9);
}

#[test]
fn foreign_model_hash_is_refused() {
    let model = UniformModel { dims: 3, classes: 4 };
    let variant = Variant::order_agnostic();
    let (file, _) =
        compress(&[1, 2, 3], &model, &variant, &plan(Permutation::identity(3), Schedule::sequential(3))).unwrap();
    assert!(matches!(decompress(&file, &model, &variant, 43), Err(Error::ModelMismatch { file: 42, model: 43 })));
}

#[test]
fn payload_is_deterministic() {
    let model = HashedModel { dims: 5, classes: 9, seed: 2, branch: None };
    let variant = Variant::order_agnostic();
    let p = plan(Permutation::from_ranks(vec![3, 1, 5, 2, 4]).unwrap(), Schedule::new(vec![2, 5], 0.0).unwrap());
    let a = compress(&[8, 0, 4, 4, 1], &model, &variant, &p).unwrap().0;
    let b = compress(&[8, 0, 4, 4, 1], &model, &variant, &p).unwrap().0;
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn many_records_share_one_stream() {
    let t = TransitionSet::new(16, 4).unwrap();
    let variant = Variant::Upscale(t);
    let model = HashedModel { dims: 4, classes: 16, seed: 9, branch: None };
    let mut rng = seeded(4);
    let records: Vec<Vec<u32>> = (0..50).map(|_| (0..4).map(|_| rng.random_range(0..16)).collect()).collect();
    let p = CodingPlan {
        permutation: sample_permutation(&mut rng, 4).unwrap(),
        schedules: vec![Schedule::new(vec![1, 4], 0.0).unwrap(), Schedule::new(vec![3, 4], 0.0).unwrap()],
        precision: 14,
        model_hash: 7,
    };
    let (file, enc) = compress_many(&records, &model, &variant, &p).unwrap();
    let (back, dec) = decompress_many(&file, &model, &variant, 7, 50).unwrap();
    assert_eq!(back, records);
    assert_eq!(enc.network_calls, 50 * 2 * 2);
    assert!((enc.ideal_bits - dec.ideal_bits).abs() < 1e-9);
    assert!(decompress_many(&file, &model, &variant, 7, 49).is_err());
}

#[test]
fn corrupt_payload_is_detected() {
    let model = HashedModel { dims: 12, classes: 32, seed: 4, branch: None };
    let variant = Variant::order_agnostic();
    let x: Vec<u32> = (0..12).map(|i| (i * 7 % 32) as u32).collect();
    let (mut file, _) =
        compress(&x, &model, &variant, &plan(Permutation::identity(12), Schedule::sequential(12))).unwrap();
    file.payload.truncate(file.payload.len() - 2);
    assert!(decompress(&file, &model, &variant, 42).is_err());
}

#[test]
fn one_candidate_is_returned_as_is() {
    let model = HashedModel { dims: 5, classes: 4, seed: 1, branch: None };
    let batch = vec![vec![0, 1, 2, 3, 0]];
    let (sigma, scores) = select_order(&model, &Variant::order_agnostic(), &batch, 1, &mut seeded(10)).unwrap();
    assert_eq!(sigma, sample_permutation(&mut seeded(10), 5).unwrap());
    assert_eq!(scores.len(), 1);
}

#[test]
fn ties_keep_the_first_candidate() {
    let model = UniformModel { dims: 6, classes: 3 };
    let batch = vec![vec![0, 1, 2, 0, 1, 2], vec![2; 6]];
    let (sigma, scores) = select_order(&model, &Variant::order_agnostic(), &batch, 8, &mut seeded(11)).unwrap();
    assert_eq!(sigma, sample_permutation(&mut seeded(11), 6).unwrap());
    assert!(scores.iter().all(|&s| (s - scores[0]).abs() < 1e-12));
    assert!(select_order(&model, &Variant::order_agnostic(), &batch, 0, &mut seeded(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn compression_is_lossless(
        seed in any::<u64>(),
        dims in 1usize..10,
        classes in 2usize..40,
        branching in prop::option::of(2usize..5),
        direct in any::<bool>(),
        precision in 8u32..=16,
    ) {
        let mut rng = seeded(seed);
        let (variant, branch) = match branching {
            Some(b) => {
                let t = TransitionSet::new(classes, b).unwrap();
                let head = (direct && t.stages() >= 2).then_some(b);
                (Variant::Upscale(t), head)
            }
            None => (Variant::order_agnostic(), None),
        };
        prop_assume!(classes <= 1 << precision);
        let model = HashedModel { dims, classes, seed, branch };
        let x: Vec<u32> = (0..dims).map(|_| rng.random_range(0..classes as u32)).collect();
        let budget = rng.random_range(1..=dims);
        let p = CodingPlan {
            permutation: sample_permutation(&mut rng, dims).unwrap(),
            schedules: vec![random_schedule(&mut rng, dims, budget)],
            precision,
            model_hash: seed,
        };
        let (file, enc) = compress(&x, &model, &variant, &p).unwrap();
        let file = CompressedFile::from_bytes(&file.to_bytes()).unwrap();
        let (back, dec) = decompress(&file, &model, &variant, seed).unwrap();
        prop_assert_eq!(back, x);
        prop_assert_eq!(enc.network_calls, budget * variant.stages());
        prop_assert_eq!(dec.network_calls, enc.network_calls);
    }
}
