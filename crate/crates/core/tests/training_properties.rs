mod common;

use common::*;
use dfa_core::alignment::{batch_stats, per_sample_cosine, SignalPair};
use dfa_core::layers::{Activation, Mode};
use dfa_core::tensor::{Prng, Tensor};
use dfa_core::training::{
    bp_backward, dfa_backward, loss_and_error, one_hot, Algorithm, GradientSet, LayerSpec, Network, TrainConfig, Trainer,
};
use proptest::prelude::*;

fn small_config(algorithm: Algorithm, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        algorithm,
        learning_rate: 0.05,
        epochs: 2,
        batch_size: 16,
        probe_batch: 16,
        ..TrainConfig::default()
    }
}

fn trainer(algorithm: Algorithm, seed: u64) -> Trainer<f64> {
    Trainer::build(small_config(algorithm, seed), &[8], &mlp(&[12, 10], 4, Activation::Tanh)).unwrap()
}

fn grads_for(net: &mut Network<f64>, x: &Tensor<f64>, y: &[usize], algorithm: Algorithm, seed: u64) -> GradientSet<f64> {
    let logits = net.forward(x, Mode::Train, None).unwrap();
    let (_, e) = loss_and_error(&logits, &one_hot(y, net.classes()).unwrap()).unwrap();
    match algorithm {
        Algorithm::Bp => bp_backward(net, &e).unwrap(),
        Algorithm::Dfa => dfa_backward(net, &e, &feedback_for(net, seed)).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn duplicated_batch_leaves_mean_gradients_unchanged(seed in 0u64..1000, batch in 2usize..9, dfa in any::<bool>()) {
        let algorithm = if dfa { Algorithm::Dfa } else { Algorithm::Bp };
        let mut rng = Prng::new(seed);
        let mut net = Network::<f64>::build(&[6], &mlp(&[7, 5], 3, Activation::Tanh), &mut rng).unwrap();
        let x = gaussian_batch(&mut rng, &[batch, 6]);
        let y = labels(&mut rng, batch, 3);
        let mut doubled = x.data().to_vec();
        doubled.extend_from_slice(x.data());
        let x2 = Tensor::new(vec![2 * batch, 6], doubled).unwrap();
        let y2: Vec<usize> = y.iter().chain(&y).copied().collect();
        let g1 = grads_for(&mut net, &x, &y, algorithm, seed);
        let g2 = grads_for(&mut net, &x2, &y2, algorithm, seed);
        for (a, b) in g1.tensors().zip(g2.tensors()) {
            for (p, q) in a.data().iter().zip(b.data()) {
                prop_assert!((p - q).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cosine_is_invariant_to_positive_scaling(seed in 0u64..1000, a in 0.01f64..100.0, b in 0.01f64..100.0) {
        let mut rng = Prng::new(seed);
        let dfa = gaussian_batch(&mut rng, &[5, 9]);
        let bp = gaussian_batch(&mut rng, &[5, 9]);
        let base = per_sample_cosine(&SignalPair { dfa: dfa.clone(), bp: bp.clone() }).unwrap();
        let (mut sd, mut sb) = (dfa, bp);
        sd.scale(a);
        sb.scale(b);
        let scaled = per_sample_cosine(&SignalPair { dfa: sd, bp: sb }).unwrap();
        for (p, q) in base.values.iter().zip(&scaled.values) {
            prop_assert!((p - q).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(p));
        }
    }

    #[test]
    fn masked_neurons_never_move(seed in 0u64..500, trainable in 0usize..=10, dfa in any::<bool>()) {
        let mut cfg = small_config(if dfa { Algorithm::Dfa } else { Algorithm::Bp }, seed);
        cfg.mask_layer = Some(2);
        cfg.bottleneck = Some(trainable);
        let mut t = Trainer::<f64>::build(cfg, &[8], &mlp(&[12, 10], 4, Activation::Tanh)).unwrap();
        let mask = t.mask().unwrap().clone();
        let before = t.network().block(1).clone();
        let data = clustered_dataset(48, &[1, 1, 8], 4, seed);
        t.train_epoch(&data, None).unwrap();
        let after = t.network().block(1);
        for &u in &mask.neurons {
            prop_assert_eq!(before.weight().row(u), after.weight().row(u));
            prop_assert_eq!(before.bias().data()[u], after.bias().data()[u]);
        }
    }
}

#[test]
fn random_signals_have_null_alignment() {
    let mut rng = Prng::new(77);
    let d = 400;
    let pair = SignalPair {
        dfa: gaussian_batch(&mut rng, &[2000, d]),
        bp: gaussian_batch(&mut rng, &[2000, d]),
    };
    let (mean, std) = batch_stats(&per_sample_cosine(&pair).unwrap().values).unwrap();
    let sd = 1.0 / (d as f64).sqrt();
    assert!(mean.abs() < 4.0 * sd / (2000f64).sqrt(), "{mean}");
    assert!((std / sd - 1.0).abs() < 0.1, "{std} vs {sd}");
}

#[test]
fn full_width_bottleneck_equals_unmasked_training() {
    let data = clustered_dataset(64, &[1, 1, 8], 4, 1);
    let mut masked_cfg = small_config(Algorithm::Dfa, 3);
    masked_cfg.mask_layer = Some(2);
    masked_cfg.bottleneck = Some(10);
    let mut masked = Trainer::<f64>::build(masked_cfg, &[8], &mlp(&[12, 10], 4, Activation::Tanh)).unwrap();
    let mut plain = trainer(Algorithm::Dfa, 3);
    for _ in 0..2 {
        masked.train_epoch(&data, None).unwrap();
        plain.train_epoch(&data, None).unwrap();
    }
    for (a, b) in masked.network().blocks().zip(plain.network().blocks()) {
        assert_eq!(a.weight(), b.weight());
        assert_eq!(a.bias(), b.bias());
    }
}

#[test]
fn zero_bottleneck_freezes_the_layer() {
    let data = clustered_dataset(64, &[1, 1, 8], 4, 2);
    let mut cfg = small_config(Algorithm::Dfa, 4);
    cfg.mask_layer = Some(2);
    cfg.bottleneck = Some(0);
    let mut t = Trainer::<f64>::build(cfg, &[8], &mlp(&[12, 10], 4, Activation::Tanh)).unwrap();
    let before = t.network().block(1).weight().clone();
    t.train_epoch(&data, None).unwrap();
    assert_eq!(&before, t.network().block(1).weight());
    assert_ne!(t.network().block(0).weight(), trainer(Algorithm::Dfa, 4).network().block(0).weight());
}

#[test]
fn feedback_matrix_is_fixed_during_training() {
    let data = clustered_dataset(64, &[1, 1, 8], 4, 3);
    let mut t = trainer(Algorithm::Dfa, 9);
    let digest = t.feedback().unwrap().digest();
    for _ in 0..3 {
        t.train_epoch(&data, None).unwrap();
    }
    assert_eq!(t.feedback().unwrap().digest(), digest);
}

#[test]
fn bp_and_dfa_share_initialization() {
    let mut rng = Prng::new(0);
    let x = gaussian_batch(&mut rng, &[16, 8]);
    let mut bp = trainer(Algorithm::Bp, 21).into_network();
    let mut dfa = trainer(Algorithm::Dfa, 21).into_network();
    assert_eq!(bp.forward(&x, Mode::Eval, None).unwrap(), dfa.forward(&x, Mode::Eval, None).unwrap());
}

#[test]
fn same_seed_gives_bitwise_identical_parameters() {
    let data = clustered_dataset(80, &[1, 1, 8], 4, 5);
    let specs = [
        LayerSpec::fc(12, Activation::Tanh).with_dropout(0.2),
        LayerSpec::fc(10, Activation::Relu).with_batchnorm(true),
        LayerSpec::fc(4, Activation::Identity),
    ];
    let run = || {
        let mut t = Trainer::<f64>::build(small_config(Algorithm::Dfa, 13), &[8], &specs).unwrap();
        for _ in 0..2 {
            t.train_epoch(&data, None).unwrap();
        }
        t.into_network()
    };
    let (a, b) = (run(), run());
    for (p, q) in a.blocks().zip(b.blocks()) {
        assert_eq!(p.weight(), q.weight());
        assert_eq!(p.bias(), q.bias());
        let (bp, bq) = (p.batchnorm(), q.batchnorm());
        assert_eq!(bp.map(|b| b.running_mean().to_vec()), bq.map(|b| b.running_mean().to_vec()));
    }
}

#[test]
fn dfa_tracks_bp_on_separable_clusters() {
    let data = clustered_dataset(400, &[1, 1, 8], 4, 6);
    let acc = |algorithm| {
        let mut t = trainer(algorithm, 2);
        (0..100).map(|_| t.train_epoch(&data, None).unwrap().train_accuracy).last().unwrap()
    };
    let (dfa, bp) = (acc(Algorithm::Dfa), acc(Algorithm::Bp));
    assert!(dfa > 0.8 && dfa > bp - 0.05, "dfa {dfa}, bp {bp}");
}

#[test]
fn batch_size_one_trains_without_batchnorm() {
    let data = clustered_dataset(8, &[1, 1, 8], 4, 7);
    let mut cfg = small_config(Algorithm::Dfa, 1);
    cfg.batch_size = 1;
    let mut t = Trainer::<f64>::build(cfg, &[8], &mlp(&[12, 10], 4, Activation::Tanh)).unwrap();
    let before = t.network().block(0).weight().clone();
    let m = t.train_epoch(&data, None).unwrap();
    assert_ne!(&before, t.network().block(0).weight());
    assert!(m.train_loss.is_finite());
}
