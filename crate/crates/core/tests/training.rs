use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sirep::netspec::NetworkSpec;
use sirep::repcount::{densify, Scheme};
use sirep::tensor::{DType, Frames};
use sirep::train::*;
use sirep::{Error, Model};

fn clip(channels: usize, size: usize, len: usize, seed: u64) -> Frames {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = Frames::new(channels, size, size);
    for _ in 0..len {
        f.push((0..channels * size * size).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    }
    f
}

fn small_data() -> (Vec<LabeledVideo>, Vec<LabeledVideo>) {
    let split = SyntheticSplit { train_per_exercise: 2, train_steps: 24, held_out_per_exercise: 2, held_out_steps: 24 };
    synthetic_dataset(&BarVideoConfig::default(), &split, 5).unwrap()
}

fn small_config(scheme: Scheme, steps: usize) -> TrainConfig {
    TrainConfig { batch_size: 2, window_frames: 32, ..TrainConfig::new(scheme, 4, steps, 11) }
}

#[test]
fn cached_forward_equals_offline_inference() {
    let m = Model::init(tiny_counting_network(2).unwrap(), DType::F64, 2).unwrap();
    let c = clip(3, 16, 21, 3);
    assert_eq!(forward_cached(&m, &c).unwrap().probs, m.run_offline(&c, None).unwrap());
    let m32 = Model::init(tiny_counting_network(2).unwrap(), DType::F32, 2).unwrap();
    assert_eq!(forward_cached(&m32, &c).unwrap().probs, m32.run_offline(&c, None).unwrap());
}

#[test]
fn frozen_network_is_bit_identical_after_a_step() {
    let mut m = Model::init(NetworkSpec::toy(3, 6, 2), DType::F64, 1).unwrap();
    set_trainable_suffix(&mut m, 0).unwrap();
    let before = m.clone();
    let c = clip(3, 6, 6, 2);
    let mut opt = Sgd::new(0.5, 0.9);
    backward_and_step(&mut m, &c, &[0, 1, 0, 1, 1, 0], &LossSpec::uniform(2), &mut opt).unwrap();
    assert_eq!(m, before);
}

#[test]
fn only_the_trainable_suffix_changes() {
    let mut m = Model::init(tiny_counting_network(3).unwrap(), DType::F64, 1).unwrap();
    set_trainable_suffix(&mut m, 3).unwrap();
    let before = m.params_flat();
    let c = clip(3, 16, 16, 2);
    let mut opt = Sgd::new(0.1, 0.0);
    backward_and_step(&mut m, &c, &[0, 1, 2, 0], &LossSpec::uniform(3), &mut opt).unwrap();
    let after = m.params_flat();
    let n = m.layers().len();
    for (id, lo, hi) in param_ranges(&m) {
        let changed = before[lo..hi] != after[lo..hi];
        assert_eq!(changed, id + 3 >= n, "layer {id}");
    }
}

#[test]
fn one_step_reduces_loss_on_a_separable_task() {
    // class 1 frames are bright, class 0 frames dark
    let mut m = Model::init(NetworkSpec::toy(3, 6, 2), DType::F64, 3).unwrap();
    let mut c = Frames::new(3, 6, 6);
    let labels = [0, 1, 1, 0, 1, 0, 0, 1];
    for l in labels {
        c.push(vec![if l == 1 { 0.9 } else { 0.1 }; 108]).unwrap();
    }
    let spec = LossSpec::uniform(2);
    let mut opt = Sgd::new(0.05, 0.0);
    let before = backward_and_step(&mut m, &c, &labels, &spec, &mut opt).unwrap();
    let after = weighted_temporal_cross_entropy(&m.run_offline(&c, None).unwrap(), &labels, &spec).unwrap();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn zero_weight_class_gets_zero_gradient_by_perturbation() {
    let m = Model::init(NetworkSpec::toy(3, 6, 2), DType::F64, 5).unwrap();
    let c = clip(3, 6, 4, 6);
    // every step but one carries the silenced class 0
    let labels = [0, 0, 1, 0];
    let spec = LossSpec { weights: vec![0.0, 1.0] };
    let cache = forward_cached(&m, &c).unwrap();
    let (_, g) = loss_and_logit_grad(&cache.probs, &labels, &spec).unwrap();
    for t in [0, 1, 3] {
        assert!(g[t].iter().all(|v| *v == 0.0));
    }
    // perturbing a class-0 label does not move the loss
    let base = weighted_temporal_cross_entropy(&cache.probs, &labels, &spec).unwrap();
    let mut probs = cache.probs.clone();
    probs[0] = vec![0.999, 0.001];
    assert_eq!(weighted_temporal_cross_entropy(&probs, &labels, &spec).unwrap(), base);
}

#[test]
fn loss_is_invariant_to_uniform_weight_scaling() {
    let probs = vec![vec![0.2, 0.5, 0.3], vec![0.7, 0.2, 0.1], vec![0.3, 0.3, 0.4]];
    let labels = [1, 0, 2];
    let a = weighted_temporal_cross_entropy(&probs, &labels, &LossSpec { weights: vec![0.2, 1.0, 1.0] }).unwrap();
    let b = weighted_temporal_cross_entropy(&probs, &labels, &LossSpec { weights: vec![2.0, 10.0, 10.0] }).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn linear_head_gradient_is_tight() {
    let mut m = Model::init(NetworkSpec::toy(3, 6, 3), DType::F64, 9).unwrap();
    set_trainable_suffix(&mut m, 1).unwrap();
    let c = clip(3, 6, 7, 1);
    let r = gradient_check(&m, &c, &[0, 1, 2, 2, 1, 0, 1], &LossSpec::uniform(3), 1e-5, 200, 1).unwrap();
    assert!(r.checked > 0);
    assert!(r.max_relative_error <= 1e-6, "{r:?}");
}

#[test]
fn zero_input_bias_gradients_match_closed_form() {
    // A zero clip gives every step the same features and probabilities p,
    // so the classifier bias gradient is sum_t (p - onehot(y_t)) / T.
    let mut m = Model::init(NetworkSpec::toy(3, 6, 2), DType::F64, 2).unwrap();
    set_trainable_suffix(&mut m, 1).unwrap();
    let c = Frames::zeros(3, 4, 6, 6);
    let labels = [0, 1, 1, 1];
    let cache = forward_cached(&m, &c).unwrap();
    let (_, g) = loss_and_logit_grad(&cache.probs, &labels, &LossSpec::uniform(2)).unwrap();
    let grads = backward(&m, &cache, &g, &m.spec().trainable_flags()).unwrap();
    let p = &cache.probs[0];
    assert!(cache.probs.iter().all(|q| q == p));
    let expected = [(4.0 * p[0] - 1.0) / 4.0, (4.0 * p[1] - 3.0) / 4.0];
    for (a, b) in grads.classifier_bias.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15, "{a} vs {b}");
    }
}

#[test]
fn training_is_reproducible() {
    let (train, held) = small_data();
    let run = || {
        let mut m = Model::init(tiny_counting_network(2).unwrap(), DType::F64, 4).unwrap();
        let r = train_counting_head(&mut m, &train, &held, &small_config(Scheme::Halves, 3), |_| {}).unwrap();
        (r.log, params_hash(&m))
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    for (x, y) in a.iter().zip(&b) {
        assert!((x.loss - y.loss).abs() <= 1e-10);
    }
}

#[test]
fn zero_steps_leave_the_model_untouched_and_report_a_baseline() {
    let (train, held) = small_data();
    let mut m = Model::init(tiny_counting_network(3).unwrap(), DType::F64, 4).unwrap();
    let before = params_hash(&m);
    let r = train_counting_head(&mut m, &train, &held, &small_config(Scheme::MiddleEnd, 0), |_| {}).unwrap();
    assert!(r.log.is_empty());
    assert_eq!(params_hash(&m), before);
    assert!(r.eval.mape.is_finite());
    assert_eq!(r.eval.mape_per_exercise.len(), 2);
}

#[test]
fn reset_option_trains_windows_independently() {
    let (train, held) = small_data();
    let mut a = Model::init(tiny_counting_network(2).unwrap(), DType::F64, 4).unwrap();
    let mut b = a.clone();
    let cfg = small_config(Scheme::Halves, 2);
    let la = train_counting_head(&mut a, &train, &held, &cfg, |_| {}).unwrap().log;
    let reset = TrainConfig { reset_at_boundaries: true, ..cfg };
    let lb = train_counting_head(&mut b, &train, &held, &reset, |_| {}).unwrap().log;
    // the first window of a batch sees the same (empty) history either way,
    // later windows do not, so the losses differ
    assert_ne!(la[0].loss, lb[0].loss);
}

#[test]
fn grid_mismatch_reports_both_lengths() {
    let (mut train, held) = small_data();
    train[0].track.duration = Some(train[0].track.duration.unwrap() + 1.0);
    let mut m = Model::init(tiny_counting_network(2).unwrap(), DType::F64, 4).unwrap();
    let err = train_counting_head(&mut m, &train, &held, &small_config(Scheme::Halves, 1), |_| {}).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Contract(_)));
    assert!(msg.contains("28 label steps") && msg.contains("24 output steps"), "{msg}");
}

#[test]
fn k_larger_than_the_network_is_rejected() {
    let mut m = Model::init(NetworkSpec::toy(3, 6, 2), DType::F64, 1).unwrap();
    assert!(matches!(set_trainable_suffix(&mut m, 99), Err(Error::Config(_))));
}

#[test]
fn non_finite_gradient_aborts_with_layer_id_and_no_update() {
    let m = Model::init(NetworkSpec::toy(3, 6, 2), DType::F64, 1).unwrap();
    let c = clip(3, 6, 3, 1);
    let cache = forward_cached(&m, &c).unwrap();
    let before = m.clone();
    let bad = vec![vec![f64::NAN, 0.0]; 3];
    let err = backward(&m, &cache, &bad, &m.spec().trainable_flags()).unwrap_err();
    assert!(matches!(err, Error::Numeric { layer: Some(id), .. } if id == m.classifier_layer()), "{err}");
    assert_eq!(m, before);
}

#[test]
fn densified_labels_match_the_output_grid() {
    let (train, _) = small_data();
    let m = Model::init(tiny_counting_network(2).unwrap(), DType::F64, 4).unwrap();
    for v in &train {
        let l = video_labels(&m, v, Scheme::Halves).unwrap();
        assert_eq!(l.len(), m.spec().output_len(v.clip.len()));
        assert_eq!(l, densify(&v.track, Scheme::Halves, l.len()).unwrap());
    }
}
