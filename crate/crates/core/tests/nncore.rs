mod common;

use driftpatch::nncore::{
    self, checkpoint, Activation, LayerSpec, Mode, Network, OptimizerKind, OptimizerState, Padding, TapPoint,
    Tensor,
};
use driftpatch::seed;
use proptest::prelude::*;
use rand::Rng;

fn dense_net(widths: &[usize], classes: usize, input: usize, seed: u64) -> Network {
    let mut layers = vec![LayerSpec::input(&[input])];
    for &w in widths {
        layers.push(LayerSpec::dense(w, Activation::Relu));
    }
    layers.push(LayerSpec::softmax(classes));
    Network::new(layers, seed).unwrap()
}

fn small_cnn(seed: u64) -> Network {
    Network::new(
        vec![
            LayerSpec::input(&[2, 7, 7]),
            LayerSpec::conv(3, 3, 1, Padding::Valid),
            LayerSpec::conv(4, 3, 1, Padding::Same),
            LayerSpec::max_pool(2, 2),
            LayerSpec::flatten(),
            LayerSpec::softmax(3),
        ],
        seed,
    )
    .unwrap()
}

fn random_batch(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn table5_cnn() -> Network {
    Network::new(
        vec![
            LayerSpec::input(&[1, 28, 28]),
            LayerSpec::conv(32, 3, 1, Padding::Valid),
            LayerSpec::conv(64, 3, 1, Padding::Valid),
            LayerSpec::max_pool(2, 2),
            LayerSpec::dropout(0.25),
            LayerSpec::flatten(),
            LayerSpec::dense(128, Activation::Relu),
            LayerSpec::dropout(0.5),
            LayerSpec::softmax(10),
        ],
        1,
    )
    .unwrap()
}

#[test]
fn zero_logits_give_uniform_probabilities() {
    let mut net = dense_net(&[], 10, 4, 0);
    let p = net.params_mut(1).unwrap();
    p.weights.data_mut().fill(0.0);
    let (probs, _) = net
        .forward(&Tensor::zeros(&[3, 4]), Mode::Infer, &mut seed::rng(0))
        .unwrap();
    for v in probs.data() {
        assert!((v - 0.1).abs() < 1e-6);
    }
}

#[test]
fn hand_set_dense_layer_matches_arithmetic() {
    let mut net = dense_net(&[2], 2, 2, 0);
    let p = net.params_mut(1).unwrap();
    // weights stored [inputs, units]
    p.weights.data_mut().copy_from_slice(&[1.0, -1.0, 2.0, 0.5]);
    p.bias.data_mut().copy_from_slice(&[0.5, -3.0]);
    let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
    let (_, trace) = net.forward(&x, Mode::Infer, &mut seed::rng(0)).unwrap();
    // z0 = 1*1 + 2*2 + 0.5 = 5.5 ; z1 = 1*-1 + 2*0.5 - 3 = -3
    assert_eq!(trace.pre(1).data(), &[5.5, -3.0]);
    assert_eq!(trace.post(1).data(), &[5.5, 0.0]);
}

#[test]
fn forward_rejects_wrong_shape() {
    let net = dense_net(&[3], 2, 4, 0);
    assert!(net
        .forward(&Tensor::zeros(&[2, 5]), Mode::Infer, &mut seed::rng(0))
        .is_err());
}

#[test]
fn confident_correct_sample_has_zero_output_gradient() {
    let mut net = dense_net(&[], 2, 2, 0);
    let p = net.params_mut(1).unwrap();
    p.weights.data_mut().copy_from_slice(&[100.0, -100.0, 0.0, 0.0]);
    let x = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let (probs, trace) = net.forward(&x, Mode::Train, &mut seed::rng(0)).unwrap();
    assert_eq!(probs.data()[0], 1.0);
    let g = net.backward(&trace, &nncore::one_hot(&[0], 2).unwrap()).unwrap();
    let l = g.layer(1).unwrap();
    assert!(l.weights.data().iter().all(|&v| v == 0.0));
    assert!(l.bias.data().iter().all(|&v| v == 0.0));
    assert_eq!(g.loss, 0.0);
}

#[test]
fn dense_gradients_match_finite_differences() {
    let mut rng = seed::rng(11);
    let net = dense_net(&[6, 5], 3, 4, 3);
    let x = random_batch(&[5, 4], &mut rng);
    let labels = [0, 1, 2, 1, 0];
    let errs = common::gradcheck::sampled_relative_errors(&net, &x, &labels, 20, &mut rng);
    for e in errs {
        assert!(e < 1e-3, "relative error {e}");
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = seed::rng(12);
    let net = small_cnn(4);
    let x = random_batch(&[3, 2, 7, 7], &mut rng);
    let labels = [0, 2, 1];
    let errs = common::gradcheck::sampled_relative_errors(&net, &x, &labels, 60, &mut rng);
    let ok = errs.iter().filter(|&&e| e < 1e-3).count();
    assert!(
        ok * 100 >= errs.len() * 95,
        "{ok}/{} within tolerance",
        errs.len()
    );
}

#[test]
fn frozen_layer_gets_no_gradient_and_stays_fixed() {
    let mut net = dense_net(&[4, 4], 2, 3, 5);
    net.freeze_prefix(1).unwrap();
    let before = net.params(1).unwrap().clone();
    let mut rng = seed::rng(1);
    let x = random_batch(&[8, 3], &mut rng);
    let (_, trace) = net.forward(&x, Mode::Train, &mut rng).unwrap();
    let g = net
        .backward(&trace, &nncore::one_hot(&[0, 1, 0, 1, 0, 1, 0, 1], 2).unwrap())
        .unwrap();
    assert!(g.layer(1).is_none());
    assert!(g.layer(2).is_some());
    let mut opt = OptimizerState::new(OptimizerKind::default());
    nncore::train_epochs(&mut net, &x, &[0, 1, 0, 1, 0, 1, 0, 1], 3, 2, &mut opt, &mut rng).unwrap();
    assert_eq!(net.params(1).unwrap(), &before);
}

#[test]
fn freeze_through_last_layer_makes_training_a_no_op() {
    let mut net = dense_net(&[4], 2, 3, 5);
    net.freeze_prefix(2).unwrap();
    let before = net.clone();
    let mut rng = seed::rng(1);
    let x = random_batch(&[6, 3], &mut rng);
    let mut opt = OptimizerState::new(OptimizerKind::default());
    nncore::train_epochs(&mut net, &x, &[0, 1, 0, 1, 0, 1], 2, 3, &mut opt, &mut rng).unwrap();
    assert_eq!(net, before);
}

#[test]
fn freeze_through_input_matches_unfrozen_training() {
    let mut a = dense_net(&[4], 2, 3, 5);
    let mut b = a.clone();
    b.freeze_prefix(0).unwrap();
    let x = random_batch(&[6, 3], &mut seed::rng(2));
    let labels = [0, 1, 0, 1, 1, 1];
    for net in [&mut a, &mut b] {
        let mut opt = OptimizerState::new(OptimizerKind::default());
        nncore::train_epochs(net, &x, &labels, 2, 3, &mut opt, &mut seed::rng(3)).unwrap();
    }
    assert_eq!(a.all_params(), b.all_params());
}

#[test]
fn cnn_frozen_through_pool_trains_only_the_tail() {
    let mut net = table5_cnn();
    let pool = net.layer_index("pool1").unwrap();
    net.freeze_prefix(pool).unwrap();
    let before = net.clone();
    let mut rng = seed::rng(4);
    let x = random_batch(&[4, 1, 28, 28], &mut rng);
    let mut opt = OptimizerState::new(OptimizerKind::default());
    nncore::train_epochs(&mut net, &x, &[1, 2, 3, 4], 1, 4, &mut opt, &mut rng).unwrap();
    let names = net.layer_names();
    for (i, name) in names.iter().enumerate() {
        let changed = net.params(i) != before.params(i);
        let expect = name == "fc1" || name == "softmax";
        assert_eq!(changed, expect, "layer {}", name);
    }
}

#[test]
fn sgd_update_rule() {
    let mut net = dense_net(&[], 2, 1, 0);
    net.params_mut(1)
        .unwrap()
        .weights
        .data_mut()
        .copy_from_slice(&[1.0, 1.0]);
    let grads = nncore::Gradients::from_layers(
        0.0,
        vec![
            None,
            Some(nncore::LayerParams {
                weights: Tensor::new(vec![1, 2], vec![2.0, 0.0]).unwrap(),
                bias: Tensor::zeros(&[2]),
            }),
        ],
    );
    let mut opt = OptimizerState::new(OptimizerKind::Sgd {
        lr: 0.1,
        momentum: 0.0,
    });
    nncore::step(&mut net, &grads, &mut opt).unwrap();
    let w = net.params(1).unwrap().weights.data();
    assert!((w[0] - 0.8).abs() < 1e-7);
    assert_eq!(w[1], 1.0);
}

#[test]
fn zero_gradient_sgd_leaves_params() {
    let mut net = dense_net(&[3], 2, 2, 0);
    let before = net.clone();
    let layers = net
        .all_params()
        .iter()
        .map(|p| {
            p.as_ref().map(|p| nncore::LayerParams {
                weights: Tensor::zeros(p.weights.shape()),
                bias: Tensor::zeros(p.bias.shape()),
            })
        })
        .collect();
    let grads = nncore::Gradients::from_layers(0.0, layers);
    let mut opt = OptimizerState::new(OptimizerKind::Sgd {
        lr: 0.1,
        momentum: 0.0,
    });
    nncore::step(&mut net, &grads, &mut opt).unwrap();
    assert_eq!(net, before);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut net = dense_net(&[], 2, 1, 0);
    let w0 = net.params(1).unwrap().weights.data()[0];
    let grads = nncore::Gradients::from_layers(
        0.0,
        vec![
            None,
            Some(nncore::LayerParams {
                weights: Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap(),
                bias: Tensor::zeros(&[2]),
            }),
        ],
    );
    let mut opt = OptimizerState::new(OptimizerKind::default());
    nncore::step(&mut net, &grads, &mut opt).unwrap();
    let dw = (net.params(1).unwrap().weights.data()[0] - w0).abs();
    // m_hat = g, v_hat = g^2, so |dw| = lr * g / (g + eps).
    let expect = 1e-3 * 1.0 / (1.0 + 1e-8);
    assert!((dw - expect).abs() < 1e-7, "{dw}");
}

#[test]
fn training_separates_linear_toy_set() {
    let mut rng = seed::rng(21);
    let n = 100;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let a: f32 = rng.gen_range(-1.0..1.0);
        let b: f32 = rng.gen_range(-1.0..1.0);
        let l = (a + b > 0.0) as u32;
        let shift = if l == 1 { 0.2 } else { -0.2 };
        data.extend_from_slice(&[a + shift, b + shift]);
        labels.push(l);
    }
    let x = Tensor::new(vec![n, 2], data).unwrap();
    let mut net = dense_net(&[16], 2, 2, 7);
    let mut opt = OptimizerState::new(OptimizerKind::Adam {
        lr: 0.05,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    });
    let report = nncore::train_epochs(&mut net, &x, &labels, 10, 10, &mut opt, &mut rng).unwrap();
    assert_eq!(report.epoch_losses.len(), 10);
    assert_eq!(nncore::accuracy(&net, &x, &labels).unwrap(), 1.0);
}

#[test]
fn zero_epochs_and_empty_data_rejected() {
    let mut net = dense_net(&[2], 2, 2, 0);
    let mut opt = OptimizerState::new(OptimizerKind::default());
    let x = Tensor::zeros(&[2, 2]);
    assert!(nncore::train_epochs(&mut net, &x, &[0, 1], 0, 1, &mut opt, &mut seed::rng(0)).is_err());
    assert!(nncore::train_epochs(&mut net, &x, &[], 1, 1, &mut opt, &mut seed::rng(0)).is_err());
}

#[test]
fn softmax_tap_equals_forward_output() {
    let net = small_cnn(3);
    let x = random_batch(&[4, 2, 7, 7], &mut seed::rng(3));
    let (probs, _) = net.forward(&x, Mode::Infer, &mut seed::rng(0)).unwrap();
    let tap = nncore::activation_at(&net, 5, &x, TapPoint::PostActivation).unwrap();
    assert_eq!(tap, probs);
}

#[test]
fn relu_tap_on_negative_preactivations() {
    let mut net = dense_net(&[3], 2, 2, 0);
    let p = net.params_mut(1).unwrap();
    p.weights.data_mut().fill(0.0);
    p.bias.data_mut().copy_from_slice(&[-1.0, -2.0, -0.5]);
    let x = Tensor::zeros(&[2, 2]);
    let post = net.activation_at(1, &x, TapPoint::PostActivation).unwrap();
    let pre = net.activation_at(1, &x, TapPoint::PreActivation).unwrap();
    assert!(post.data().iter().all(|&v| v == 0.0));
    assert!(pre.data().iter().all(|&v| v != 0.0));
}

#[test]
fn cnn_pool_tap_shape() {
    let net = table5_cnn();
    let x = Tensor::zeros(&[3, 1, 28, 28]);
    let pool = net.layer_index("pool1").unwrap();
    let t = net.activation_at(pool, &x, TapPoint::PostActivation).unwrap();
    // 28 -> 26 -> 24 after the two valid convolutions, 12 after pooling.
    assert_eq!(t.shape(), &[3, 64 * 12 * 12]);
    // Taps on dropout/flatten resolve to the pooling output.
    let flat = net.layer_index("flatten").unwrap();
    assert_eq!(net.activation_at(flat, &x, TapPoint::PreActivation).unwrap(), t);
    assert!(net.activation_at(99, &x, TapPoint::PreActivation).is_err());
}

#[test]
fn checkpoint_round_trip_and_version_check() {
    let mut net = table5_cnn();
    net.freeze_prefix(3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.nnpk");
    checkpoint::save_checkpoint(&net, &path).unwrap();
    let back = checkpoint::load_checkpoint(&path).unwrap();
    assert_eq!(back, net);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
    assert!(checkpoint::decode(&bytes).is_err());
    assert!(checkpoint::decode(&bytes[..10]).is_err());
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut net = small_cnn(9);
        let x = random_batch(&[10, 2, 7, 7], &mut seed::rng(5));
        let labels: Vec<u32> = (0..10).map(|i| i % 3).collect();
        let mut opt = OptimizerState::new(OptimizerKind::default());
        nncore::train_epochs(&mut net, &x, &labels, 2, 4, &mut opt, &mut seed::rng(6)).unwrap();
        net
    };
    assert_eq!(run(), run());
}

fn arb_dense_spec() -> impl Strategy<Value = (Vec<usize>, usize, usize, u64)> {
    (
        prop::collection::vec(1usize..12, 0..3),
        2usize..6,
        1usize..8,
        any::<u64>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions((widths, classes, input, s) in arb_dense_spec(), scale in 0.1f32..20.0) {
        let net = dense_net(&widths, classes, input, s);
        let mut rng = seed::rng(s);
        let n = 5 * input;
        let x = Tensor::new(vec![5, input], (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap();
        let (probs, _) = net.forward(&x, Mode::Infer, &mut rng).unwrap();
        for r in 0..5 {
            let row = probs.row(r);
            let sum: f32 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-5);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn inference_dropout_is_identity((widths, classes, input, s) in arb_dense_spec(), rate in 0.0f32..0.95) {
        let with = {
            let mut layers = vec![LayerSpec::input(&[input]), LayerSpec::dropout(rate)];
            for &w in &widths {
                layers.push(LayerSpec::dense(w, Activation::Relu));
                layers.push(LayerSpec::dropout(rate));
            }
            layers.push(LayerSpec::softmax(classes));
            Network::new(layers, s).unwrap()
        };
        let without = {
            let layers: Vec<LayerSpec> = with.layers().iter().filter(|l| !l.is_passthrough()).cloned().collect();
            let params = with.all_params().iter().zip(with.layers()).filter(|(_, l)| !l.is_passthrough()).map(|(p, _)| p.clone()).collect();
            let mask = vec![true; layers.len()];
            Network::from_parts(layers, params, mask, s).unwrap()
        };
        let mut rng = seed::rng(s);
        let x = random_batch(&[4, input], &mut rng);
        let (a, trace) = with.forward(&x, Mode::Infer, &mut rng).unwrap();
        let (b, _) = without.forward(&x, Mode::Infer, &mut rng).unwrap();
        prop_assert_eq!(a, b);
        for i in 0..trace.len() {
            if let Some(m) = trace.dropout_mask(i) {
                prop_assert!(m.iter().all(|&v| v == 1.0));
            }
        }
    }

    #[test]
    fn post_tap_is_relu_of_pre_tap((widths, classes, input, s) in arb_dense_spec()) {
        prop_assume!(!widths.is_empty());
        let net = dense_net(&widths, classes, input, s);
        let x = random_batch(&[3, input], &mut seed::rng(s));
        for i in 1..=widths.len() {
            let pre = net.activation_at(i, &x, TapPoint::PreActivation).unwrap();
            let post = net.activation_at(i, &x, TapPoint::PostActivation).unwrap();
            for (a, b) in pre.data().iter().zip(post.data()) {
                prop_assert_eq!(a.max(0.0), *b);
            }
        }
    }

    #[test]
    fn frozen_params_survive_training((widths, classes, input, s) in arb_dense_spec(), steps in 1usize..4) {
        prop_assume!(!widths.is_empty());
        let mut net = dense_net(&widths, classes, input, s);
        let through = 1 + (s as usize % widths.len());
        net.freeze_prefix(through).unwrap();
        let before: Vec<_> = net.all_params()[..=through].to_vec();
        let mut rng = seed::rng(s ^ 1);
        let x = random_batch(&[6, input], &mut rng);
        let labels: Vec<u32> = (0..6).map(|i| (i % classes) as u32).collect();
        let mut opt = OptimizerState::new(OptimizerKind::default());
        nncore::train_epochs(&mut net, &x, &labels, steps, 2, &mut opt, &mut rng).unwrap();
        prop_assert_eq!(&net.all_params()[..=through], &before[..]);
    }

    #[test]
    fn gradients_match_reference_on_random_nets((widths, classes, input, s) in arb_dense_spec()) {
        let net = dense_net(&widths, classes, input, s);
        let mut rng = seed::rng(s);
        let x = random_batch(&[4, input], &mut rng);
        let labels: Vec<u32> = (0..4).map(|_| rng.gen_range(0..classes as u32)).collect();
        let probes = common::gradcheck::probe_gradients(&net, &x, &labels, 20, &mut rng);
        let smooth: Vec<f64> = probes.iter().filter(|p| !p.kink).map(|p| p.relative_error).collect();
        let ok = smooth.iter().filter(|&&e| e < 1e-3).count();
        prop_assert!(ok * 100 >= smooth.len() * 95, "{}/{} within tolerance: {:?}", ok, smooth.len(), smooth);
    }
}
