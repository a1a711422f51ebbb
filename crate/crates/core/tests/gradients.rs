use lungnet::model::{build_hybrid, ModelSpec};
use lungnet::nn::gradcheck::{check_layer, layer_cases, max_rel_err, FD_STEP};
use lungnet::nn::{cross_entropy_with_labels, Mode, Network, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_layer_kind_matches_finite_differences() {
    let cases = layer_cases(2024);
    assert!(cases.len() >= 20);
    for (spec, shape) in &cases {
        let r = check_layer(spec, shape, 7).unwrap();
        assert!(r.max_err() < 1e-5, "{}: input {:.2e} params {:.2e}", r.label, r.input_err, r.param_err);
    }
}

#[test]
fn whole_network_gradient() {
    let spec: ModelSpec = "conv=2:3x3:2x2 hidden=3 fc=4 dropout=0.0 input=6x8".parse().unwrap();
    let mut net = build_hybrid(&spec, 3).unwrap().network;
    let x = Tensor::new(vec![2, 1, 6, 8], (0..96).map(|i| (i * 37 % 23) as f64 / 11.0 - 1.0).collect()).unwrap();
    let labels = [1usize, 3];
    let w = [1.0, 0.5, 2.0, 1.5];
    let loss = |net: &mut Network| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = net.forward_logits(&x, Mode::Train, &mut rng).unwrap();
        net.layers_mut().iter_mut().for_each(|l| l.clear_cache());
        cross_entropy_with_labels(&logits, &labels, &w).unwrap().0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    net.zero_grad();
    let logits = net.forward_logits(&x, Mode::Train, &mut rng).unwrap();
    let (_, g) = cross_entropy_with_labels(&logits, &labels, &w).unwrap();
    net.backward(&g).unwrap();
    for li in 0..net.len() {
        for p in 0..net.layers()[li].params().len() {
            let analytic = net.layers()[li].params()[p].1.grad().unwrap().to_vec();
            let mut numeric = vec![0.0; analytic.len()];
            for (i, slot) in numeric.iter_mut().enumerate() {
                let orig = net.layers()[li].params()[p].1.data()[i];
                net.layers_mut()[li].params_mut()[p].1.data_mut()[i] = orig + FD_STEP;
                let up = loss(&mut net);
                net.layers_mut()[li].params_mut()[p].1.data_mut()[i] = orig - FD_STEP;
                let down = loss(&mut net);
                net.layers_mut()[li].params_mut()[p].1.data_mut()[i] = orig;
                *slot = (up - down) / (2.0 * FD_STEP);
            }
            let err = max_rel_err(&analytic, &numeric, 1e-7);
            assert!(err < 1e-5, "{} param {p}: {err:.2e}", net.layers()[li].name);
        }
    }
}
