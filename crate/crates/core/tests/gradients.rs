use rand::Rng;
use vbfs_core::loss::{loss_composite, LossConfig};
use vbfs_core::nnet::cnn::random_input;
use vbfs_core::nnet::{grad_check, FdScheme, rng_for, CnnShape, FeatureCnn, LstmShape, LstmStack, Mode};

/// ReLU/max-pool networks are piecewise smooth; a narrow step avoids kinks.
const CNN_FD: FdScheme = FdScheme::Central { h: 1e-5 };
/// The LSTM is smooth, so a wide fourth-order stencil is used.
const LSTM_FD: FdScheme = FdScheme::FivePoint { h: 1e-3 };
const TOL: f64 = 1e-5;

/// Targets far from the estimates so no gradient-difference term sits on a kink.
fn targets(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed);
    (0..n).map(|k| (k as f64 * 0.37).sin() * 2.0 + rng.gen_range(-0.3..0.3)).collect()
}

fn log_loss_a() -> LossConfig {
    LossConfig { alpha: 0.75, ..LossConfig::cnn_stage() }
}

fn check_cnn(shape: CnnShape, cfg: LossConfig, max_coords: usize) -> f64 {
    let mut net = FeatureCnn::new(shape, 21).unwrap();
    let mut rng = rng_for(22);
    let inputs: Vec<Vec<f64>> = (0..2).map(|_| random_input(&net.shape, &mut rng)).collect();
    let y = targets(12, 23);
    let rep = grad_check(
        &mut net,
        |net, with_grad| {
            let mut yhat = Vec::new();
            let mut caches = Vec::new();
            for x in &inputs {
                let (out, c) = net.forward(x, Mode::Eval, None)?;
                yhat.extend(out);
                caches.push(c);
            }
            let l = loss_composite(&y, &yhat, 6, &[2], &cfg)?;
            if with_grad {
                for (k, c) in caches.iter().enumerate() {
                    net.backward(c, &l.grad[k * 6..(k + 1) * 6])?;
                }
            }
            Ok(l.total)
        },
        CNN_FD,
        max_coords,
        24,
    )
    .unwrap();
    eprintln!("cnn {:?}: {rep:?}", cfg.rho);
    rep.max_rel_err
}

fn check_lstm(cfg: LossConfig, peepholes: bool) -> f64 {
    let shape = LstmShape { peepholes, ..LstmShape::two_layer(5, 4, (0.0, 0.0)) };
    let mut net = LstmStack::new(shape, 31).unwrap();
    let mut rng = rng_for(32);
    for p in net.params.iter_mut() {
        p.value.iter_mut().for_each(|v| *v = rng.gen_range(-0.7..0.7));
    }
    let t_len = 4;
    let x: Vec<f64> = (0..t_len * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = targets(t_len * 6, 33);
    let rep = grad_check(
        &mut net,
        |net, with_grad| {
            let (out, cache) = net.forward(&x, Mode::Eval, None)?;
            let l = loss_composite(&y, &out, 6, &[t_len], &cfg)?;
            if with_grad {
                net.backward(&cache, &l.grad)?;
            }
            Ok(l.total)
        },
        LSTM_FD,
        10_000,
        34,
    )
    .unwrap();
    eprintln!("lstm: {rep:?}");
    rep.max_rel_err
}

#[test]
fn tiny_cnn_log_loss() {
    let shape = CnnShape { input_size: 8, conv_widths: vec![3, 4], fc_width: 6, feature_dim: 5, dropout: 0.5 };
    assert!(check_cnn(shape, log_loss_a(), 100_000) < TOL);
}

#[test]
fn desk_cnn_loss_a_and_b() {
    assert!(check_cnn(CnnShape::default(), log_loss_a(), 600) < TOL);
    assert!(check_cnn(CnnShape::default(), LossConfig::loss_b(), 600) < TOL);
}

#[test]
fn lstm_stack_loss_a_and_b() {
    for peep in [true, false] {
        assert!(check_lstm(LossConfig::loss_a(), peep) < TOL);
        assert!(check_lstm(log_loss_a(), peep) < TOL);
        assert!(check_lstm(LossConfig::loss_b(), peep) < TOL);
    }
}

#[test]
fn duplicate_sample_doubles_cnn_gradient() {
    let shape = CnnShape { input_size: 8, conv_widths: vec![2], fc_width: 4, feature_dim: 3, dropout: 0.5 };
    let mut net = FeatureCnn::new(shape, 5).unwrap();
    let x = random_input(&net.shape, &mut rng_for(6));
    let (_, c) = net.forward(&x, Mode::Eval, None).unwrap();
    let d = [0.3, -0.1, 0.2, 0.5, -0.4, 0.05];
    net.params.zero_grad();
    net.backward(&c, &d).unwrap();
    let once: Vec<Vec<f64>> = net.params.iter().map(|p| p.grad.clone()).collect();
    net.backward(&c, &d).unwrap();
    for (p, g) in net.params.iter().zip(&once) {
        for (a, b) in p.grad.iter().zip(g) {
            assert_eq!(*a, 2.0 * b);
        }
    }
    net.params.zero_grad();
    net.backward(&c, &[0.0; 6]).unwrap();
    assert!(net.params.iter().all(|p| p.grad.iter().all(|g| *g == 0.0)));
}
