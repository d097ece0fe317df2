use vbfs_core::data::{Task, FORCE_DIM};
use vbfs_core::metrics::{mre, pcc, MRE_DELTA};
use vbfs_core::nnet::{cnn::random_input, rng_for, CnnShape, FeatureCnn, ParamStore};
use vbfs_core::optim::{
    extract_features, predict_sequence, train_cnn, train_lstm, FrameSeq, InputCase, LossChoice, LstmSeq, TrainConfig,
};

fn tiny_shape() -> CnnShape {
    CnnShape { input_size: 16, conv_widths: vec![4, 8], fc_width: 16, feature_dim: 8, dropout: 0.0 }
}

fn four_frames() -> FrameSeq {
    let shape = tiny_shape();
    let mut rng = rng_for(11);
    let mut inputs = Vec::new();
    for _ in 0..4 {
        inputs.extend(random_input(&shape, &mut rng).into_iter().map(|v| v as f32));
    }
    let targets: Vec<f64> = (0..4 * FORCE_DIM).map(|k| ((k * 7 % 11) as f64 - 5.5) / 4.0).collect();
    FrameSeq { id: "mem".into(), task: Task::Pushing, size: 16, inputs, targets }
}

fn cnn_cfg(iters: usize) -> TrainConfig {
    TrainConfig { iters, batch: 4, delta: 1, dropout1: Some(0.0), feature_dim: 8, log_every: 100, eval_every: 500, ..TrainConfig::cnn() }
}

#[test]
fn cnn_memorizes_four_frames() {
    let seq = four_frames();
    let (_, log) = train_cnn(&[seq.clone()], &[], &cnn_cfg(2000), tiny_shape()).unwrap();
    let first = log.first().unwrap().mre_train.unwrap();
    let last = log.last().unwrap().mre_train.unwrap();
    assert!(last * 10.0 <= first, "MRE {first} -> {last}");
    assert!(log.last().unwrap().mre_test.is_none());
}

#[test]
fn zero_iterations_returns_initial_parameters() {
    let seq = four_frames();
    let cfg = cnn_cfg(0);
    let (net, log) = train_cnn(&[seq], &[], &cfg, tiny_shape()).unwrap();
    let fresh = FeatureCnn::new(CnnShape { feature_dim: 8, ..tiny_shape() }, cfg.seed).unwrap();
    assert_eq!(net.params.to_bytes().unwrap(), fresh.params.to_bytes().unwrap());
    assert_eq!(log.len(), 1);
}

#[test]
fn same_seed_gives_identical_checkpoints_and_features() {
    let seq = four_frames();
    let (a, la) = train_cnn(&[seq.clone()], &[], &cnn_cfg(30), tiny_shape()).unwrap();
    let (b, lb) = train_cnn(&[seq.clone()], &[], &cnn_cfg(30), tiny_shape()).unwrap();
    assert_eq!(a.params.to_bytes().unwrap(), b.params.to_bytes().unwrap());
    assert_eq!(la, lb);
    let fa = extract_features(&a, &seq).unwrap();
    assert_eq!(fa.len(), 4 * 8);
    assert_eq!(fa, extract_features(&b, &seq).unwrap());
    assert!(fa.iter().all(|v| v.abs() <= 1.0));
    let c = FeatureCnn::from_params(ParamStore::from_bytes(std::path::Path::new("mem"), &a.params.to_bytes().unwrap()).unwrap(), 0.0).unwrap();
    assert_eq!(extract_features(&c, &seq).unwrap(), fa);
}

#[test]
fn single_frame_sequences_are_rejected() {
    let mut seq = four_frames();
    let n = 16 * 16 * 3;
    seq.inputs.truncate(n);
    seq.targets.truncate(FORCE_DIM);
    assert!(train_cnn(&[seq], &[], &cnn_cfg(1), tiny_shape()).is_err());
}

fn sine_seq(len: usize, phase: f64) -> LstmSeq {
    let w = 2.0 * std::f64::consts::PI / 40.0;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for i in 0..len {
        let t = i as f64 * w + phase;
        inputs.extend([t.sin(), t.cos()]);
        for k in 0..FORCE_DIM {
            targets.push((t - 0.3 * k as f64).sin());
        }
    }
    LstmSeq { id: format!("sine{phase}"), task: Task::Pushing, dim: 2, inputs, targets }
}

#[test]
fn lstm_fits_phase_shifted_sines() {
    let train = vec![sine_seq(200, 0.0), sine_seq(160, 1.0)];
    let test = vec![sine_seq(120, 0.5)];
    let cfg = TrainConfig {
        iters: 400,
        time_steps: 8,
        batch: 16,
        hidden: Some(16),
        dropout1: Some(0.0),
        dropout2: Some(0.0),
        lr: 1e-2,
        log_every: 50,
        eval_every: 200,
        ..TrainConfig::lstm(InputCase::I, LossChoice::A)
    };
    let (net, log) = train_lstm(&train, &test, &cfg).unwrap();
    let pred = predict_sequence(&net, &test[0].inputs, 2, cfg.time_steps).unwrap();
    assert_eq!(pred.len(), test[0].targets.len());
    let r = pcc(&test[0].targets, &pred, FORCE_DIM).unwrap();
    for c in &r {
        assert!(c.unwrap() > 0.95, "{r:?}");
    }
    let first = log.first().unwrap().mre_train.unwrap();
    let last = log.last().unwrap().mre_train.unwrap();
    assert!(last < first, "{first} -> {last}");
    assert!(mre(&test[0].targets, &pred, FORCE_DIM, MRE_DELTA).unwrap().is_finite());

    let (again, _) = train_lstm(&train, &test, &cfg).unwrap();
    assert_eq!(net.params.to_bytes().unwrap(), again.params.to_bytes().unwrap());
}

#[test]
fn lstm_rejects_short_sequences() {
    let cfg = TrainConfig { time_steps: 50, ..TrainConfig::lstm(InputCase::I, LossChoice::B) };
    assert!(train_lstm(&[sine_seq(20, 0.0)], &[], &cfg).is_err());
    assert!(train_lstm(&[], &[], &cfg).is_err());
}
