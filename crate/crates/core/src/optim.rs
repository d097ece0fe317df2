//! RMSProp and the two training stages (CNN on space-time frames, then
//! LSTM on per-instant feature vectors).

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Task, FORCE_DIM};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::loss::{loss_composite, LossConfig};
use crate::metrics::{mre_batched, MRE_DELTA};
use crate::nnet::{rng_for, CnnShape, FeatureCnn, LstmShape, LstmStack, Mode, ParamStore};

/// Single RMSProp update on one tensor.
pub fn rmsprop_update(theta: &mut [f64], g: &[f64], s: &mut [f64], lr: f64, beta: f64, eps: f64) {
    for ((t, gi), si) in theta.iter_mut().zip(g).zip(s.iter_mut()) {
        *si = beta * *si + (1.0 - beta) * gi * gi;
        *t -= lr * gi / (*si + eps).sqrt();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub beta: f64,
    pub eps: f64,
    state: Vec<Vec<f64>>,
    /// Steps skipped because of a non-finite gradient.
    pub skipped: u64,
}

impl RmsProp {
    pub const BETA: f64 = 0.9;
    pub const EPS: f64 = 1e-8;

    pub fn new(store: &ParamStore, lr: f64, beta: f64, eps: f64) -> Self {
        Self {
            lr,
            beta,
            eps,
            state: store.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            skipped: 0,
        }
    }

    pub fn state(&self) -> &[Vec<f64>] {
        &self.state
    }

    /// Applies the stored gradients. Returns `false` (and leaves everything
    /// untouched) when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<bool> {
        if store.len() != self.state.len() {
            return Err(Error::shape(self.state.len(), store.len()));
        }
        if !store.grads_finite() {
            self.skipped += 1;
            return Ok(false);
        }
        for (p, s) in store.iter_mut().zip(self.state.iter_mut()) {
            if s.len() != p.value.len() {
                return Err(Error::shape(s.len(), p.value.len()));
            }
            let crate::nnet::params::Param { value, grad, .. } = p;
            rmsprop_update(value, grad, s, self.lr, self.beta, self.eps);
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Cnn,
    Lstm,
}

/// LSTM input configuration: tool only, video features only, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputCase {
    I,
    II,
    III,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossChoice {
    A,
    B,
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(Stage::Cnn),
            "lstm" => Ok(Stage::Lstm),
            _ => Err(Error::Config(format!("unknown stage '{s}' (expected cnn or lstm)"))),
        }
    }
}

impl FromStr for InputCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(InputCase::I),
            "II" | "2" => Ok(InputCase::II),
            "III" | "3" => Ok(InputCase::III),
            _ => Err(Error::Config(format!("unknown case '{s}' (expected I, II or III)"))),
        }
    }
}

impl FromStr for LossChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(LossChoice::A),
            "B" | "b" => Ok(LossChoice::B),
            _ => Err(Error::Config(format!("unknown loss '{s}' (expected A or B)"))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Cnn => "cnn",
            Stage::Lstm => "lstm",
        })
    }
}

impl fmt::Display for InputCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputCase::I => "I",
            InputCase::II => "II",
            InputCase::III => "III",
        })
    }
}

impl fmt::Display for LossChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossChoice::A => "A",
            LossChoice::B => "B",
        })
    }
}

impl InputCase {
    pub fn uses_tool(self) -> bool {
        matches!(self, InputCase::I | InputCase::III)
    }

    pub fn uses_video(self) -> bool {
        matches!(self, InputCase::II | InputCase::III)
    }

    pub fn input_width(self, tool_dim: usize, feature_dim: usize) -> usize {
        match self {
            InputCase::I => tool_dim,
            InputCase::II => feature_dim,
            InputCase::III => feature_dim + tool_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub case: InputCase,
    pub loss: LossChoice,
    /// Overrides the loss weight of the chosen loss.
    pub alpha: Option<f64>,
    pub lr: f64,
    pub batch: usize,
    pub iters: usize,
    pub time_steps: usize,
    pub seed: u64,
    pub feature_dim: usize,
    /// LSTM cells per layer; `None` picks the per-case default.
    pub hidden: Option<usize>,
    pub dropout1: Option<f64>,
    pub dropout2: Option<f64>,
    pub causal: bool,
    pub delta: usize,
    pub beta: f64,
    pub eps_opt: f64,
    pub log_every: usize,
    pub eval_every: usize,
    /// Trailing steps of each window that enter the LSTM loss; `None` = all.
    pub loss_steps: Option<usize>,
    pub peepholes: bool,
}

impl TrainConfig {
    pub fn cnn() -> Self {
        Self {
            stage: Stage::Cnn,
            case: InputCase::III,
            loss: LossChoice::A,
            alpha: None,
            lr: 1e-3,
            batch: 32,
            iters: 2000,
            time_steps: 16,
            seed: 1,
            feature_dim: 64,
            hidden: None,
            dropout1: None,
            dropout2: None,
            causal: false,
            delta: crate::video::DEFAULT_DELTA,
            beta: RmsProp::BETA,
            eps_opt: RmsProp::EPS,
            log_every: 250,
            eval_every: 500,
            loss_steps: None,
            peepholes: true,
        }
    }

    pub fn lstm(case: InputCase, loss: LossChoice) -> Self {
        Self {
            stage: Stage::Lstm,
            case,
            loss,
            lr: 2.5e-3,
            batch: 64,
            iters: 3000,
            log_every: 100,
            eval_every: 1000,
            ..Self::cnn()
        }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Cnn => Self::cnn(),
            Stage::Lstm => Self::lstm(InputCase::III, LossChoice::A),
        }
    }

    /// Cells per LSTM layer: 32 for tool-only input, 64 otherwise.
    pub fn hidden_cells(&self) -> usize {
        self.hidden.unwrap_or(match self.case {
            InputCase::I => 32,
            _ => 64,
        })
    }

    /// Drop probabilities for the two layers of the current stage.
    pub fn dropouts(&self) -> (f64, f64) {
        let default = match (self.stage, self.case) {
            (Stage::Cnn, _) => 0.5,
            (Stage::Lstm, InputCase::I) => 0.75,
            (Stage::Lstm, _) => 0.25,
        };
        (self.dropout1.unwrap_or(default), self.dropout2.unwrap_or(default))
    }

    pub fn loss_config(&self) -> LossConfig {
        let mut c = match (self.stage, self.loss) {
            (Stage::Cnn, _) => LossConfig::cnn_stage(),
            (Stage::Lstm, LossChoice::A) => LossConfig::loss_a(),
            (Stage::Lstm, LossChoice::B) => LossConfig::loss_b(),
        };
        if let Some(a) = self.alpha {
            c.alpha = a;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.delta == 0 {
            return Err(Error::Config("delta must be at least 1".into()));
        }
        if self.stage == Stage::Lstm && self.time_steps == 0 {
            return Err(Error::Config("time steps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta) || !(self.eps_opt > 0.0) {
            return Err(Error::Config("RMSProp needs beta in [0, 1) and eps > 0".into()));
        }
        if self.log_every == 0 || self.eval_every == 0 {
            return Err(Error::Config("logging intervals must be positive".into()));
        }
        let (d1, d2) = self.dropouts();
        for d in [d1, d2] {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::Config(format!("dropout {d} outside [0, 1)")));
            }
        }
        if let Some(k) = self.loss_steps {
            if k == 0 || k > self.time_steps {
                return Err(Error::Config(format!("loss_steps {k} outside 1..={}", self.time_steps)));
            }
        }
        self.loss_config().validate()
    }

    /// Keys accepted by [`TrainConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "stage", "case", "loss", "alpha", "lr", "batch", "iters", "T", "seed", "feature_dim", "hidden", "dropout1",
        "dropout2", "causal", "delta", "beta", "eps_opt", "log_every", "eval_every", "loss_steps", "peepholes",
    ];

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "1" | "true" | "yes" | "on" => Ok(true),
                "0" | "false" | "no" | "off" => Ok(false),
                _ => Err(Error::Config(format!("invalid boolean '{v}' for {key}"))),
            }
        }
        match key {
            "stage" => self.stage = value.parse()?,
            "case" => self.case = value.parse()?,
            "loss" => self.loss = value.parse()?,
            "alpha" => self.alpha = Some(num(key, value)?),
            "lr" => self.lr = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "iters" => self.iters = num(key, value)?,
            "T" => self.time_steps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "feature_dim" => self.feature_dim = num(key, value)?,
            "hidden" => self.hidden = Some(num(key, value)?),
            "dropout1" => self.dropout1 = Some(num(key, value)?),
            "dropout2" => self.dropout2 = Some(num(key, value)?),
            "causal" => self.causal = flag(key, value)?,
            "delta" => self.delta = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "eps_opt" => self.eps_opt = num(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "loss_steps" => self.loss_steps = Some(num(key, value)?),
            "peepholes" => self.peepholes = flag(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies a flat `key=value` text (blank lines and `#` comments
    /// ignored). Keys for other commands can be skipped with `ignore`.
    pub fn apply_text(&mut self, text: &str, ignore: &[&str]) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            if !ignore.contains(&k.as_str()) {
                self.set(&k, &v)?;
            }
        }
        Ok(())
    }
}

/// Splits `key=value` lines.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// One row of `training_log.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: Option<f64>,
    pub loss_rmse: Option<f64>,
    pub loss_gdl: Option<f64>,
    pub mre_train: Option<f64>,
    pub mre_test: Option<f64>,
}

pub const LOG_HEADER: &str = "iteration,loss,loss_rmse,loss_gdl,mre_train,mre_test";

pub fn training_log_csv(rows: &[LogRow]) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.iteration,
            f(r.loss),
            f(r.loss_rmse),
            f(r.loss_gdl),
            f(r.mre_train),
            f(r.mre_test)
        );
    }
    s
}

pub fn write_training_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    write_atomic(path, training_log_csv(rows).as_bytes())
}

/// Space-time frames of one sequence (f32, HWC, `size x size x 3` each)
/// with their normalized force targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeq {
    pub id: String,
    pub task: Task,
    pub size: usize,
    pub inputs: Vec<f32>,
    pub targets: Vec<f64>,
}

impl FrameSeq {
    pub fn len(&self) -> usize {
        self.targets.len() / FORCE_DIM
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn frame_len(&self) -> usize {
        self.size * self.size * 3
    }

    pub fn input(&self, i: usize) -> Vec<f64> {
        let n = self.frame_len();
        self.inputs[i * n..(i + 1) * n].iter().map(|v| *v as f64).collect()
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * FORCE_DIM..(i + 1) * FORCE_DIM]
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.len() * self.frame_len() || self.targets.len() % FORCE_DIM != 0 {
            return Err(Error::shape(
                format!("{} frames of {}", self.len(), self.frame_len()),
                self.inputs.len(),
            ));
        }
        Ok(())
    }
}

/// Affine map `(x - mean) / std` fitted on training CNN inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: f64,
    pub std: f64,
}

impl Default for InputScaling {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl InputScaling {
    /// Mean and standard deviation over every input value of `seqs`.
    pub fn fit(seqs: &[FrameSeq]) -> Result<Self> {
        let n: usize = seqs.iter().map(|s| s.inputs.len()).sum();
        if n == 0 {
            return Err(Error::invalid("no inputs to fit scaling on"));
        }
        let vals = || seqs.iter().flat_map(|s| s.inputs.iter().map(|v| *v as f64));
        let mean = vals().sum::<f64>() / n as f64;
        let var = vals().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if !std.is_finite() || std < 1e-12 {
            return Err(Error::Numeric(format!("degenerate input spread {std}")));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, inputs: &mut [f32]) {
        for v in inputs {
            *v = ((*v as f64 - self.mean) / self.std) as f32;
        }
    }
}

/// Evenly spaced `(sequence, index)` picks, at most `cap` of them.
fn spread(lens: &[usize], cap: usize) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = lens
        .iter()
        .enumerate()
        .flat_map(|(s, &n)| (0..n).map(move |i| (s, i)))
        .collect();
    if all.len() <= cap {
        return all;
    }
    (0..cap).map(|k| all[k * all.len() / cap]).collect()
}

fn cnn_mre(net: &FeatureCnn, seqs: &[FrameSeq], picks: &[(usize, usize)], batch: usize) -> Result<Option<f64>> {
    if picks.is_empty() {
        return Ok(None);
    }
    let mut y = Vec::with_capacity(picks.len() * FORCE_DIM);
    let mut yhat = Vec::with_capacity(picks.len() * FORCE_DIM);
    for &(s, i) in picks {
        y.extend_from_slice(seqs[s].target(i));
        yhat.extend(net.predict(&seqs[s].input(i))?);
    }
    Ok(Some(mre_batched(&y, &yhat, FORCE_DIM, batch, MRE_DELTA)?))
}

/// Maximum samples used for each MRE evaluation.
const EVAL_CAP: usize = 512;

/// Trains the CNN on batches of adjacent frame pairs (pairs are shuffled,
/// members stay adjacent so the gradient-difference term is meaningful).
pub fn train_cnn(train: &[FrameSeq], test: &[FrameSeq], cfg: &TrainConfig, shape: CnnShape) -> Result<(FeatureCnn, Vec<LogRow>)> {
    cfg.validate()?;
    for s in train.iter().chain(test) {
        s.validate()?;
        if s.size != shape.input_size {
            return Err(Error::shape(shape.input_size, s.size));
        }
    }
    // pair members sit one space-time step (delta samples) apart
    let stride = cfg.delta;
    let pair_starts: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(s, q)| (0..q.len().saturating_sub(stride)).map(move |i| (s, i)))
        .collect();
    if pair_starts.is_empty() {
        return Err(Error::invalid(format!("training set has no pair of frames {stride} samples apart")));
    }
    let shape = CnnShape { dropout: cfg.dropouts().0, feature_dim: cfg.feature_dim, ..shape };
    let mut net = FeatureCnn::new(shape, cfg.seed)?;
    let mut opt = RmsProp::new(&net.params, cfg.lr, cfg.beta, cfg.eps_opt);
    let mut rng = rng_for(cfg.seed ^ 0x5eed_c0de);
    let loss_cfg = cfg.loss_config();
    let pairs = cfg.batch.div_ceil(2);
    let train_picks = spread(&train.iter().map(|s| s.len()).collect::<Vec<_>>(), EVAL_CAP);
    let test_picks = spread(&test.iter().map(|s| s.len()).collect::<Vec<_>>(), EVAL_CAP);
    let mut log = Vec::new();

    for it in 0..cfg.iters {
        net.params.zero_grad();
        let mut y = Vec::with_capacity(pairs * 2 * FORCE_DIM);
        let mut yhat = Vec::with_capacity(pairs * 2 * FORCE_DIM);
        let mut caches = Vec::with_capacity(pairs * 2);
        for _ in 0..pairs {
            let (s, i) = pair_starts[rng.gen_range(0..pair_starts.len())];
            for k in [i, i + stride] {
                let (out, cache) = net.forward(&train[s].input(k), Mode::Train, Some(&mut rng))?;
                y.extend_from_slice(train[s].target(k));
                yhat.extend(out);
                caches.push(cache);
            }
        }
        let l = loss_composite(&y, &yhat, FORCE_DIM, &vec![2; pairs], &loss_cfg)?;
        for (k, c) in caches.iter().enumerate() {
            net.backward(c, &l.grad[k * FORCE_DIM..(k + 1) * FORCE_DIM])?;
        }
        if it % cfg.log_every == 0 || it % cfg.eval_every == 0 {
            let mut row = LogRow {
                iteration: it,
                loss: Some(l.total),
                loss_rmse: Some(l.rmse),
                loss_gdl: l.gdl,
                mre_train: None,
                mre_test: None,
            };
            if it % cfg.eval_every == 0 {
                row.mre_train = cnn_mre(&net, train, &train_picks, cfg.batch)?;
                row.mre_test = cnn_mre(&net, test, &test_picks, cfg.batch)?;
            }
            log::debug!("cnn iter {it}: loss {:.5}", l.total);
            log.push(row);
        }
        opt.step(&mut net.params)?;
    }
    log.push(LogRow {
        iteration: cfg.iters,
        loss: None,
        loss_rmse: None,
        loss_gdl: None,
        mre_train: cnn_mre(&net, train, &train_picks, cfg.batch)?,
        mre_test: cnn_mre(&net, test, &test_picks, cfg.batch)?,
    });
    if opt.skipped > 0 {
        log::warn!("{} CNN steps skipped on non-finite gradients", opt.skipped);
    }
    Ok((net, log))
}

/// Feature vectors (f32) of every frame in a sequence, flat `[len x feature_dim]`.
pub fn extract_features(net: &FeatureCnn, seq: &FrameSeq) -> Result<Vec<f32>> {
    seq.validate()?;
    if seq.size != net.shape.input_size {
        return Err(Error::shape(net.shape.input_size, seq.size));
    }
    let mut out = Vec::with_capacity(seq.len() * net.shape.feature_dim);
    for i in 0..seq.len() {
        out.extend(net.features(&seq.input(i))?.into_iter().map(|v| v as f32));
    }
    Ok(out)
}

/// Per-instant LSTM inputs of one sequence with normalized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmSeq {
    pub id: String,
    pub task: Task,
    pub dim: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl LstmSeq {
    pub fn len(&self) -> usize {
        self.targets.len() / FORCE_DIM
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.inputs.len() != self.len() * self.dim || self.targets.len() % FORCE_DIM != 0 {
            return Err(Error::shape(format!("{} rows of {}", self.len(), self.dim), self.inputs.len()));
        }
        Ok(())
    }
}

/// Assembles `Phi_t` for a case: tool only, video only, or `[video || tool]`.
pub fn build_inputs(
    case: InputCase,
    tool: Option<(&[f64], usize)>,
    video: Option<(&[f32], usize)>,
    len: usize,
) -> Result<(Vec<f64>, usize)> {
    let tool = if case.uses_tool() {
        let (t, d) = tool.ok_or_else(|| Error::invalid(format!("case {case} needs tool data")))?;
        if t.len() != len * d {
            return Err(Error::shape(len * d, t.len()));
        }
        Some((t, d))
    } else {
        None
    };
    let video = if case.uses_video() {
        let (v, d) = video.ok_or_else(|| Error::invalid(format!("case {case} needs video features")))?;
        if v.len() != len * d {
            return Err(Error::shape(len * d, v.len()));
        }
        Some((v, d))
    } else {
        None
    };
    let dim = tool.map_or(0, |t| t.1) + video.map_or(0, |v| v.1);
    let mut out = Vec::with_capacity(len * dim);
    for i in 0..len {
        if let Some((v, d)) = video {
            out.extend(v[i * d..(i + 1) * d].iter().map(|x| *x as f64));
        }
        if let Some((t, d)) = tool {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
    }
    Ok((out, dim))
}

/// Builds the stack for a config and input width.
pub fn lstm_for(cfg: &TrainConfig, input_dim: usize) -> Result<LstmStack> {
    let (d1, d2) = cfg.dropouts();
    let shape = LstmShape {
        input_dim,
        hidden: vec![cfg.hidden_cells(); 2],
        dropout: vec![d1, d2],
        peepholes: cfg.peepholes,
    };
    LstmStack::new(shape, cfg.seed)
}

/// Estimate for every instant: the last output of the window of (up to)
/// `t_steps` inputs ending there. Flat `[len x 6]`.
pub fn predict_sequence(net: &LstmStack, inputs: &[f64], dim: usize, t_steps: usize) -> Result<Vec<f64>> {
    if dim != net.shape.input_dim {
        return Err(Error::shape(net.shape.input_dim, dim));
    }
    let len = inputs.len() / dim;
    let mut out = Vec::with_capacity(len * FORCE_DIM);
    for i in 0..len {
        let start = (i + 1).saturating_sub(t_steps);
        out.extend(net.predict(&inputs[start * dim..(i + 1) * dim])?);
    }
    Ok(out)
}

fn lstm_mre(net: &LstmStack, seqs: &[LstmSeq], picks: &[(usize, usize)], t: usize, batch: usize) -> Result<Option<f64>> {
    if picks.is_empty() {
        return Ok(None);
    }
    let mut y = Vec::new();
    let mut yhat = Vec::new();
    for &(s, i) in picks {
        let q = &seqs[s];
        let start = (i + 1).saturating_sub(t);
        y.extend_from_slice(&q.targets[i * FORCE_DIM..(i + 1) * FORCE_DIM]);
        yhat.extend(net.predict(&q.inputs[start * q.dim..(i + 1) * q.dim])?);
    }
    Ok(Some(mre_batched(&y, &yhat, FORCE_DIM, batch, MRE_DELTA)?))
}

/// Trains the LSTM stack on batches of `M` windows of `T` steps drawn at
/// distinct random positions; states start from zero in every window.
pub fn train_lstm(train: &[LstmSeq], test: &[LstmSeq], cfg: &TrainConfig) -> Result<(LstmStack, Vec<LogRow>)> {
    cfg.validate()?;
    let t = cfg.time_steps;
    let dim = train.first().ok_or_else(|| Error::invalid("empty LSTM training set"))?.dim;
    for s in train.iter().chain(test) {
        s.validate()?;
        if s.dim != dim {
            return Err(Error::shape(dim, s.dim));
        }
    }
    let windows: Vec<usize> = train.iter().map(|s| (s.len() + 1).saturating_sub(t)).collect();
    let total: usize = windows.iter().sum();
    if total == 0 {
        return Err(Error::invalid(format!("every training sequence is shorter than T = {t}")));
    }
    let k = cfg.loss_steps.unwrap_or(t);
    let loss_cfg = cfg.loss_config();
    if k < 2 && loss_cfg.alpha < 1.0 {
        return Err(Error::Config("the gradient-difference term needs loss_steps >= 2".into()));
    }
    let mut net = lstm_for(cfg, dim)?;
    let mut opt = RmsProp::new(&net.params, cfg.lr, cfg.beta, cfg.eps_opt);
    let mut rng = rng_for(cfg.seed ^ 0x1057_beef);
    let train_picks = spread(&train.iter().map(|s| s.len()).collect::<Vec<_>>(), EVAL_CAP);
    let test_picks = spread(&test.iter().map(|s| s.len()).collect::<Vec<_>>(), EVAL_CAP);
    let locate = |mut w: usize| -> (usize, usize) {
        for (s, &n) in windows.iter().enumerate() {
            if w < n {
                return (s, w);
            }
            w -= n;
        }
        unreachable!("window index within total")
    };
    let mut log = Vec::new();
    for it in 0..cfg.iters {
        let picks: Vec<usize> = if total >= cfg.batch {
            sample(&mut rng, total, cfg.batch).into_vec()
        } else {
            (0..cfg.batch).map(|_| rng.gen_range(0..total)).collect()
        };
        net.params.zero_grad();
        let mut y = Vec::with_capacity(cfg.batch * k * FORCE_DIM);
        let mut yhat = Vec::with_capacity(cfg.batch * k * FORCE_DIM);
        let mut caches = Vec::with_capacity(cfg.batch);
        for w in picks {
            let (s, start) = locate(w);
            let q = &train[s];
            let (out, cache) = net.forward(&q.inputs[start * dim..(start + t) * dim], Mode::Train, Some(&mut rng))?;
            y.extend_from_slice(&q.targets[(start + t - k) * FORCE_DIM..(start + t) * FORCE_DIM]);
            yhat.extend_from_slice(&out[(t - k) * FORCE_DIM..]);
            caches.push(cache);
        }
        let l = loss_composite(&y, &yhat, FORCE_DIM, &vec![k; cfg.batch], &loss_cfg)?;
        let mut dout = vec![0.0; t * FORCE_DIM];
        for (b, c) in caches.iter().enumerate() {
            dout[(t - k) * FORCE_DIM..].copy_from_slice(&l.grad[b * k * FORCE_DIM..(b + 1) * k * FORCE_DIM]);
            net.backward(c, &dout)?;
        }
        if it % cfg.log_every == 0 || it % cfg.eval_every == 0 {
            let mut row = LogRow {
                iteration: it,
                loss: Some(l.total),
                loss_rmse: Some(l.rmse),
                loss_gdl: l.gdl,
                mre_train: None,
                mre_test: None,
            };
            if it % cfg.eval_every == 0 {
                row.mre_train = lstm_mre(&net, train, &train_picks, t, cfg.batch)?;
                row.mre_test = lstm_mre(&net, test, &test_picks, t, cfg.batch)?;
            }
            log::debug!("lstm iter {it}: loss {:.5}", l.total);
            log.push(row);
        }
        opt.step(&mut net.params)?;
    }
    log.push(LogRow {
        iteration: cfg.iters,
        loss: None,
        loss_rmse: None,
        loss_gdl: None,
        mre_train: lstm_mre(&net, train, &train_picks, t, cfg.batch)?,
        mre_test: lstm_mre(&net, test, &test_picks, t, cfg.batch)?,
    });
    if opt.skipped > 0 {
        log::warn!("{} LSTM steps skipped on non-finite gradients", opt.skipped);
    }
    Ok((net, log))
}

/// Adds i.i.d. zero-mean Gaussian noise to the listed channels of a flat
/// `[len x dim]` matrix; other channels (e.g. the grasper) are untouched.
pub fn add_tool_noise(values: &[f64], dim: usize, channels: &[usize], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if dim == 0 || values.len() % dim != 0 || channels.iter().any(|c| *c >= dim) {
        return Err(Error::shape(format!("rows of {dim} with channels < {dim}"), values.len()));
    }
    let mut out = values.to_vec();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng_for(seed);
    for row in out.chunks_exact_mut(dim) {
        for &c in channels {
            row[c] += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_scaling_standardizes() {
        let seq = |v: Vec<f32>| FrameSeq { id: "s".into(), task: Task::Pushing, size: 1, inputs: v, targets: vec![0.0; FORCE_DIM] };
        let seqs = [seq(vec![1.0, 3.0, 5.0]), seq(vec![7.0, 9.0, 11.0])];
        let sc = InputScaling::fit(&seqs).unwrap();
        assert!((sc.mean - 6.0).abs() < 1e-12);
        assert!((sc.std - (70.0f64 / 6.0).sqrt()).abs() < 1e-12);
        let mut x: Vec<f32> = seqs.iter().flat_map(|s| s.inputs.clone()).collect();
        sc.apply(&mut x);
        let m: f64 = x.iter().map(|v| *v as f64).sum::<f64>() / 6.0;
        let v: f64 = x.iter().map(|v| (*v as f64 - m).powi(2)).sum::<f64>() / 6.0;
        assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-6);
        assert!(InputScaling::fit(&[seq(vec![2.0; 3])]).is_err());
        let mut y = vec![0.25f32];
        InputScaling::default().apply(&mut y);
        assert_eq!(y, [0.25]);
    }

    #[test]
    fn rmsprop_hand_step() {
        let mut theta = [0.0];
        let mut s = [0.0];
        rmsprop_update(&mut theta, &[1.0], &mut s, 0.1, 0.9, 1e-8);
        assert!((s[0] - 0.1).abs() < 1e-15);
        assert!((theta[0] + 0.1 / (0.1f64 + 1e-8).sqrt()).abs() < 1e-15);

        let mut theta = [0.3, -0.2];
        let mut s = [0.5, 0.0];
        rmsprop_update(&mut theta, &[0.0, 0.0], &mut s, 0.1, 0.9, 1e-8);
        assert_eq!(theta, [0.3, -0.2]);
    }

    #[test]
    fn rmsprop_skips_non_finite() {
        let mut rng = rng_for(0);
        let mut store = ParamStore::new(0);
        let id = store.add("w", &[2], crate::nnet::Init::Constant(1.0), &mut rng).unwrap();
        let mut opt = RmsProp::new(&store, 0.1, 0.9, 1e-8);
        store.grad_mut(id).copy_from_slice(&[f64::NAN, 1.0]);
        assert!(!opt.step(&mut store).unwrap());
        assert_eq!(opt.skipped, 1);
        assert_eq!(store.value(id), &[1.0, 1.0]);
        store.grad_mut(id).copy_from_slice(&[1.0, -1.0]);
        assert!(opt.step(&mut store).unwrap());
        assert!(opt.state()[0].iter().all(|s| *s >= 0.0));
    }

    #[test]
    fn config_parsing() {
        let mut c = TrainConfig::for_stage(Stage::Lstm);
        c.apply_text("# comment\ncase = I\nloss=B\nT=8\nlr=0.01\n\ncausal=true\n", &[]).unwrap();
        assert_eq!(c.case, InputCase::I);
        assert_eq!(c.loss_config().alpha, 1.0);
        assert_eq!(c.time_steps, 8);
        assert!(c.causal);
        assert_eq!(c.hidden_cells(), 32);
        assert!(c.apply_text("case=IV", &[]).is_err());
        assert!(c.apply_text("bogus=1", &[]).is_err());
        assert!(c.apply_text("lr", &[]).is_err());
        c.apply_text("bogus=1", &["bogus"]).unwrap();
        c.lr = 0.0;
        assert!(c.validate().is_err());
        assert_eq!(TrainConfig::lstm(InputCase::I, LossChoice::A).loss_config().alpha, 0.75);
        assert_eq!(TrainConfig::cnn().loss_config().alpha, 0.8);
    }

    #[test]
    fn input_widths() {
        let tool = vec![0.5; 3 * 4];
        let video = vec![0.25f32; 3 * 5];
        let (a, d) = build_inputs(InputCase::I, Some((&tool, 4)), Some((&video, 5)), 3).unwrap();
        assert_eq!((a.len(), d), (12, 4));
        let (b, d) = build_inputs(InputCase::III, Some((&tool, 4)), Some((&video, 5)), 3).unwrap();
        assert_eq!(d, 9);
        assert_eq!(&b[0..5], &[0.25; 5]);
        assert_eq!(&b[5..9], &[0.5; 4]);
        assert!(build_inputs(InputCase::II, Some((&tool, 4)), None, 3).is_err());
        assert_eq!(InputCase::III.input_width(4, 4096), 4100);
    }

    #[test]
    fn tool_noise() {
        let v: Vec<f64> = (0..40).map(|k| k as f64).collect();
        assert_eq!(add_tool_noise(&v, 4, &[0, 1, 2], 0.0, 1).unwrap(), v);
        let n = add_tool_noise(&v, 4, &[0, 1, 2], 0.3, 1).unwrap();
        assert_eq!(n, add_tool_noise(&v, 4, &[0, 1, 2], 0.3, 1).unwrap());
        for (a, b) in n.chunks(4).zip(v.chunks(4)) {
            assert_eq!(a[3], b[3]);
            assert_ne!(a[0], b[0]);
        }
        assert!(add_tool_noise(&v, 4, &[0], -1.0, 1).is_err());

        let z = vec![0.0; 100_000];
        let sigma = 0.2;
        let n = add_tool_noise(&z, 1, &[0], sigma, 7).unwrap();
        let mean = n.iter().sum::<f64>() / n.len() as f64;
        assert!(mean.abs() < 3.0 * sigma / (n.len() as f64).sqrt());
    }
}
