//! Subcommand implementations. Every report is written atomically.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use vbfs_core::armax::{fit_miso, save_models, simulate_miso, ArmaxOrders};
use vbfs_core::data::{Dataset, SequenceRecord, Task, FORCE_DIM, FORCE_LABELS};
use vbfs_core::io::{
    read_index, read_manifest, read_sequence, sequence_dir, write_atomic, write_index, ManifestEntry, Split, TensorStack,
    MANIFEST_FILE,
};
use vbfs_core::metrics::{fmt_opt, write_metrics, write_summary, MetricReport};
use vbfs_core::nnet::{CnnShape, FeatureCnn, LstmStack, ParamStore};
use vbfs_core::optim::{
    add_tool_noise, build_inputs, extract_features, predict_sequence, train_cnn, train_lstm, write_training_log, FrameSeq,
    InputCase, InputScaling, LogRow, LossChoice, LstmSeq, Stage, TrainConfig,
};
use vbfs_core::synth::{generate_dataset, SynthConfig};
use vbfs_core::video::{preprocess_sequence, PreprocessConfig, RoiMode};
use vbfs_core::Error;

use crate::svg::{Chart, Series};

/// Width of the tool feature `[x, y, z, s]`.
pub const TOOL_DIM: usize = 4;
/// Tool channels that receive noise in robustness sweeps (positions only).
pub const NOISY_TOOL_CHANNELS: [usize; 3] = [0, 1, 2];

/// Directory layout below `--out`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into() }
    }
    pub fn data(&self) -> PathBuf {
        self.out.join("data")
    }
    pub fn prep(&self, causal: bool) -> PathBuf {
        self.out.join(if causal { "prep_causal" } else { "prep" })
    }
    pub fn cnn(&self) -> PathBuf {
        self.out.join("cnn")
    }
    pub fn features(&self, causal: bool) -> PathBuf {
        self.out.join(if causal { "features_causal" } else { "features" })
    }
    pub fn lstm(&self, label: &str) -> PathBuf {
        self.out.join(format!("lstm_{label}"))
    }
    pub fn eval(&self, label: &str) -> PathBuf {
        self.out.join(format!("eval_{label}"))
    }
    pub fn robustness(&self, label: &str) -> PathBuf {
        self.out.join(format!("robustness_{label}"))
    }
    pub fn rt_compare(&self) -> PathBuf {
        self.out.join("rt_compare")
    }
    pub fn armax(&self) -> PathBuf {
        self.out.join("armax")
    }
    pub fn report(&self) -> PathBuf {
        self.out.join("report")
    }
}

pub fn label(case: InputCase, loss: LossChoice) -> String {
    format!("{case}-{loss}")
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------- data

/// Manifest plus normalized signals (no frames) split by the manifest.
pub struct Signals {
    pub entries: Vec<ManifestEntry>,
    pub dataset: Dataset,
}

impl Signals {
    pub fn record(&self, id: &str) -> Option<&SequenceRecord> {
        self.dataset.train.iter().chain(&self.dataset.test).find(|s| s.id == id)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

pub fn load_manifest(data: &Path) -> Result<Vec<ManifestEntry>> {
    let p = data.join(MANIFEST_FILE);
    if !p.exists() {
        bail!(Error::invalid(format!("no dataset manifest at {} (run `vbfs synth` first)", p.display())));
    }
    Ok(read_manifest(&p)?)
}

pub fn load_signals(data: &Path) -> Result<Signals> {
    let entries = load_manifest(data)?;
    if entries.is_empty() {
        bail!(Error::invalid("the dataset manifest lists no sequences"));
    }
    let mut records = Vec::with_capacity(entries.len());
    for e in &entries {
        let (rec, _) = read_sequence(&sequence_dir(data, &e.id), false)?;
        if rec.len() != e.length {
            bail!(Error::invalid(format!("{}: manifest length {} but {} samples on disk", e.id, e.length, rec.len())));
        }
        records.push(rec);
    }
    let test: Vec<String> = entries.iter().filter(|e| e.split == Split::Test).map(|e| e.id.clone()).collect();
    let dataset = vbfs_core::data::split_dataset(records, &test)?;
    Ok(Signals { entries, dataset })
}

/// `[x, y, z, s]` rows at the given instants.
pub fn tool_rows(rec: &SequenceRecord, idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&t| rec.tool[t].features(false)).collect()
}

pub fn force_rows(rec: &SequenceRecord, idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&t| rec.force[t].0).collect()
}

fn tensor_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.vbfs"))
}

fn index_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.idx.csv"))
}

fn read_tensor(dir: &Path, id: &str) -> Result<(TensorStack, Vec<usize>)> {
    let tp = tensor_path(dir, id);
    if !tp.exists() {
        bail!(Error::invalid(format!("missing {} (run the previous pipeline step)", tp.display())));
    }
    let stack = TensorStack::read(&tp)?;
    let idx = read_index(&index_path(dir, id))?;
    if idx.len() != stack.len() {
        bail!(Error::format(tp, format!("{} tensors but {} index rows", stack.len(), idx.len())));
    }
    Ok((stack, idx))
}

// ---------------------------------------------------------------- synth

pub fn cmd_synth(layout: &Layout, cfg: &SynthConfig) -> Result<Vec<ManifestEntry>> {
    let data = layout.data();
    let entries = generate_dataset(&data, cfg)?;
    let manifest = fs::read(data.join(MANIFEST_FILE))?;
    let total: usize = entries.iter().map(|e| e.length).sum();
    log::info!("{} episodes, {total} samples, manifest sha256 {}", entries.len(), sha256_hex(&manifest));
    Ok(entries)
}

// ---------------------------------------------------------------- preprocess

/// Preprocesses one sequence's frames into network inputs.
pub fn preprocess_record(rec: &SequenceRecord, meta: &vbfs_core::io::SequenceMeta, cfg: &PreprocessConfig) -> Result<(TensorStack, Vec<usize>)> {
    let centers: Option<Vec<(f64, f64)>> = match (cfg.roi_mode, meta.camera) {
        (RoiMode::Tool, Some(cam)) => Some(rec.tool.iter().map(|s| cam.project(s.position)).collect()),
        (RoiMode::Tool, None) => bail!(Error::invalid(format!("{}: tool ROI mode needs a camera model", rec.id))),
        _ => None,
    };
    let frames = preprocess_sequence(&rec.frames, centers.as_deref(), cfg)?;
    let mut stack = TensorStack::new(cfg.out_size, cfg.out_size, 3);
    let mut idx = Vec::with_capacity(frames.len());
    for f in frames {
        stack.push(&f.frame.pixels)?;
        idx.push(f.t);
    }
    Ok((stack, idx))
}

pub fn cmd_preprocess(layout: &Layout, cfg: &PreprocessConfig) -> Result<usize> {
    let data = layout.data();
    let entries = load_manifest(&data)?;
    let causal = cfg.causal_mean || cfg.causal_space_time;
    let dir = layout.prep(causal);
    mkdir(&dir)?;
    write_json(&dir.join("preprocess.json"), cfg)?;
    let mut total = 0;
    for e in &entries {
        let (rec, meta) = read_sequence(&sequence_dir(&data, &e.id), true)?;
        let (stack, idx) = preprocess_record(&rec, &meta, cfg)?;
        stack.write(&tensor_path(&dir, &e.id))?;
        write_index(&index_path(&dir, &e.id), &idx)?;
        log::info!("preprocessed {} ({} inputs)", e.id, idx.len());
        total += idx.len();
    }
    Ok(total)
}

// ---------------------------------------------------------------- train

/// Sidecar written next to every checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub norm: vbfs_core::data::NormalizationParams,
    /// CNN input standardization; identity for LSTM checkpoints.
    #[serde(default)]
    pub input_scaling: InputScaling,
}

pub const CHECKPOINT: &str = "model.vbfp";
pub const META: &str = "train_config.json";

fn frame_seqs(signals: &Signals, prep: &Path, split: Split) -> Result<Vec<FrameSeq>> {
    signals
        .entries(split)
        .map(|e| {
            let rec = signals.record(&e.id).expect("manifest entry loaded");
            let (stack, idx) = read_tensor(prep, &e.id)?;
            if stack.height != stack.width || stack.channels != 3 {
                bail!(Error::format(tensor_path(prep, &e.id), "expected square 3-channel inputs"));
            }
            Ok(FrameSeq { id: e.id.clone(), task: e.task, size: stack.height, inputs: stack.data, targets: force_rows(rec, &idx) })
        })
        .collect()
}

fn loss_chart(rows: &[LogRow], title: &str) -> Chart {
    let pick = |f: fn(&LogRow) -> Option<f64>| rows.iter().filter_map(|r| f(r).map(|v| (r.iteration as f64, v))).collect();
    let mut series = vec![Series { name: "loss".into(), points: pick(|r| r.loss) }];
    let mre: Vec<(f64, f64)> = pick(|r| r.mre_test);
    if !mre.is_empty() {
        series.push(Series { name: "MRE test".into(), points: mre });
    }
    Chart { title: title.into(), x_label: "iteration".into(), y_label: "value".into(), x_ticks: None, series }
}

fn save_run(dir: &Path, params: &ParamStore, meta: &CheckpointMeta, log: &[LogRow], title: &str) -> Result<()> {
    mkdir(dir)?;
    params.save(&dir.join(CHECKPOINT))?;
    write_json(&dir.join(META), meta)?;
    write_training_log(&dir.join("training_log.csv"), log)?;
    write_text(&dir.join("loss.svg"), &loss_chart(log, title).render())
}

pub fn cmd_train_cnn(layout: &Layout, cfg: &TrainConfig, layout_override: (Option<Vec<usize>>, Option<usize>)) -> Result<Vec<LogRow>> {
    let signals = load_signals(&layout.data())?;
    let prep = layout.prep(cfg.causal);
    let mut train = frame_seqs(&signals, &prep, Split::Train)?;
    let mut test = frame_seqs(&signals, &prep, Split::Test)?;
    let scaling = InputScaling::fit(&train)?;
    for s in train.iter_mut().chain(test.iter_mut()) {
        scaling.apply(&mut s.inputs);
    }
    let size = train.first().map(|s| s.size).ok_or_else(|| Error::invalid("no training sequences"))?;
    let mut shape = CnnShape { input_size: size, feature_dim: cfg.feature_dim, ..CnnShape::default() };
    if let Some(w) = layout_override.0 {
        shape.conv_widths = w;
    }
    if let Some(f) = layout_override.1 {
        shape.fc_width = f;
    }
    let (net, log) = train_cnn(&train, &test, cfg, shape)?;
    let meta = CheckpointMeta {
        config: cfg.clone(),
        input_dim: net.shape.input_len(),
        feature_dim: cfg.feature_dim,
        norm: signals.dataset.norm,
        input_scaling: scaling,
    };
    save_run(&layout.cnn(), &net.params, &meta, &log, "CNN training")?;
    Ok(log)
}

/// Trained feature extractor with the input scaling it was trained under.
pub struct Cnn {
    pub net: FeatureCnn,
    pub scaling: InputScaling,
}

pub fn load_cnn(layout: &Layout) -> Result<Cnn> {
    let dir = layout.cnn();
    let p = dir.join(CHECKPOINT);
    if !p.exists() {
        bail!(Error::invalid(format!("missing CNN checkpoint {}", p.display())));
    }
    let meta: CheckpointMeta = read_json(&dir.join(META))?;
    let net = FeatureCnn::from_params(ParamStore::load(&p)?, meta.config.dropouts().0)?;
    Ok(Cnn { net, scaling: meta.input_scaling })
}

pub fn features_for(cnn: &Cnn, id: &str, task: Task, stack: TensorStack) -> Result<TensorStack> {
    let n = stack.len();
    let mut inputs = stack.data;
    cnn.scaling.apply(&mut inputs);
    let seq = FrameSeq { id: id.into(), task, size: stack.height, inputs, targets: vec![0.0; n * FORCE_DIM] };
    let feats = extract_features(&cnn.net, &seq)?;
    Ok(TensorStack { height: 1, width: cnn.net.shape.feature_dim, channels: 1, data: feats })
}

pub fn cmd_extract(layout: &Layout, causal: bool) -> Result<usize> {
    let net = load_cnn(layout)?;
    let entries = load_manifest(&layout.data())?;
    let prep = layout.prep(causal);
    let dir = layout.features(causal);
    mkdir(&dir)?;
    let mut total = 0;
    for e in &entries {
        let (stack, idx) = read_tensor(&prep, &e.id)?;
        let feats = features_for(&net, &e.id, e.task, stack)?;
        feats.write(&tensor_path(&dir, &e.id))?;
        write_index(&index_path(&dir, &e.id), &idx)?;
        total += idx.len();
    }
    log::info!("extracted {total} feature vectors into {}", dir.display());
    Ok(total)
}

/// LSTM inputs for one sequence at the instants that have video features.
pub fn lstm_seq(rec: &SequenceRecord, case: InputCase, video: Option<(&TensorStack, &[usize])>, idx: &[usize]) -> Result<LstmSeq> {
    let tool = tool_rows(rec, idx);
    let v = video.map(|(s, _)| (s.data.as_slice(), s.width));
    let (inputs, dim) = build_inputs(case, Some((&tool, TOOL_DIM)), v, idx.len())?;
    Ok(LstmSeq { id: rec.id.clone(), task: rec.task, dim, inputs, targets: force_rows(rec, idx) })
}

/// Instants used for a sequence: those of the feature (or, for tool-only
/// input, preprocessed) index, or every sample when neither exists.
fn lstm_seqs(layout: &Layout, signals: &Signals, case: InputCase, causal: bool, split: Split) -> Result<Vec<LstmSeq>> {
    let feat_dir = layout.features(causal);
    let prep_dir = layout.prep(causal);
    signals
        .entries(split)
        .map(|e| {
            let rec = signals.record(&e.id).expect("manifest entry loaded");
            if case.uses_video() {
                let (stack, idx) = read_tensor(&feat_dir, &e.id)?;
                lstm_seq(rec, case, Some((&stack, &idx)), &idx)
            } else {
                let ip = index_path(&prep_dir, &e.id);
                let idx = if ip.exists() { read_index(&ip)? } else { (0..rec.len()).collect() };
                lstm_seq(rec, case, None, &idx)
            }
        })
        .collect()
}

pub fn cmd_train_lstm(layout: &Layout, cfg: &TrainConfig) -> Result<Vec<LogRow>> {
    let signals = load_signals(&layout.data())?;
    let train = lstm_seqs(layout, &signals, cfg.case, cfg.causal, Split::Train)?;
    let test = lstm_seqs(layout, &signals, cfg.case, cfg.causal, Split::Test)?;
    let (net, log) = train_lstm(&train, &test, cfg)?;
    let lab = label(cfg.case, cfg.loss);
    let fd = if cfg.case.uses_video() { net.shape.input_dim - if cfg.case.uses_tool() { TOOL_DIM } else { 0 } } else { 0 };
    let meta = CheckpointMeta {
        config: cfg.clone(),
        input_dim: net.shape.input_dim,
        feature_dim: fd,
        norm: signals.dataset.norm,
        input_scaling: InputScaling::default(),
    };
    save_run(&layout.lstm(&lab), &net.params, &meta, &log, &format!("LSTM training {lab}"))?;
    Ok(log)
}

pub fn load_lstm(layout: &Layout, case: InputCase, loss: LossChoice) -> Result<(LstmStack, CheckpointMeta)> {
    let dir = layout.lstm(&label(case, loss));
    let p = dir.join(CHECKPOINT);
    if !p.exists() {
        bail!(Error::invalid(format!("missing checkpoint {}", p.display())));
    }
    let meta: CheckpointMeta = read_json(&dir.join(META))?;
    let (d1, d2) = meta.config.dropouts();
    let net = LstmStack::from_params(ParamStore::load(&p)?, vec![d1, d2])?;
    if net.shape.input_dim != meta.input_dim {
        bail!(Error::shape(meta.input_dim, net.shape.input_dim));
    }
    Ok((net, meta))
}

// ---------------------------------------------------------------- eval

/// Metric reports over concatenated sequences: `all`, then per task.
pub fn evaluate(
    lab: &str,
    seqs: &[LstmSeq],
    preds: &[Vec<f64>],
    norm: &vbfs_core::data::ForceNormalization,
    per_task: bool,
) -> Result<Vec<MetricReport>> {
    let gather = |keep: &dyn Fn(&LstmSeq) -> bool| {
        let mut y = Vec::new();
        let mut yhat = Vec::new();
        for (s, p) in seqs.iter().zip(preds) {
            if keep(s) {
                y.extend_from_slice(&s.targets);
                yhat.extend_from_slice(p);
            }
        }
        (y, yhat)
    };
    let (y, yhat) = gather(&|_| true);
    if y.is_empty() {
        bail!(Error::invalid("nothing to evaluate"));
    }
    let mut out = vec![MetricReport::compute(lab, "all", &y, &yhat, norm)?];
    if per_task {
        for task in [Task::Pushing, Task::Pulling] {
            let (y, yhat) = gather(&|s| s.task == task);
            if !y.is_empty() {
                out.push(MetricReport::compute(lab, &task.to_string(), &y, &yhat, norm)?);
            }
        }
    }
    Ok(out)
}

fn predict_all(net: &LstmStack, seqs: &[LstmSeq], t: usize) -> Result<Vec<Vec<f64>>> {
    seqs.iter().map(|s| Ok(predict_sequence(net, &s.inputs, s.dim, t)?)).collect()
}

fn pcc_chart(title: &str, reports: &[MetricReport]) -> Chart {
    Chart {
        title: title.into(),
        x_label: "force component".into(),
        y_label: "PCC".into(),
        x_ticks: Some(FORCE_LABELS.iter().map(|s| s.to_string()).collect()),
        series: reports
            .iter()
            .map(|r| Series {
                name: format!("{} {}", r.label, r.task),
                points: r.pcc.iter().enumerate().map(|(j, p)| (j as f64, p.unwrap_or(f64::NAN))).collect(),
            })
            .collect(),
    }
}

pub fn cmd_eval(layout: &Layout, case: InputCase, loss: LossChoice, per_task: bool, split: Split) -> Result<Vec<MetricReport>> {
    let (net, meta) = load_lstm(layout, case, loss)?;
    let signals = load_signals(&layout.data())?;
    let seqs = lstm_seqs(layout, &signals, case, meta.config.causal, split)?;
    if seqs.is_empty() {
        bail!(Error::invalid("no sequences in the requested split"));
    }
    let preds = predict_all(&net, &seqs, meta.config.time_steps)?;
    let lab = label(case, loss);
    let reports = evaluate(&lab, &seqs, &preds, &meta.norm.force(), per_task)?;
    let dir = layout.eval(&lab);
    mkdir(&dir)?;
    write_metrics(&dir.join("metrics.csv"), &reports)?;
    write_summary(&dir.join("summary.csv"), &reports)?;
    write_text(&dir.join("pcc.svg"), &pcc_chart(&format!("PCC per component, {lab}"), &reports).render())?;
    Ok(reports)
}

// ---------------------------------------------------------------- robustness

pub const DEFAULT_SIGMAS: [f64; 4] = [0.0, 0.05, 0.1, 0.2];
pub const SWEEP_HEADER: &str = "sigma,component,rmse_norm,rmse_phys,pcc";

/// Tool-position channels inside an LSTM input row for a case.
pub fn tool_channels(case: InputCase, input_dim: usize) -> Vec<usize> {
    if !case.uses_tool() {
        return Vec::new();
    }
    let start = input_dim - TOOL_DIM;
    NOISY_TOOL_CHANNELS.iter().map(|c| start + c).collect()
}

pub fn cmd_robustness(layout: &Layout, case: InputCase, loss: LossChoice, sigmas: &[f64], seed: u64) -> Result<Vec<(f64, MetricReport)>> {
    let mut sig: Vec<f64> = sigmas.to_vec();
    if sig.is_empty() || sig.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        bail!(Error::Config("sigmas must be a non-empty list of values >= 0".into()));
    }
    sig.sort_by(|a, b| a.total_cmp(b));
    sig.dedup();
    let (net, meta) = load_lstm(layout, case, loss)?;
    let signals = load_signals(&layout.data())?;
    let seqs = lstm_seqs(layout, &signals, case, meta.config.causal, Split::Test)?;
    let channels = tool_channels(case, meta.input_dim);
    let lab = label(case, loss);
    let mut rows = Vec::new();
    for &s in &sig {
        let noisy: Vec<LstmSeq> = seqs
            .iter()
            .enumerate()
            .map(|(k, q)| {
                let inputs = add_tool_noise(&q.inputs, q.dim, &channels, s, seed.wrapping_add(k as u64))?;
                Ok(LstmSeq { inputs, ..q.clone() })
            })
            .collect::<Result<_>>()?;
        let preds = predict_all(&net, &noisy, meta.config.time_steps)?;
        let r = evaluate(&lab, &noisy, &preds, &meta.norm.force(), false)?.remove(0);
        rows.push((s, r));
    }
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for (s, r) in &rows {
        for j in 0..FORCE_DIM {
            let _ = writeln!(csv, "{s},{},{:.6},{:.6},{}", FORCE_LABELS[j], r.rmse_norm[j], r.rmse_phys[j], fmt_opt(r.pcc[j]));
        }
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let _ = writeln!(csv, "{s},mean,{:.6},{:.6},{}", m(&r.rmse_norm), m(&r.rmse_phys), fmt_opt(r.mean_pcc()));
    }
    let dir = layout.robustness(&lab);
    mkdir(&dir)?;
    write_text(&dir.join("sweep.csv"), &csv)?;
    let mut series: Vec<Series> = (0..FORCE_DIM)
        .map(|j| Series {
            name: FORCE_LABELS[j].into(),
            points: rows.iter().map(|(s, r)| (*s, r.pcc[j].unwrap_or(f64::NAN))).collect(),
        })
        .collect();
    series.push(Series { name: "mean".into(), points: rows.iter().map(|(s, r)| (*s, r.mean_pcc().unwrap_or(f64::NAN))).collect() });
    let chart = Chart { title: format!("PCC under tool noise, {lab}"), x_label: "sigma".into(), y_label: "PCC".into(), x_ticks: None, series };
    write_text(&dir.join("sweep.svg"), &chart.render())?;
    Ok(rows)
}

// ---------------------------------------------------------------- real-time vs offline

pub const RT_HEADER: &str = "metric,component,offline,real_time,rel_error_rt_over_o_x100,rel_diff_o_minus_rt_over_o_pct";

#[derive(Debug, Clone, PartialEq)]
pub struct RtRow {
    pub metric: &'static str,
    pub component: String,
    pub offline: Option<f64>,
    pub real_time: Option<f64>,
}

impl RtRow {
    /// `(RT / O) x 100`.
    pub fn ratio_pct(&self) -> Option<f64> {
        match (self.offline, self.real_time) {
            (Some(o), Some(rt)) if o != 0.0 => Some(rt / o * 100.0),
            _ => None,
        }
    }

    /// `(O - RT) / O x 100`.
    pub fn diff_pct(&self) -> Option<f64> {
        match (self.offline, self.real_time) {
            (Some(o), Some(rt)) if o != 0.0 => Some((o - rt) / o * 100.0),
            _ => None,
        }
    }
}

pub fn rt_csv(rows: &[RtRow]) -> String {
    let mut s = String::from(RT_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.metric,
            r.component,
            fmt_opt(r.offline),
            fmt_opt(r.real_time),
            fmt_opt(r.ratio_pct()),
            fmt_opt(r.diff_pct())
        );
    }
    s
}

pub fn rt_rows(o: &MetricReport, rt: &MetricReport) -> Vec<RtRow> {
    let mut rows = Vec::new();
    for j in 0..FORCE_DIM {
        rows.push(RtRow { metric: "rmse", component: FORCE_LABELS[j].into(), offline: Some(o.rmse_phys[j]), real_time: Some(rt.rmse_phys[j]) });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    rows.push(RtRow { metric: "rmse", component: "mean".into(), offline: Some(mean(&o.rmse_phys)), real_time: Some(mean(&rt.rmse_phys)) });
    for j in 0..FORCE_DIM {
        rows.push(RtRow { metric: "pcc", component: FORCE_LABELS[j].into(), offline: o.pcc[j], real_time: rt.pcc[j] });
    }
    rows.push(RtRow { metric: "pcc", component: "mean".into(), offline: o.mean_pcc(), real_time: rt.mean_pcc() });
    rows
}

/// Default held-out pair: the first pushing and the first pulling test sequence.
pub fn default_rt_sequences(entries: &[ManifestEntry]) -> Vec<String> {
    [Task::Pushing, Task::Pulling]
        .iter()
        .filter_map(|t| entries.iter().find(|e| e.split == Split::Test && e.task == *t).map(|e| e.id.clone()))
        .collect()
}

pub fn cmd_rt_compare(layout: &Layout, case: InputCase, loss: LossChoice, sequences: Option<Vec<String>>, prep: &PreprocessConfig) -> Result<Vec<RtRow>> {
    let (net, meta) = load_lstm(layout, case, loss)?;
    let cnn = if case.uses_video() { Some(load_cnn(layout)?) } else { None };
    let data = layout.data();
    let signals = load_signals(&data)?;
    let ids = sequences.unwrap_or_else(|| default_rt_sequences(&signals.entries));
    if ids.is_empty() {
        bail!(Error::invalid("no test sequences to compare"));
    }
    let t_steps = meta.config.time_steps;
    let mut mode_seqs: [Vec<LstmSeq>; 2] = [Vec::new(), Vec::new()];
    let mut mode_preds: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for id in &ids {
        let rec = signals.record(id).ok_or_else(|| Error::invalid(format!("unknown sequence '{id}'")))?;
        let (raw, seq_meta) = read_sequence(&sequence_dir(&data, id), case.uses_video())?;
        let mut per_mode = Vec::new();
        for causal in [false, true] {
            let cfg = PreprocessConfig { causal_mean: causal, causal_space_time: causal, ..*prep };
            let (seq, map) = if let Some(cnn) = &cnn {
                let (stack, idx) = preprocess_record(&raw, &seq_meta, &cfg)?;
                let feats = features_for(cnn, id, rec.task, stack)?;
                (lstm_seq(rec, case, Some((&feats, &idx)), &idx)?, idx)
            } else {
                let idx: Vec<usize> = (0..rec.len()).collect();
                (lstm_seq(rec, case, None, &idx)?, idx)
            };
            let pred = predict_sequence(&net, &seq.inputs, seq.dim, t_steps)?;
            per_mode.push((seq, map, pred));
        }
        // compare on the instants both modes cover
        let common: Vec<usize> =
            per_mode[0].1.iter().copied().filter(|t| per_mode[1].1.binary_search(t).is_ok()).collect();
        if common.is_empty() {
            bail!(Error::invalid(format!("{id}: offline and causal preprocessing share no instants")));
        }
        for (m, (seq, map, pred)) in per_mode.into_iter().enumerate() {
            let pos: HashMap<usize, usize> = map.iter().enumerate().map(|(i, t)| (*t, i)).collect();
            let mut targets = Vec::new();
            let mut p = Vec::new();
            for t in &common {
                let i = pos[t];
                targets.extend_from_slice(&seq.targets[i * FORCE_DIM..(i + 1) * FORCE_DIM]);
                p.extend_from_slice(&pred[i * FORCE_DIM..(i + 1) * FORCE_DIM]);
            }
            mode_seqs[m].push(LstmSeq { targets, inputs: Vec::new(), ..seq });
            mode_preds[m].push(p);
        }
    }
    let lab = label(case, loss);
    let o = evaluate(&lab, &mode_seqs[0], &mode_preds[0], &meta.norm.force(), false)?.remove(0);
    let rt = evaluate(&lab, &mode_seqs[1], &mode_preds[1], &meta.norm.force(), false)?.remove(0);
    let rows = rt_rows(&o, &rt);
    let dir = layout.rt_compare();
    mkdir(&dir)?;
    write_text(&dir.join("table7.csv"), &rt_csv(&rows))?;
    write_text(&dir.join("sequences.txt"), &(ids.join("\n") + "\n"))?;
    Ok(rows)
}

// ---------------------------------------------------------------- ARMAX

pub fn cmd_armax(layout: &Layout, orders: ArmaxOrders) -> Result<Vec<MetricReport>> {
    let data = layout.data();
    let signals = load_signals(&data)?;
    let all = |r: &SequenceRecord| -> Vec<usize> { (0..r.len()).collect() };
    let train: Vec<(Vec<f64>, Vec<f64>)> = signals
        .dataset
        .train
        .iter()
        .map(|r| (tool_rows(r, &all(r)), force_rows(r, &all(r))))
        .collect();
    let refs: Vec<(&[f64], &[f64])> = train.iter().map(|(u, y)| (u.as_slice(), y.as_slice())).collect();
    let models = fit_miso(&refs, TOOL_DIM, FORCE_DIM, orders)?;
    // score on the same instants as the network when preprocessed data exists
    let prep = layout.prep(false);
    let mut seqs = Vec::new();
    let mut preds = Vec::new();
    for rec in &signals.dataset.test {
        let u = tool_rows(rec, &all(rec));
        let y = force_rows(rec, &all(rec));
        let sim = simulate_miso(&models, &u, &y)?;
        let ip = index_path(&prep, &rec.id);
        let idx = if ip.exists() { read_index(&ip)? } else { all(rec) };
        let pick = |v: &[f64]| -> Vec<f64> { idx.iter().flat_map(|&t| v[t * FORCE_DIM..(t + 1) * FORCE_DIM].to_vec()).collect() };
        seqs.push(LstmSeq { id: rec.id.clone(), task: rec.task, dim: 1, inputs: Vec::new(), targets: pick(&y) });
        preds.push(pick(&sim));
    }
    if !preds.iter().flatten().all(|v| v.is_finite()) {
        bail!(Error::Numeric("ARMAX simulation diverged".into()));
    }
    let reports = evaluate("ARMAX", &seqs, &preds, &signals.dataset.norm.force(), true)?;
    let dir = layout.armax();
    mkdir(&dir)?;
    save_models(&dir.join("coefficients.csv"), &models)?;
    write_metrics(&dir.join("metrics.csv"), &reports)?;
    write_summary(&dir.join("summary.csv"), &reports)?;
    Ok(reports)
}

// ---------------------------------------------------------------- report

/// Collects every summary and sweep below `--out` into one report directory.
pub fn cmd_report(layout: &Layout) -> Result<PathBuf> {
    let out = &layout.out;
    if !out.exists() {
        bail!(Error::invalid(format!("{} does not exist", out.display())));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(out)
        .with_context(|| format!("listing {}", out.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && *p != layout.report())
        .collect();
    dirs.sort();
    let mut summary = String::from(vbfs_core::metrics::SUMMARY_HEADER);
    summary.push('\n');
    let mut mean_pcc: Vec<(String, f64)> = Vec::new();
    let dir = layout.report();
    mkdir(&dir)?;
    for d in &dirs {
        let s = d.join("summary.csv");
        if s.exists() {
            let text = fs::read_to_string(&s)?;
            for line in text.lines().skip(1) {
                summary.push_str(line);
                summary.push('\n');
                let f: Vec<&str> = line.split(',').collect();
                if f.len() == 7 && f[1] == "all" && f[2] == "pcc" {
                    if let Ok(v) = f[5].parse::<f64>() {
                        mean_pcc.push((f[0].to_string(), v));
                    }
                }
            }
        }
        let log = d.join("training_log.csv");
        if log.exists() {
            let name = d.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
            fs::copy(d.join("loss.svg"), dir.join(format!("loss_{name}.svg"))).ok();
        }
        for extra in ["sweep.csv", "table7.csv"] {
            let p = d.join(extra);
            if p.exists() {
                let name = d.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
                fs::copy(&p, dir.join(format!("{name}_{extra}")))?;
            }
        }
    }
    write_text(&dir.join("summary.csv"), &summary)?;
    let chart = Chart {
        title: "Mean test PCC".into(),
        x_label: "model".into(),
        y_label: "mean PCC".into(),
        x_ticks: Some(mean_pcc.iter().map(|(l, _)| l.clone()).collect()),
        series: vec![Series { name: "mean PCC".into(), points: mean_pcc.iter().enumerate().map(|(i, (_, v))| (i as f64, *v)).collect() }],
    };
    write_text(&dir.join("mean_pcc.svg"), &chart.render())?;
    Ok(dir)
}

/// Stage parsed from a command-line value.
pub fn parse_stage(s: &str) -> Result<Stage, Error> {
    s.parse()
}
