//! Signal data model, normalization, resampling and dataset splitting.
//!
//! Raw tool samples and forces are kept in physical units inside
//! [`SequenceRecord`]. [`split_dataset`] fits the normalization on the
//! training partition only and stores normalized copies of both partitions,
//! together with the parameters needed to map estimates back to N / Nm.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of force/torque components.
pub const FORCE_DIM: usize = 6;

/// Component labels in storage order.
pub const FORCE_LABELS: [&str; FORCE_DIM] = ["Fx", "Fy", "Fz", "Tx", "Ty", "Tz"];

/// Physical force envelope (N) for the three force components.
pub const FORCE_RANGE_N: (f64, f64) = (-10.0, 2.5);
/// Physical torque envelope (Nm).
pub const TORQUE_RANGE_NM: (f64, f64) = (-5.0, 5.0);
/// Half-width of the normalized force range.
pub const FORCE_NORM_LIMIT: f64 = 5.0;

/// Tool state at one sample instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolSample {
    /// Sample index at the acquisition rate.
    pub t: u64,
    pub position: [f64; 3],
    pub orientation_axis: [f64; 3],
    pub orientation_angle: f64,
    /// 1 open, 0 closed.
    pub grasper: u8,
}

impl ToolSample {
    pub fn new(t: u64, position: [f64; 3], grasper: u8) -> Self {
        Self {
            t,
            position,
            orientation_axis: [0.0, 0.0, 1.0],
            orientation_angle: 0.0,
            grasper,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grasper > 1 {
            return Err(Error::invalid(format!(
                "grasper status must be 0 or 1, got {}",
                self.grasper
            )));
        }
        let n = self.orientation_axis.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "orientation axis must be a unit vector, norm {n}"
            )));
        }
        if self.position.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite tool position"));
        }
        Ok(())
    }

    /// Tool feature vector: `[x, y, z, s]`, or with orientation
    /// `[x, y, z, u, v, w, theta, s]`.
    pub fn features(&self, with_orientation: bool) -> Vec<f64> {
        let mut v = Vec::with_capacity(if with_orientation { 8 } else { 4 });
        v.extend_from_slice(&self.position);
        if with_orientation {
            v.extend_from_slice(&self.orientation_axis);
            v.push(self.orientation_angle);
        }
        v.push(self.grasper as f64);
        v
    }
}

/// Force and torque vector `[fx, fy, fz, tx, ty, tz]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceVector(pub [f64; FORCE_DIM]);

impl ForceVector {
    pub const ZERO: ForceVector = ForceVector([0.0; FORCE_DIM]);

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Indices of components outside the physical envelope. Values are
    /// reported, never clipped.
    pub fn envelope_violations(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(j, v)| {
                let (lo, hi) = if *j < 3 { FORCE_RANGE_N } else { TORQUE_RANGE_NM };
                **v < lo || **v > hi
            })
            .map(|(j, _)| j)
            .collect()
    }

    pub fn within_normalized_range(&self) -> bool {
        self.0.iter().all(|v| v.abs() <= FORCE_NORM_LIMIT)
    }
}

/// Pixel semantics of a [`Frame`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    RawRgb,
    MeanRemoved,
    Grayscale,
    SpaceTime,
}

/// Interleaved (row-major, channel-last) image with real pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
    pub kind: FrameKind,
}

impl Frame {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f64>,
        kind: FrameKind,
    ) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::shape(
                format!("{height}x{width}x{channels}"),
                format!("{} pixels", pixels.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
            kind,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64, kind: FrameKind) -> Self {
        Self {
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
            kind,
        }
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.pixels[self.idx(row, col, ch)]
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    /// Checks the range invariant that goes with the frame kind.
    pub fn validate_range(&self) -> Result<()> {
        let (lo, hi) = match self.kind {
            FrameKind::RawRgb => (0.0, 1.0),
            FrameKind::MeanRemoved => (-1.0, 1.0),
            _ => (-1.0, 1.0),
        };
        if let Some(v) = self.pixels.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::invalid(format!(
                "pixel {v} outside [{lo}, {hi}] for {:?} frame",
                self.kind
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Pushing,
    Pulling,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Pushing => "pushing",
            Task::Pulling => "pulling",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pushing" | "push" => Ok(Task::Pushing),
            "pulling" | "pull" => Ok(Task::Pulling),
            other => Err(Error::invalid(format!("unknown task '{other}'"))),
        }
    }
}

/// One synchronized recording: video frames, tool samples and forces.
#[derive(Debug, Clone)]
pub struct SequenceRecord {
    pub id: String,
    pub task: Task,
    pub frames: Vec<Frame>,
    pub tool: Vec<ToolSample>,
    pub force: Vec<ForceVector>,
    pub rate: f64,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.tool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tool.is_empty()
    }

    /// Equal lengths (frames may be omitted entirely), strictly increasing
    /// sample indices with unit step, positive rate.
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) {
            return Err(Error::invalid(format!("sequence {}: rate must be positive", self.id)));
        }
        if self.tool.len() != self.force.len()
            || (!self.frames.is_empty() && self.frames.len() != self.tool.len())
        {
            return Err(Error::shape(
                format!("{} tool/force/frames", self.tool.len()),
                format!(
                    "{} force, {} frames",
                    self.force.len(),
                    self.frames.len()
                ),
            ));
        }
        for w in self.tool.windows(2) {
            if w[1].t != w[0].t + 1 {
                return Err(Error::invalid(format!(
                    "sequence {}: sample indices must increase by one ({} -> {})",
                    self.id, w[0].t, w[1].t
                )));
            }
        }
        for s in &self.tool {
            s.validate()?;
        }
        Ok(())
    }
}

/// Per-axis tool position normalization (mean removal then max-abs scaling).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolNormalization {
    pub mean: [f64; 3],
    pub scale: [f64; 3],
}

impl ToolNormalization {
    pub fn apply(&self, s: &ToolSample) -> ToolSample {
        let mut out = *s;
        for k in 0..3 {
            out.position[k] = (s.position[k] - self.mean[k]) / self.scale[k];
        }
        out
    }

    pub fn invert(&self, s: &ToolSample) -> ToolSample {
        let mut out = *s;
        for k in 0..3 {
            out.position[k] = s.position[k] * self.scale[k] + self.mean[k];
        }
        out
    }
}

/// Per-component affine force map onto `[-5, 5]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceNormalization {
    pub offset: [f64; FORCE_DIM],
    pub scale: [f64; FORCE_DIM],
}

impl ForceNormalization {
    pub fn identity() -> Self {
        Self {
            offset: [0.0; FORCE_DIM],
            scale: [1.0; FORCE_DIM],
        }
    }

    pub fn apply(&self, f: &ForceVector) -> ForceVector {
        let mut out = [0.0; FORCE_DIM];
        for j in 0..FORCE_DIM {
            out[j] = (f.0[j] - self.offset[j]) / self.scale[j];
        }
        ForceVector(out)
    }

    pub fn invert(&self, f: &ForceVector) -> ForceVector {
        let mut out = [0.0; FORCE_DIM];
        for j in 0..FORCE_DIM {
            out[j] = f.0[j] * self.scale[j] + self.offset[j];
        }
        ForceVector(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub tool_mean: [f64; 3],
    pub tool_scale: [f64; 3],
    pub force_offset: [f64; FORCE_DIM],
    pub force_scale: [f64; FORCE_DIM],
}

impl NormalizationParams {
    pub fn from_parts(tool: ToolNormalization, force: ForceNormalization) -> Self {
        Self {
            tool_mean: tool.mean,
            tool_scale: tool.scale,
            force_offset: force.offset,
            force_scale: force.scale,
        }
    }

    pub fn tool(&self) -> ToolNormalization {
        ToolNormalization {
            mean: self.tool_mean,
            scale: self.tool_scale,
        }
    }

    pub fn force(&self) -> ForceNormalization {
        ForceNormalization {
            offset: self.force_offset,
            scale: self.force_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .tool_scale
            .iter()
            .chain(self.force_scale.iter())
            .any(|s| !(*s > 0.0))
        {
            return Err(Error::invalid("normalization scales must be strictly positive"));
        }
        Ok(())
    }
}

/// Result of [`normalize_tool`].
#[derive(Debug, Clone)]
pub struct ToolNormalized {
    pub samples: Vec<ToolSample>,
    pub params: ToolNormalization,
    /// Axes with zero deviation (scale forced to 1).
    pub degenerate: [bool; 3],
}

/// Removes the per-axis mean of the tool position and divides by the max
/// absolute deviation so every axis lands in `[-1, 1]`.
pub fn normalize_tool(samples: &[ToolSample]) -> Result<ToolNormalized> {
    let params = fit_tool_normalization(samples)?;
    let degenerate = params.1;
    let params = params.0;
    Ok(ToolNormalized {
        samples: samples.iter().map(|s| params.apply(s)).collect(),
        params,
        degenerate,
    })
}

fn fit_tool_normalization(samples: &[ToolSample]) -> Result<(ToolNormalization, [bool; 3])> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot normalize an empty tool sequence"));
    }
    let n = samples.len() as f64;
    let mut mean = [0.0; 3];
    for s in samples {
        for k in 0..3 {
            mean[k] += s.position[k];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut scale = [0.0f64; 3];
    for s in samples {
        for k in 0..3 {
            scale[k] = scale[k].max((s.position[k] - mean[k]).abs());
        }
    }
    let mut degenerate = [false; 3];
    for k in 0..3 {
        if scale[k] == 0.0 {
            scale[k] = 1.0;
            degenerate[k] = true;
        }
    }
    Ok((ToolNormalization { mean, scale }, degenerate))
}

/// Result of [`normalize_force`].
#[derive(Debug, Clone)]
pub struct ForceNormalized {
    pub forces: Vec<ForceVector>,
    pub params: ForceNormalization,
    pub degenerate: [bool; FORCE_DIM],
}

/// Maps each component's observed range onto `[-5, 5]` (offset = range
/// midpoint).
pub fn normalize_force(forces: &[ForceVector]) -> Result<ForceNormalized> {
    let (params, degenerate) = fit_force_normalization(forces)?;
    Ok(ForceNormalized {
        forces: forces.iter().map(|f| params.apply(f)).collect(),
        params,
        degenerate,
    })
}

fn fit_force_normalization(forces: &[ForceVector]) -> Result<(ForceNormalization, [bool; FORCE_DIM])> {
    if forces.is_empty() {
        return Err(Error::invalid("cannot normalize an empty force sequence"));
    }
    let mut lo = [f64::INFINITY; FORCE_DIM];
    let mut hi = [f64::NEG_INFINITY; FORCE_DIM];
    for f in forces {
        for j in 0..FORCE_DIM {
            lo[j] = lo[j].min(f.0[j]);
            hi[j] = hi[j].max(f.0[j]);
        }
    }
    let mut offset = [0.0; FORCE_DIM];
    let mut scale = [1.0; FORCE_DIM];
    let mut degenerate = [false; FORCE_DIM];
    for j in 0..FORCE_DIM {
        offset[j] = 0.5 * (lo[j] + hi[j]);
        let half = 0.5 * (hi[j] - lo[j]);
        if half > 0.0 {
            scale[j] = half / FORCE_NORM_LIMIT;
        } else {
            degenerate[j] = true;
        }
    }
    Ok((ForceNormalization { offset, scale }, degenerate))
}

/// Uniformly resampled signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub times: Vec<f64>,
    /// One row per grid time, same width as the input rows.
    pub values: Vec<Vec<f64>>,
    /// Requested grid points dropped because they fell outside the support.
    pub truncated: usize,
}

/// Time-shifts a signal by `shift` seconds and linearly interpolates it
/// onto the grid `k / target_rate`.
///
/// Without `span` the grid covers the shifted support. With `span`, grid
/// points outside the support are dropped and counted in
/// [`Resampled::truncated`]; nothing is extrapolated.
pub fn synchronize(
    times: &[f64],
    values: &[Vec<f64>],
    target_rate: f64,
    shift: f64,
    span: Option<(f64, f64)>,
) -> Result<Resampled> {
    if times.is_empty() || times.len() != values.len() {
        return Err(Error::shape(
            format!("{} timestamps", times.len()),
            format!("{} rows", values.len()),
        ));
    }
    if !(target_rate > 0.0) {
        return Err(Error::invalid("target rate must be positive"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("timestamps must be strictly increasing"));
    }
    let width = values[0].len();
    if values.iter().any(|r| r.len() != width) {
        return Err(Error::invalid("ragged signal rows"));
    }
    let shifted: Vec<f64> = times.iter().map(|t| t + shift).collect();
    let (t0, t1) = (shifted[0], *shifted.last().unwrap());
    // Grid indices are snapped with a tolerance so that samples which are
    // already on the grid are not lost to rounding.
    const TOL: f64 = 1e-9;
    let (req0, req1) = span.unwrap_or((t0, t1));
    let k_first = ((req0 * target_rate) - TOL).ceil() as i64;
    let k_last = ((req1 * target_rate) + TOL).floor() as i64;

    let mut out_t = Vec::new();
    let mut out_v = Vec::new();
    let mut truncated = 0usize;
    let mut seg = 0usize;
    for k in k_first..=k_last {
        let g = k as f64 / target_rate;
        if g < t0 - TOL || g > t1 + TOL {
            truncated += 1;
            continue;
        }
        while seg + 1 < shifted.len() - 1 && shifted[seg + 1] < g - TOL {
            seg += 1;
        }
        let row = if shifted.len() == 1 {
            values[0].clone()
        } else {
            let (ta, tb) = (shifted[seg], shifted[seg + 1]);
            if (g - ta).abs() <= TOL {
                values[seg].clone()
            } else if (g - tb).abs() <= TOL {
                values[seg + 1].clone()
            } else {
                let w = ((g - ta) / (tb - ta)).clamp(0.0, 1.0);
                values[seg]
                    .iter()
                    .zip(&values[seg + 1])
                    .map(|(a, b)| a + w * (b - a))
                    .collect()
            }
        };
        out_t.push(g);
        out_v.push(row);
    }
    if truncated > 0 {
        log::warn!("synchronize: {truncated} grid points outside signal support were dropped");
    }
    Ok(Resampled {
        times: out_t,
        values: out_v,
        truncated,
    })
}

/// Default smoothing window in samples.
pub const DEFAULT_SMOOTH_WINDOW: usize = 5;

/// Centered moving average. Near the edges the window is truncated to the
/// samples that exist, so edge outputs average fewer neighbours.
pub fn smooth(signal: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!("smoothing window must be odd and >= 1, got {window}")));
    }
    let half = window / 2;
    let n = signal.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in signal {
        prefix.push(prefix.last().unwrap() + v);
    }
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect())
}

/// Train/test partition with training-set normalization applied to both.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<SequenceRecord>,
    pub test: Vec<SequenceRecord>,
    pub norm: NormalizationParams,
}

impl Dataset {
    pub fn train_samples(&self) -> usize {
        self.train.iter().map(|s| s.len()).sum()
    }

    pub fn test_samples(&self) -> usize {
        self.test.iter().map(|s| s.len()).sum()
    }
}

/// Splits whole sequences into train/test, fits normalization on the
/// training partition and returns normalized copies of both.
pub fn split_dataset(sequences: Vec<SequenceRecord>, test_ids: &[String]) -> Result<Dataset> {
    let mut seen = HashSet::new();
    for s in &sequences {
        if !seen.insert(s.id.clone()) {
            return Err(Error::invalid(format!("duplicate sequence id '{}'", s.id)));
        }
    }
    let mut wanted = HashSet::new();
    for id in test_ids {
        if !seen.contains(id) {
            return Err(Error::invalid(format!("unknown test id '{id}'")));
        }
        if !wanted.insert(id.clone()) {
            return Err(Error::invalid(format!("test id '{id}' listed twice")));
        }
    }
    let (test, train): (Vec<_>, Vec<_>) = sequences.into_iter().partition(|s| wanted.contains(&s.id));
    if train.is_empty() {
        return Err(Error::invalid("training partition is empty"));
    }
    let all_tool: Vec<ToolSample> = train.iter().flat_map(|s| s.tool.iter().copied()).collect();
    let all_force: Vec<ForceVector> = train.iter().flat_map(|s| s.force.iter().copied()).collect();
    let (tool_norm, _) = fit_tool_normalization(&all_tool)?;
    let (force_norm, _) = fit_force_normalization(&all_force)?;
    let norm = NormalizationParams::from_parts(tool_norm, force_norm);
    let apply = |mut s: SequenceRecord| {
        s.tool = s.tool.iter().map(|x| tool_norm.apply(x)).collect();
        s.force = s.force.iter().map(|f| force_norm.apply(f)).collect();
        s
    };
    Ok(Dataset {
        train: train.into_iter().map(apply).collect(),
        test: test.into_iter().map(apply).collect(),
        norm,
    })
}
