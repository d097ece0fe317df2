//! Video preprocessing: mean-frame removal (offline and causal), region of
//! interest tracking, space-time frames and crop/resize.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::{Frame, FrameKind};
use crate::error::{Error, Result};

/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Default spacing between the frames of a space-time triple.
pub const DEFAULT_DELTA: usize = 15;

/// Per-pixel average of a frame collection.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFrame {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
    pub count: usize,
}

impl MeanFrame {
    fn check(&self, frame: &Frame) -> Result<()> {
        if frame.height != self.height || frame.width != self.width || frame.channels != self.channels {
            return Err(Error::shape(
                format!("{}x{}x{}", self.height, self.width, self.channels),
                frame.shape_str(),
            ));
        }
        Ok(())
    }

    pub fn to_frame(&self) -> Frame {
        Frame {
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels: self.pixels.clone(),
            kind: FrameKind::RawRgb,
        }
    }
}

/// Equal-weight per-pixel mean over all frames.
pub fn mean_frame_offline(frames: &[Frame]) -> Result<MeanFrame> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("mean frame needs at least one frame"))?;
    let mut sum = vec![0.0; first.pixels.len()];
    for f in frames {
        if !f.same_shape(first) {
            return Err(Error::shape(first.shape_str(), f.shape_str()));
        }
        for (s, p) in sum.iter_mut().zip(&f.pixels) {
            *s += p;
        }
    }
    let n = frames.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(MeanFrame {
        height: first.height,
        width: first.width,
        channels: first.channels,
        pixels: sum,
        count: frames.len(),
    })
}

/// Running mean over past frames only. `state = None` starts a new stream.
pub fn mean_frame_causal(state: Option<MeanFrame>, frame: &Frame) -> Result<MeanFrame> {
    match state {
        None => Ok(MeanFrame {
            height: frame.height,
            width: frame.width,
            channels: frame.channels,
            pixels: frame.pixels.clone(),
            count: 1,
        }),
        Some(mut m) => {
            m.check(frame)?;
            m.count += 1;
            let inv = 1.0 / m.count as f64;
            for (mp, p) in m.pixels.iter_mut().zip(&frame.pixels) {
                *mp += (p - *mp) * inv;
            }
            Ok(m)
        }
    }
}

/// Signed background residual `frame - mean`, kept in `[-1, 1]` without
/// re-centering.
pub fn subtract_mean(frame: &Frame, mean: &MeanFrame) -> Result<Frame> {
    mean.check(frame)?;
    Ok(Frame {
        height: frame.height,
        width: frame.width,
        channels: frame.channels,
        pixels: frame
            .pixels
            .iter()
            .zip(&mean.pixels)
            .map(|(p, m)| (p - m).clamp(-1.0, 1.0))
            .collect(),
        kind: FrameKind::MeanRemoved,
    })
}

/// BT.601 luma. Works on raw and mean-removed RGB frames.
pub fn to_grayscale(frame: &Frame) -> Result<Frame> {
    if frame.channels != 3 {
        return Err(Error::shape("3 channels", format!("{} channels", frame.channels)));
    }
    let pixels = frame
        .pixels
        .chunks_exact(3)
        .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
        .collect();
    Ok(Frame {
        height: frame.height,
        width: frame.width,
        channels: 1,
        pixels,
        kind: FrameKind::Grayscale,
    })
}

/// Three grayscale frames stacked as channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeFrame {
    pub frame: Frame,
    /// Source frame indices of channels 0, 1, 2.
    pub sources: [usize; 3],
    pub delta: usize,
}

/// Source indices for the space-time frame at `t`: `(t-d, t, t+d)`, or
/// `(t-2d, t-d, t)` in causal mode.
pub fn space_time_sources(len: usize, t: usize, delta: usize, causal: bool) -> Result<[usize; 3]> {
    let (lo_back, hi_fwd) = if causal { (2 * delta, 0) } else { (delta, delta) };
    if t < lo_back || t + hi_fwd >= len {
        return Err(Error::OutOfRange(format!(
            "space-time frame at t={t} with delta={delta} (causal={causal}) needs frames outside 0..{len}"
        )));
    }
    Ok(if causal {
        [t - 2 * delta, t - delta, t]
    } else {
        [t - delta, t, t + delta]
    })
}

/// First and one-past-last `t` for which a space-time frame exists.
pub fn space_time_range(len: usize, delta: usize, causal: bool) -> (usize, usize) {
    if causal {
        (2 * delta, len.max(2 * delta))
    } else {
        (delta, len.saturating_sub(delta).max(delta))
    }
}

/// Builds the space-time frame at `t`. Frames may be RGB (converted to luma)
/// or already single-channel.
pub fn space_time(frames: &[Frame], t: usize, delta: usize, causal: bool) -> Result<SpaceTimeFrame> {
    let sources = space_time_sources(frames.len(), t, delta, causal)?;
    let mut grays = Vec::with_capacity(3);
    for &s in &sources {
        let f = &frames[s];
        grays.push(match f.channels {
            1 => f.clone(),
            3 => to_grayscale(f)?,
            c => return Err(Error::shape("1 or 3 channels", format!("{c} channels"))),
        });
    }
    if !grays[0].same_shape(&grays[1]) || !grays[0].same_shape(&grays[2]) {
        return Err(Error::shape(grays[0].shape_str(), grays[2].shape_str()));
    }
    let n = grays[0].pixels.len();
    let mut pixels = Vec::with_capacity(3 * n);
    for i in 0..n {
        pixels.push(grays[0].pixels[i]);
        pixels.push(grays[1].pixels[i]);
        pixels.push(grays[2].pixels[i]);
    }
    Ok(SpaceTimeFrame {
        frame: Frame {
            height: grays[0].height,
            width: grays[0].width,
            channels: 3,
            pixels,
            kind: FrameKind::SpaceTime,
        },
        sources,
        delta,
    })
}

/// Axis-aligned region of interest, centered at `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiBox {
    pub center: (usize, usize),
    pub height: usize,
    pub width: usize,
}

impl RoiBox {
    pub const PAPER_HEIGHT: usize = 200;
    pub const PAPER_WIDTH: usize = 300;

    pub fn top(&self) -> usize {
        self.center.0 - self.height / 2
    }

    pub fn left(&self) -> usize {
        self.center.1 - self.width / 2
    }

    /// Box with the requested center moved so it lies fully inside an
    /// `h x w` frame. Fails when the box is larger than the frame.
    pub fn clamped(center: (f64, f64), height: usize, width: usize, frame_h: usize, frame_w: usize) -> Result<Self> {
        if height > frame_h || width > frame_w || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "ROI {height}x{width} does not fit a {frame_h}x{frame_w} frame"
            )));
        }
        let clamp_axis = |c: f64, size: usize, limit: usize| -> usize {
            let lo = size / 2;
            let hi = limit - (size - size / 2);
            (c.round().max(0.0) as usize).clamp(lo, hi)
        };
        Ok(Self {
            center: (clamp_axis(center.0, height, frame_h), clamp_axis(center.1, width, frame_w)),
            height,
            width,
        })
    }

    pub fn fits(&self, frame_h: usize, frame_w: usize) -> bool {
        self.center.0 >= self.height / 2
            && self.center.1 >= self.width / 2
            && self.top() + self.height <= frame_h
            && self.left() + self.width <= frame_w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub box_height: usize,
    pub box_width: usize,
    /// Weight of the prediction in the level/trend smoothing.
    pub smoothing: f64,
    /// Lower bound on the foreground threshold (mean-removed luma units).
    pub min_threshold: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            box_height: RoiBox::PAPER_HEIGHT,
            box_width: RoiBox::PAPER_WIDTH,
            smoothing: 0.8,
            min_threshold: 0.05,
        }
    }
}

/// Tracker state carried across calls.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackerState {
    level: Option<(f64, f64)>,
    trend: Option<(f64, f64)>,
    last_box: Option<RoiBox>,
}

/// Per-frame tracker output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiTrack {
    pub roi: RoiBox,
    /// Centroid of the largest foreground component, if any.
    pub detection: Option<(f64, f64)>,
    /// Smoothed center the box was built from.
    pub smoothed: (f64, f64),
    pub no_motion: bool,
}

/// Tracks the moving foreground over mean-removed frames.
///
/// Per frame: luma, 3x3 box blur, magnitude of the background residual,
/// Otsu threshold (floored at `min_threshold`), 3x3 opening then closing,
/// centroid of the largest 8-connected component, then level/trend
/// exponential smoothing and a clamped box. Frames without foreground keep
/// the previous box.
pub fn track_roi(
    frames: &[Frame],
    prev_box: Option<RoiBox>,
    config: &TrackerConfig,
    state: &mut TrackerState,
) -> Result<Vec<RoiTrack>> {
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let gray = match f.channels {
            1 => f.pixels.clone(),
            3 => to_grayscale(f)?.pixels,
            c => return Err(Error::shape("1 or 3 channels", format!("{c} channels"))),
        };
        let (h, w) = (f.height, f.width);
        let default_box = || {
            RoiBox::clamped(
                (h as f64 / 2.0, w as f64 / 2.0),
                config.box_height,
                config.box_width,
                h,
                w,
            )
        };
        let prev = match state.last_box.or(prev_box) {
            Some(b) => b,
            None => default_box()?,
        };
        let score: Vec<f64> = box_blur3(&gray, h, w).into_iter().map(f64::abs).collect();
        let detection = detect_foreground(&score, h, w, config.min_threshold);
        let track = match detection {
            None => RoiTrack {
                roi: prev,
                detection: None,
                smoothed: state
                    .level
                    .unwrap_or((prev.center.0 as f64, prev.center.1 as f64)),
                no_motion: true,
            },
            Some(c) => {
                let s = config.smoothing;
                let (level, trend) = match (state.level, state.trend) {
                    (None, _) => (c, None),
                    (Some(l), None) => (c, Some((c.0 - l.0, c.1 - l.1))),
                    (Some(l), Some(tr)) => {
                        let pred = (l.0 + tr.0, l.1 + tr.1);
                        let lv = (s * pred.0 + (1.0 - s) * c.0, s * pred.1 + (1.0 - s) * c.1);
                        let td = (
                            s * tr.0 + (1.0 - s) * (lv.0 - l.0),
                            s * tr.1 + (1.0 - s) * (lv.1 - l.1),
                        );
                        (lv, Some(td))
                    }
                };
                state.level = Some(level);
                state.trend = trend;
                RoiTrack {
                    roi: RoiBox::clamped(level, config.box_height, config.box_width, h, w)?,
                    detection: Some(c),
                    smoothed: level,
                    no_motion: false,
                }
            }
        };
        state.last_box = Some(track.roi);
        out.push(track);
    }
    Ok(out)
}

fn box_blur3(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for r in 0..h {
        for c in 0..w {
            let mut s = 0.0;
            let mut n = 0.0;
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    s += img[rr * w + cc];
                    n += 1.0;
                }
            }
            out[r * w + c] = s / n;
        }
    }
    out
}

/// Otsu threshold over a 256-bin histogram of `values` in `[0, max]`.
pub fn otsu_threshold(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return 0.0;
    }
    const BINS: usize = 256;
    let mut hist = [0usize; BINS];
    for v in values {
        let b = ((v / max) * (BINS - 1) as f64).round() as usize;
        hist[b.min(BINS - 1)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, c)| i as f64 * *c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0usize, -1.0);
    for (i, c) in hist.iter().enumerate() {
        w0 += *c as f64;
        sum0 += i as f64 * *c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    // Pixels strictly above the winning bin are foreground.
    (best as f64 + 0.5) / (BINS - 1) as f64 * max
}

fn morph(mask: &[bool], h: usize, w: usize, dilate: bool) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for r in 0..h {
        for c in 0..w {
            let mut acc = !dilate;
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let v = mask[rr * w + cc];
                    if dilate {
                        acc |= v;
                    } else {
                        acc &= v;
                    }
                }
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Centroid `(row, col)` of the largest 8-connected component.
fn largest_component_centroid(mask: &[bool], h: usize, w: usize) -> Option<(f64, f64)> {
    let mut seen = vec![false; mask.len()];
    let mut best: Option<(usize, f64, f64)> = None;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut n, mut sr, mut sc) = (0usize, 0.0, 0.0);
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / w, p % w);
            n += 1;
            sr += r as f64;
            sc += c as f64;
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let q = rr * w + cc;
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        if best.map_or(true, |b| n > b.0) {
            best = Some((n, sr / n as f64, sc / n as f64));
        }
    }
    best.map(|(_, r, c)| (r, c))
}

fn detect_foreground(score: &[f64], h: usize, w: usize, min_threshold: f64) -> Option<(f64, f64)> {
    let thr = otsu_threshold(score).max(min_threshold);
    let mask: Vec<bool> = score.iter().map(|v| *v > thr).collect();
    if !mask.iter().any(|m| *m) {
        return None;
    }
    let opened = morph(&morph(&mask, h, w, false), h, w, true);
    let closed = morph(&morph(&opened, h, w, true), h, w, false);
    largest_component_centroid(&closed, h, w)
}

/// Crops the ROI, center-crops it to a square and bilinearly resamples the
/// square to `out_size x out_size` (pixel-center aligned).
pub fn crop_resize(frame: &Frame, roi: &RoiBox, out_size: usize) -> Result<Frame> {
    if !roi.fits(frame.height, frame.width) {
        return Err(Error::OutOfRange(format!(
            "ROI {:?} outside {}x{} frame",
            roi, frame.height, frame.width
        )));
    }
    if out_size == 0 {
        return Err(Error::invalid("output size must be positive"));
    }
    let side = roi.height.min(roi.width);
    let top = roi.top() + (roi.height - side) / 2;
    let left = roi.left() + (roi.width - side) / 2;
    let ch = frame.channels;
    let scale = side as f64 / out_size as f64;
    let coord = |i: usize| -> (usize, usize, f64) {
        let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(side - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..out_size).map(coord).collect();
    let mut pixels = Vec::with_capacity(out_size * out_size * ch);
    for r in 0..out_size {
        let (r0, r1, fr) = coord(r);
        for &(c0, c1, fc) in &cols {
            for k in 0..ch {
                let p = |rr: usize, cc: usize| frame.at(top + rr, left + cc, k);
                let a = p(r0, c0) * (1.0 - fc) + p(r0, c1) * fc;
                let b = p(r1, c0) * (1.0 - fc) + p(r1, c1) * fc;
                pixels.push(a * (1.0 - fr) + b * fr);
            }
        }
    }
    Ok(Frame {
        height: out_size,
        width: out_size,
        channels: ch,
        pixels,
        kind: frame.kind,
    })
}

/// How the ROI center is chosen during preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiMode {
    Tracker,
    /// Use externally supplied tool projections (synthetic data).
    Tool,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub delta: usize,
    /// Space-time triple `(t-2d, t-d, t)` instead of `(t-d, t, t+d)`.
    pub causal_space_time: bool,
    /// Running mean over past frames instead of the whole-sequence mean.
    pub causal_mean: bool,
    pub roi_mode: RoiMode,
    pub tracker: TrackerConfig,
    pub out_size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            causal_space_time: false,
            causal_mean: false,
            roi_mode: RoiMode::Tracker,
            tracker: TrackerConfig::default(),
            out_size: 224,
        }
    }
}

/// One preprocessed network input.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedFrame {
    /// Sample index the frame stands for (the `t` of its space-time triple).
    pub t: usize,
    pub frame: Frame,
}

/// Runs the whole video pipeline on one sequence of raw RGB frames:
/// mean removal, ROI tracking, space-time transform, crop and resize.
/// `tool_centers` is required for [`RoiMode::Tool`] and holds the projected
/// tool position per frame.
pub fn preprocess_sequence(
    frames: &[Frame],
    tool_centers: Option<&[(f64, f64)]>,
    config: &PreprocessConfig,
) -> Result<Vec<PreprocessedFrame>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("no frames to preprocess"))?;
    let (h, w) = (first.height, first.width);
    let residual: Vec<Frame> = if config.causal_mean {
        let mut state = None;
        let mut out = Vec::with_capacity(frames.len());
        for f in frames {
            let m = mean_frame_causal(state.take(), f)?;
            out.push(subtract_mean(f, &m)?);
            state = Some(m);
        }
        out
    } else {
        let mean = mean_frame_offline(frames)?;
        frames.iter().map(|f| subtract_mean(f, &mean)).collect::<Result<_>>()?
    };
    let gray: Vec<Frame> = residual.iter().map(to_grayscale).collect::<Result<_>>()?;
    let tc = &config.tracker;
    let boxes: Vec<RoiBox> = match config.roi_mode {
        RoiMode::Tracker => {
            let mut state = TrackerState::default();
            track_roi(&gray, None, tc, &mut state)?.into_iter().map(|t| t.roi).collect()
        }
        RoiMode::Tool => {
            let centers = tool_centers.ok_or_else(|| Error::invalid("tool ROI mode needs tool projections"))?;
            if centers.len() != frames.len() {
                return Err(Error::shape(format!("{} centers", frames.len()), centers.len()));
            }
            centers
                .iter()
                .map(|c| RoiBox::clamped(*c, tc.box_height, tc.box_width, h, w))
                .collect::<Result<_>>()?
        }
        RoiMode::Fixed => {
            let b = RoiBox::clamped((h as f64 / 2.0, w as f64 / 2.0), tc.box_height, tc.box_width, h, w)?;
            vec![b; frames.len()]
        }
    };
    let (t0, t1) = space_time_range(frames.len(), config.delta, config.causal_space_time);
    let mut out = Vec::with_capacity(t1.saturating_sub(t0));
    for t in t0..t1 {
        let stf = space_time(&gray, t, config.delta, config.causal_space_time)?;
        out.push(PreprocessedFrame {
            t,
            frame: crop_resize(&stf.frame, &boxes[t], config.out_size)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rgb(h: usize, w: usize, v: f64) -> Frame {
        Frame::filled(h, w, 3, v, FrameKind::RawRgb)
    }

    fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Frame {
        Frame::new(h, w, c, (0..h * w * c).map(|_| rng.gen::<f64>()).collect(), FrameKind::RawRgb).unwrap()
    }

    #[test]
    fn mean_of_identical_frames() {
        let f = rgb(4, 5, 0.3);
        let m = mean_frame_offline(&[f.clone(), f.clone(), f.clone()]).unwrap();
        assert_eq!(m.count, 3);
        for p in &m.pixels {
            assert!((p - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_of_zero_and_one() {
        let m = mean_frame_offline(&[rgb(2, 2, 0.0), rgb(2, 2, 1.0)]).unwrap();
        assert!(m.pixels.iter().all(|p| *p == 0.5));
    }

    #[test]
    fn mean_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames: Vec<_> = (0..10).map(|_| random_frame(&mut rng, 6, 7, 3)).collect();
        let m = mean_frame_offline(&frames).unwrap();
        for i in 0..m.pixels.len() {
            let mut s = 0.0;
            for f in &frames {
                s += f.pixels[i];
            }
            assert!((m.pixels[i] - s / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_shape_mismatch() {
        assert!(mean_frame_offline(&[rgb(2, 2, 0.0), rgb(2, 3, 0.0)]).is_err());
        assert!(mean_frame_offline(&[]).is_err());
        let m = mean_frame_causal(None, &rgb(2, 2, 0.0)).unwrap();
        assert!(mean_frame_causal(Some(m), &rgb(3, 2, 0.0)).is_err());
    }

    #[test]
    fn causal_mean_converges_to_offline() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frames: Vec<_> = (0..200).map(|_| random_frame(&mut rng, 5, 5, 3)).collect();
        let mut state = None;
        for (k, f) in frames.iter().enumerate() {
            let m = mean_frame_causal(state.take(), f).unwrap();
            if k == 0 {
                assert_eq!(m.pixels, f.pixels);
                assert_eq!(m.count, 1);
            }
            state = Some(m);
        }
        let causal = state.unwrap();
        let offline = mean_frame_offline(&frames).unwrap();
        for (a, b) in causal.pixels.iter().zip(&offline.pixels) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn causal_mean_of_constant_stream() {
        let f = rgb(3, 3, 0.42);
        let mut state = None;
        for _ in 0..20 {
            let m = mean_frame_causal(state.take(), &f).unwrap();
            assert!(m.pixels.iter().all(|p| (p - 0.42).abs() < 1e-15));
            state = Some(m);
        }
    }

    #[test]
    fn subtraction_cases() {
        let f = rgb(2, 2, 0.7);
        let m = mean_frame_offline(&[f.clone()]).unwrap();
        assert!(subtract_mean(&f, &m).unwrap().pixels.iter().all(|p| *p == 0.0));
        let zero = mean_frame_offline(&[rgb(2, 2, 0.0)]).unwrap();
        let out = subtract_mean(&rgb(2, 2, 1.0), &zero).unwrap();
        assert!(out.pixels.iter().all(|p| *p == 1.0));
        assert_eq!(out.kind, FrameKind::MeanRemoved);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_frame(&mut rng, 4, 4, 3);
        let b = random_frame(&mut rng, 4, 4, 3);
        let mb = mean_frame_offline(&[b.clone()]).unwrap();
        let d = subtract_mean(&a, &mb).unwrap();
        for i in 0..d.pixels.len() {
            assert_eq!(d.pixels[i], a.pixels[i] - b.pixels[i]);
            assert!((-1.0..=1.0).contains(&d.pixels[i]));
        }
        assert!(subtract_mean(&rgb(3, 2, 0.0), &mb).is_err());
    }

    #[test]
    fn grayscale_cases() {
        assert!((to_grayscale(&rgb(1, 1, 0.6)).unwrap().pixels[0] - 0.6).abs() < 1e-15);
        let red = Frame::new(1, 1, 3, vec![1.0, 0.0, 0.0], FrameKind::RawRgb).unwrap();
        assert_eq!(to_grayscale(&red).unwrap().pixels[0], 0.299);
        assert_eq!(to_grayscale(&rgb(2, 2, 0.0)).unwrap().pixels, vec![0.0; 4]);
        assert!(to_grayscale(&Frame::filled(1, 1, 1, 0.0, FrameKind::Grayscale)).is_err());
    }

    #[test]
    fn space_time_indices() {
        let frames: Vec<_> = (0..40).map(|i| rgb(2, 2, i as f64 / 40.0)).collect();
        let st = space_time(&frames, 15, 15, false).unwrap();
        assert_eq!(st.sources, [0, 15, 30]);
        let st = space_time(&frames, 30, 15, true).unwrap();
        assert_eq!(st.sources, [0, 15, 30]);
        assert!(space_time(&frames, 14, 15, false).is_err());
        assert!(space_time(&frames, 25, 15, false).is_err());
        assert!(space_time(&frames, 29, 15, true).is_err());
        let same: Vec<_> = (0..5).map(|_| rgb(2, 2, 0.25)).collect();
        let st = space_time(&same, 2, 1, false).unwrap();
        for p in st.frame.pixels.chunks(3) {
            assert_eq!(p[0], p[1]);
            assert_eq!(p[1], p[2]);
        }
    }

    #[test]
    fn space_time_channels_are_bitwise_grayscale() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frames: Vec<_> = (0..31).map(|_| random_frame(&mut rng, 3, 4, 3)).collect();
        let st = space_time(&frames, 15, 15, false).unwrap();
        for (ch, &src) in st.sources.iter().enumerate() {
            let g = to_grayscale(&frames[src]).unwrap();
            for i in 0..g.pixels.len() {
                assert_eq!(st.frame.pixels[3 * i + ch].to_bits(), g.pixels[i].to_bits());
            }
        }
    }

    #[test]
    fn roi_clamping() {
        let b = RoiBox::clamped((0.0, 0.0), 20, 30, 64, 64).unwrap();
        assert!(b.fits(64, 64));
        assert_eq!((b.top(), b.left()), (0, 0));
        let b = RoiBox::clamped((63.0, 63.0), 21, 31, 64, 64).unwrap();
        assert!(b.fits(64, 64));
        assert_eq!(b.top() + b.height, 64);
        assert!(RoiBox::clamped((5.0, 5.0), 65, 10, 64, 64).is_err());
    }

    fn blob_frame(h: usize, w: usize, top: usize, left: usize) -> Frame {
        let mut f = Frame::filled(h, w, 1, 0.0, FrameKind::MeanRemoved);
        for r in top..(top + 10).min(h) {
            for c in left..(left + 10).min(w) {
                f.pixels[r * w + c] = 1.0;
            }
        }
        f
    }

    #[test]
    fn static_sequence_reuses_box() {
        let frames: Vec<_> = (0..5).map(|_| Frame::filled(40, 60, 1, 0.0, FrameKind::MeanRemoved)).collect();
        let cfg = TrackerConfig { box_height: 20, box_width: 30, ..Default::default() };
        let init = RoiBox { center: (12, 20), height: 20, width: 30 };
        let tracks = track_roi(&frames, Some(init), &cfg, &mut TrackerState::default()).unwrap();
        assert!(tracks.iter().all(|t| t.no_motion && t.roi == init));
    }

    #[test]
    fn moving_blob_is_tracked() {
        let (h, w) = (48, 96);
        let frames: Vec<_> = (0..35).map(|k| blob_frame(h, w, 18, 4 + 2 * k)).collect();
        let cfg = TrackerConfig { box_height: 20, box_width: 30, ..Default::default() };
        let tracks = track_roi(&frames, None, &cfg, &mut TrackerState::default()).unwrap();
        for (k, t) in tracks.iter().enumerate() {
            let truth = (18.0 + 4.5, 4.0 + 2.0 * k as f64 + 4.5);
            let d = t.detection.unwrap();
            assert!((d.0 - truth.0).abs() <= 2.0 && (d.1 - truth.1).abs() <= 2.0, "frame {k}: {d:?}");
            let s = t.smoothed;
            assert!((s.0 - truth.0).abs() <= 2.0 && (s.1 - truth.1).abs() <= 2.0, "frame {k}: {s:?}");
            assert!(t.roi.fits(h, w));
        }
    }

    #[test]
    fn corner_blob_box_is_clamped() {
        let frames = vec![blob_frame(40, 40, 0, 0), blob_frame(40, 40, 0, 0)];
        let cfg = TrackerConfig { box_height: 20, box_width: 30, ..Default::default() };
        let tracks = track_roi(&frames, None, &cfg, &mut TrackerState::default()).unwrap();
        for t in tracks {
            assert!(t.roi.fits(40, 40));
            assert_eq!((t.roi.top(), t.roi.left()), (0, 0));
        }
    }

    #[test]
    fn crop_resize_cases() {
        let roi = RoiBox { center: (10, 15), height: 20, width: 30 };
        let c = crop_resize(&rgb(20, 30, 0.4), &roi, 7).unwrap();
        assert!(c.pixels.iter().all(|p| (p - 0.4).abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_frame(&mut rng, 20, 30, 3);
        let id = crop_resize(&f, &roi, 20).unwrap();
        for r in 0..20 {
            for cc in 0..20 {
                for k in 0..3 {
                    assert_eq!(id.at(r, cc, k), f.at(r, cc + 5, k));
                }
            }
        }

        // Checkerboard halved: each output pixel is the mean of a 2x2 block.
        let mut board = Frame::filled(8, 8, 1, 0.0, FrameKind::Grayscale);
        for r in 0..8 {
            for cc in 0..8 {
                board.pixels[r * 8 + cc] = ((r + cc) % 2) as f64 + 0.1 * r as f64;
            }
        }
        let half = crop_resize(&board, &RoiBox { center: (4, 4), height: 8, width: 8 }, 4).unwrap();
        for r in 0..4 {
            for cc in 0..4 {
                let blk = (board.at(2 * r, 2 * cc, 0)
                    + board.at(2 * r + 1, 2 * cc, 0)
                    + board.at(2 * r, 2 * cc + 1, 0)
                    + board.at(2 * r + 1, 2 * cc + 1, 0))
                    / 4.0;
                assert!((half.at(r, cc, 0) - blk).abs() < 1e-9);
            }
        }
        let outside = RoiBox { center: (2, 2), height: 20, width: 30 };
        assert!(crop_resize(&f, &outside, 4).is_err());
    }

    #[test]
    fn pipeline_shapes_and_offsets() {
        let frames: Vec<_> = (0..40)
            .map(|k| {
                let mut f = rgb(24, 32, 0.2);
                let c = 4 + k % 20;
                for r in 8..14 {
                    for cc in c..c + 6 {
                        for ch in 0..3 {
                            f.pixels[(r * 32 + cc) * 3 + ch] = 0.9;
                        }
                    }
                }
                f
            })
            .collect();
        let cfg = PreprocessConfig {
            delta: 5,
            out_size: 8,
            tracker: TrackerConfig { box_height: 16, box_width: 24, ..Default::default() },
            ..Default::default()
        };
        let out = preprocess_sequence(&frames, None, &cfg).unwrap();
        assert_eq!(out.len(), 30);
        assert_eq!(out[0].t, 5);
        assert!(out.iter().all(|p| p.frame.height == 8 && p.frame.channels == 3));
        let causal = PreprocessConfig { causal_space_time: true, causal_mean: true, ..cfg };
        let out = preprocess_sequence(&frames, None, &causal).unwrap();
        assert_eq!(out.len(), 30);
        assert_eq!(out[0].t, 10);
    }
}
