//! Per-component error and correlation metrics over force sequences.
//!
//! Sequences are flat row-major `[samples x n]` slices, `n` usually 6.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ForceNormalization, FORCE_DIM, FORCE_LABELS};
use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Tolerance used by the mean relative error.
pub const MRE_DELTA: f64 = 1e-3;

fn rows(y: &[f64], yhat: &[f64], n: usize) -> Result<usize> {
    if n == 0 || y.len() != yhat.len() || y.len() % n != 0 {
        return Err(Error::shape(format!("{} values in rows of {n}", y.len()), yhat.len()));
    }
    Ok(y.len() / n)
}

/// Root mean squared error per component.
pub fn rmse_metric(y: &[f64], yhat: &[f64], n: usize) -> Result<Vec<f64>> {
    let m = rows(y, yhat, n)?;
    if m == 0 {
        return Err(Error::invalid("RMSE of an empty sequence"));
    }
    let mut acc = vec![0.0; n];
    for (row, hrow) in y.chunks_exact(n).zip(yhat.chunks_exact(n)) {
        for j in 0..n {
            let e = row[j] - hrow[j];
            acc[j] += e * e;
        }
    }
    Ok(acc.into_iter().map(|s| (s / m as f64).sqrt()).collect())
}

/// Sample Pearson correlation per component; `None` where either signal
/// is constant.
pub fn pcc(y: &[f64], yhat: &[f64], n: usize) -> Result<Vec<Option<f64>>> {
    let m = rows(y, yhat, n)?;
    if m < 2 {
        return Err(Error::invalid("correlation needs at least two samples"));
    }
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let a: Vec<f64> = y.iter().skip(j).step_by(n).copied().collect();
        let b: Vec<f64> = yhat.iter().skip(j).step_by(n).copied().collect();
        let ma = a.iter().sum::<f64>() / m as f64;
        let mb = b.iter().sum::<f64>() / m as f64;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, z) in a.iter().zip(&b) {
            let (da, db) = (x - ma, z - mb);
            sab += da * db;
            saa += da * da;
            sbb += db * db;
        }
        // relative test so a signal of identical values with rounding noise
        // in its mean still counts as constant
        let flat = |s: f64, v: &[f64], mean: f64| {
            s == 0.0 || s.sqrt() <= 1e-12 * (v.len() as f64).sqrt() * mean.abs().max(f64::MIN_POSITIVE)
        };
        if flat(saa, &a, ma) || flat(sbb, &b, mb) {
            out.push(None);
        } else {
            out.push(Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)));
        }
    }
    Ok(out)
}

/// Mean relative error of one batch: `(1/M) sum_i sum_j |e_ij| / delta`.
pub fn mre(y: &[f64], yhat: &[f64], n: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("MRE tolerance must be positive, got {delta}")));
    }
    let m = rows(y, yhat, n)?;
    if m == 0 {
        return Err(Error::invalid("MRE of an empty batch"));
    }
    let s: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / delta / m as f64)
}

/// MRE averaged over consecutive batches of `batch` samples (the last
/// batch may be shorter).
pub fn mre_batched(y: &[f64], yhat: &[f64], n: usize, batch: usize, delta: f64) -> Result<f64> {
    rows(y, yhat, n)?;
    if batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let chunk = batch * n;
    let mut total = 0.0;
    let mut count = 0;
    for (a, b) in y.chunks(chunk).zip(yhat.chunks(chunk)) {
        total += mre(a, b, n, delta)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("MRE of an empty sequence"));
    }
    Ok(total / count as f64)
}

/// `||r_j||_2` per component.
pub fn l2_per_component(y: &[f64], yhat: &[f64], n: usize) -> Result<Vec<f64>> {
    let m = rows(y, yhat, n)?;
    if m == 0 {
        return Err(Error::invalid("L2 error of an empty batch"));
    }
    let mut acc = vec![0.0; n];
    for (row, hrow) in y.chunks_exact(n).zip(yhat.chunks_exact(n)) {
        for j in 0..n {
            acc[j] += (row[j] - hrow[j]).powi(2);
        }
    }
    Ok(acc.into_iter().map(f64::sqrt).collect())
}

/// Max / min / mean over the defined entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    /// Number of entries that were defined.
    pub defined: usize,
}

pub fn summarize(values: &[Option<f64>]) -> Option<Summary> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    Some(Summary {
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        defined: v.len(),
    })
}

pub fn summarize_all(values: &[f64]) -> Option<Summary> {
    summarize(&values.iter().map(|v| Some(*v)).collect::<Vec<_>>())
}

/// Everything reported for one estimate sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub task: String,
    pub samples: usize,
    pub rmse_norm: Vec<f64>,
    pub rmse_phys: Vec<f64>,
    pub pcc: Vec<Option<f64>>,
    pub mre: f64,
    pub l2: Vec<f64>,
}

impl MetricReport {
    /// Metrics of normalized estimates; physical RMSE uses the force
    /// normalization scales.
    pub fn compute(label: &str, task: &str, y: &[f64], yhat: &[f64], norm: &ForceNormalization) -> Result<Self> {
        let rmse_norm = rmse_metric(y, yhat, FORCE_DIM)?;
        let rmse_phys = rmse_to_physical(&rmse_norm, norm);
        Ok(Self {
            label: label.to_string(),
            task: task.to_string(),
            samples: y.len() / FORCE_DIM,
            pcc: pcc(y, yhat, FORCE_DIM)?,
            mre: mre(y, yhat, FORCE_DIM, MRE_DELTA)?,
            l2: l2_per_component(y, yhat, FORCE_DIM)?,
            rmse_norm,
            rmse_phys,
        })
    }

    /// Mean PCC over defined components.
    pub fn mean_pcc(&self) -> Option<f64> {
        summarize(&self.pcc).map(|s| s.mean)
    }

    pub fn pcc_summary(&self) -> Option<Summary> {
        summarize(&self.pcc)
    }

    pub fn rmse_summary(&self) -> Summary {
        summarize_all(&self.rmse_norm).expect("six components")
    }
}

/// Normalized RMSE times the per-component scale.
pub fn rmse_to_physical(rmse_norm: &[f64], norm: &ForceNormalization) -> Vec<f64> {
    rmse_norm.iter().zip(&norm.scale).map(|(r, s)| r * s).collect()
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub const METRICS_HEADER: &str = "component,rmse_norm,rmse_phys,pcc,task";

/// One row per component per report.
pub fn metrics_csv(reports: &[MetricReport]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in reports {
        for j in 0..FORCE_DIM {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{},{}",
                FORCE_LABELS[j],
                r.rmse_norm[j],
                r.rmse_phys[j],
                fmt_opt(r.pcc[j]),
                r.task
            );
        }
    }
    s
}

pub const SUMMARY_HEADER: &str = "case,task,metric,max,min,mean,defined";

/// Max/min/mean rows for PCC and RMSE per report.
pub fn summary_csv(reports: &[MetricReport]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in reports {
        match r.pcc_summary() {
            Some(p) => {
                let _ = writeln!(s, "{},{},pcc,{:.6},{:.6},{:.6},{}", r.label, r.task, p.max, p.min, p.mean, p.defined);
            }
            None => {
                let _ = writeln!(s, "{},{},pcc,NA,NA,NA,0", r.label, r.task);
            }
        }
        let q = r.rmse_summary();
        let _ = writeln!(s, "{},{},rmse,{:.6},{:.6},{:.6},{}", r.label, r.task, q.max, q.min, q.mean, q.defined);
    }
    s
}

pub fn write_metrics(path: &Path, reports: &[MetricReport]) -> Result<()> {
    write_atomic(path, metrics_csv(reports).as_bytes())
}

pub fn write_summary(path: &Path, reports: &[MetricReport]) -> Result<()> {
    write_atomic(path, summary_csv(reports).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse_metric(&[1.0, 2.0], &[1.0, 2.0], 1).unwrap(), vec![0.0]);
        assert_eq!(rmse_metric(&[1.0, 2.0], &[2.0, 3.0], 1).unwrap(), vec![1.0]);
        assert_eq!(rmse_metric(&[0.0, 0.0], &[3.0, 4.0], 1).unwrap(), vec![12.5f64.sqrt()]);
        assert!(rmse_metric(&[0.0], &[0.0, 1.0], 1).is_err());
    }

    #[test]
    fn pcc_cases() {
        let y = [1.0, -2.0, 0.5, 0.5];
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let aff: Vec<f64> = y.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pcc(&y, &y, 1).unwrap()[0].unwrap() - 1.0).abs() < 1e-15);
        assert!((pcc(&y, &neg, 1).unwrap()[0].unwrap() + 1.0).abs() < 1e-15);
        assert!((pcc(&y, &aff, 1).unwrap()[0].unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], 1).unwrap(), vec![None]);
        assert_eq!(pcc(&[0.1; 5], &[0.3, 0.2, 0.1, 0.0, 0.5], 1).unwrap(), vec![None]);
        assert!(pcc(&[1.0], &[1.0], 1).is_err());
    }

    #[test]
    fn mre_cases() {
        assert_eq!(mre(&[1.0], &[1.0], 1, MRE_DELTA).unwrap(), 0.0);
        assert_eq!(mre(&[0.0], &[1e-3], 1, 1e-3).unwrap(), 1.0);
        assert_eq!(mre(&[0.0; 4], &[1e-3; 4], 2, 1e-3).unwrap(), 2.0);
        assert!(mre(&[0.0], &[0.0], 1, 0.0).is_err());
        // two batches of one sample: errors 1e-3 and 3e-3
        assert_eq!(mre_batched(&[0.0, 0.0], &[1e-3, 3e-3], 1, 1, 1e-3).unwrap(), 2.0);
    }

    #[test]
    fn l2_cases() {
        let e = [3.0, 4.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(l2_per_component(&[0.0; 6], &e, 6).unwrap(), e.to_vec());
        assert_eq!(l2_per_component(&[0.0, 0.0], &[1.0, 1.0], 1).unwrap(), vec![2f64.sqrt()]);
        assert_eq!(l2_per_component(&[1.0; 6], &[1.0; 6], 6).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn summary_rows() {
        let s = summarize_all(&[0.7; 6]).unwrap();
        assert_eq!((s.max, s.min), (0.7, 0.7));
        assert!((s.mean - 0.7).abs() < 1e-15);
        let vals = [0.5864, 0.4537, 0.8957, 0.4246, 0.6520, 0.2674];
        let s = summarize_all(&vals).unwrap();
        assert_eq!(s.max, 0.8957);
        assert_eq!(s.min, 0.2674);
        let mut brute = 0.0;
        for v in vals {
            brute += v;
        }
        assert_eq!(s.mean, brute / 6.0);
        let s = summarize(&[Some(1.0), None, Some(0.0)]).unwrap();
        assert_eq!((s.mean, s.defined), (0.5, 2));
        assert!(summarize(&[None]).is_none());
    }

    #[test]
    fn report_csv_layout() {
        let norm = ForceNormalization { offset: [0.0; 6], scale: [0.25, 0.25, 0.25, 0.1, 0.1, 0.1] };
        let y: Vec<f64> = (0..24).map(|k| (k as f64).sin()).collect();
        let yh: Vec<f64> = y.iter().map(|v| v * 0.9 + 0.05).collect();
        let r = MetricReport::compute("III-A", "pushing", &y, &yh, &norm).unwrap();
        let csv = metrics_csv(&[r.clone()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 7);
        assert!(lines[3].starts_with("Fz,"));
        assert!(lines[3].ends_with(",pushing"));
        for j in 0..6 {
            assert!((r.rmse_phys[j] - r.rmse_norm[j] * norm.scale[j]).abs() <= 1e-12);
        }
        assert!(summary_csv(&[r]).contains("III-A,pushing,pcc,"));
    }

    proptest! {
        #[test]
        fn pcc_affine_invariant(y in proptest::collection::vec(-5.0f64..5.0, 8..40),
                                a in 0.1f64..10.0, b in -5.0f64..5.0, c in 0.1f64..10.0, d in -5.0f64..5.0) {
            let yh: Vec<f64> = y.iter().enumerate().map(|(k, v)| v * 0.5 + (k as f64 * 0.7).sin()).collect();
            let base = pcc(&y, &yh, 1).unwrap()[0];
            let ty: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            let th: Vec<f64> = yh.iter().map(|v| c * v + d).collect();
            let moved = pcc(&ty, &th, 1).unwrap()[0];
            match (base, moved) {
                (Some(p), Some(q)) => prop_assert!((p - q).abs() < 1e-9),
                (p, q) => prop_assert_eq!(p.is_none(), q.is_none()),
            }
        }

        #[test]
        fn rmse_of_offset(y in proptest::collection::vec(-5.0f64..5.0, 6..60), c in -3.0f64..3.0) {
            let n = 6;
            let y = &y[..y.len() / n * n];
            let yh: Vec<f64> = y.iter().map(|v| v + c).collect();
            for r in rmse_metric(y, &yh, n).unwrap() {
                prop_assert!((r - c.abs()).abs() < 1e-12);
            }
        }

        #[test]
        fn mre_scales_inverse_in_delta(e in proptest::collection::vec(-1.0f64..1.0, 6), k in 0.1f64..10.0) {
            let z = vec![0.0; 6];
            let a = mre(&z, &e, 6, 1e-3).unwrap();
            let b = mre(&z, &e, 6, 1e-3 * k).unwrap();
            prop_assert!((a - b * k).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}
