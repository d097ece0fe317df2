//! Composite regression loss `alpha * L_rmse + (1 - alpha) * L_gdl`.
//!
//! Batches are flat row-major `[samples x n]` slices. The gradient-difference
//! term needs temporal order, so callers pass the lengths of the contiguous
//! segments that make up the batch; differences never cross a segment
//! boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shaping function applied to each per-sample error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Rho {
    /// `ln(x^gamma + epsilon)`
    Log { gamma: f64, epsilon: f64 },
    Linear,
}

impl Rho {
    /// Value and derivative at `x >= 0`.
    pub fn eval(&self, x: f64) -> Result<(f64, f64)> {
        match *self {
            Rho::Log { gamma, epsilon } => rho_log(x, gamma, epsilon),
            Rho::Linear => Ok(rho_linear(x)),
        }
    }
}

pub fn rho_log(x: f64, gamma: f64, epsilon: f64) -> Result<(f64, f64)> {
    if x < 0.0 || !x.is_finite() {
        return Err(Error::invalid(format!("log rho needs a finite x >= 0, got {x}")));
    }
    let xg = x.powf(gamma);
    let d = if x == 0.0 {
        // gamma x^(gamma-1) at 0: 0 for gamma > 1, 1 for gamma == 1.
        if gamma > 1.0 {
            0.0
        } else if gamma == 1.0 {
            1.0 / epsilon
        } else {
            f64::INFINITY
        }
    } else {
        gamma * x.powf(gamma - 1.0) / (xg + epsilon)
    };
    Ok(((xg + epsilon).ln(), d))
}

pub fn rho_linear(x: f64) -> (f64, f64) {
    (x, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoKind {
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub rho: RhoKind,
    pub gamma_rmse: f64,
    pub gamma_gdl: f64,
    pub epsilon: f64,
}

impl LossConfig {
    /// CNN stage: alpha 0.8, log rho with gamma 2 (RMSE) and 1 (GDL),
    /// epsilon 1/100.
    pub fn cnn_stage() -> Self {
        Self {
            alpha: 0.8,
            rho: RhoKind::Log,
            gamma_rmse: 2.0,
            gamma_gdl: 1.0,
            epsilon: 0.01,
        }
    }

    /// Loss A: `0.75 L_rmse + 0.25 L_gdl`, linear rho.
    pub fn loss_a() -> Self {
        Self {
            alpha: 0.75,
            rho: RhoKind::Linear,
            gamma_rmse: 1.0,
            gamma_gdl: 1.0,
            epsilon: 0.01,
        }
    }

    /// Loss B: `L_rmse` only, linear rho.
    pub fn loss_b() -> Self {
        Self { alpha: 1.0, ..Self::loss_a() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.rho == RhoKind::Log {
            if !(self.epsilon > 0.0) {
                return Err(Error::Config("epsilon must be positive for log rho".into()));
            }
            if !(self.gamma_rmse > 0.0 && self.gamma_gdl > 0.0) {
                return Err(Error::Config("gamma must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn rmse_rho(&self) -> Rho {
        match self.rho {
            RhoKind::Log => Rho::Log { gamma: self.gamma_rmse, epsilon: self.epsilon },
            RhoKind::Linear => Rho::Linear,
        }
    }

    pub fn gdl_rho(&self) -> Rho {
        match self.rho {
            RhoKind::Log => Rho::Log { gamma: self.gamma_gdl, epsilon: self.epsilon },
            RhoKind::Linear => Rho::Linear,
        }
    }
}

/// Compensated (Neumaier) running sum, so that per-sample terms unaffected
/// by a perturbation cancel exactly between two evaluations.
#[derive(Default)]
struct Sum {
    sum: f64,
    comp: f64,
}

impl Sum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Loss value with its gradient with respect to the estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_batch(y: &[f64], yhat: &[f64], n: usize) -> Result<usize> {
    if n == 0 || y.len() != yhat.len() || y.len() % n != 0 {
        return Err(Error::shape(
            format!("{} values in rows of {n}", y.len()),
            format!("{} estimates", yhat.len()),
        ));
    }
    Ok(y.len() / n)
}

/// `sum_i rho(x_i)` with `x_i` the per-sample root mean squared error.
pub fn loss_rmse(y: &[f64], yhat: &[f64], n: usize, rho: Rho) -> Result<LossValue> {
    let m = check_batch(y, yhat, n)?;
    let mut value = Sum::default();
    let mut grad = vec![0.0; y.len()];
    for i in 0..m {
        let row = i * n..(i + 1) * n;
        let mse = y[row.clone()]
            .iter()
            .zip(&yhat[row.clone()])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64;
        let x = mse.sqrt();
        let (r, dr) = rho.eval(x)?;
        value.add(r);
        // At x = 0 the subgradient 0 is used.
        if x > 0.0 {
            let k = dr / (n as f64 * x);
            for j in row {
                grad[j] = k * (yhat[j] - y[j]);
            }
        }
    }
    Ok(LossValue { value: value.total(), grad })
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `sum_i rho(x_i)` with `x_i = sum_j | |dY_ij| - |dYhat_ij| |`, differences
/// taken between consecutive samples inside each segment.
pub fn loss_gdl(y: &[f64], yhat: &[f64], n: usize, segments: &[usize], rho: Rho) -> Result<LossValue> {
    let m = check_batch(y, yhat, n)?;
    if segments.iter().sum::<usize>() != m {
        return Err(Error::shape(format!("segments covering {m} samples"), format!("{:?}", segments)));
    }
    if let Some(s) = segments.iter().find(|s| **s < 2) {
        return Err(Error::invalid(format!("gradient-difference segments need >= 2 samples, got {s}")));
    }
    let mut value = Sum::default();
    let mut grad = vec![0.0; y.len()];
    let mut start = 0;
    for &len in segments {
        for i in start + 1..start + len {
            let mut x = 0.0;
            for j in 0..n {
                let dy = y[i * n + j] - y[(i - 1) * n + j];
                let dh = yhat[i * n + j] - yhat[(i - 1) * n + j];
                x += (dy.abs() - dh.abs()).abs();
            }
            let (r, dr) = rho.eval(x)?;
            value.add(r);
            for j in 0..n {
                let dy = y[i * n + j] - y[(i - 1) * n + j];
                let dh = yhat[i * n + j] - yhat[(i - 1) * n + j];
                let g = dr * sign(dh.abs() - dy.abs()) * sign(dh);
                grad[i * n + j] += g;
                grad[(i - 1) * n + j] -= g;
            }
        }
        start += len;
    }
    Ok(LossValue { value: value.total(), grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeLoss {
    pub total: f64,
    pub rmse: f64,
    /// `None` when the batch has no valid gradient-difference segments and
    /// the term does not contribute (alpha = 1).
    pub gdl: Option<f64>,
    pub grad: Vec<f64>,
}

/// `alpha * L_rmse + (1 - alpha) * L_gdl`. With `alpha == 1` the total is
/// exactly `L_rmse`.
pub fn loss_composite(
    y: &[f64],
    yhat: &[f64],
    n: usize,
    segments: &[usize],
    config: &LossConfig,
) -> Result<CompositeLoss> {
    config.validate()?;
    let r = loss_rmse(y, yhat, n, config.rmse_rho())?;
    let gdl_valid = !segments.is_empty() && segments.iter().all(|s| *s >= 2);
    if config.alpha == 1.0 {
        let gdl = if gdl_valid {
            Some(loss_gdl(y, yhat, n, segments, config.gdl_rho())?.value)
        } else {
            None
        };
        return Ok(CompositeLoss {
            total: r.value,
            rmse: r.value,
            gdl,
            grad: r.grad,
        });
    }
    let g = loss_gdl(y, yhat, n, segments, config.gdl_rho())?;
    let a = config.alpha;
    Ok(CompositeLoss {
        total: a * r.value + (1.0 - a) * g.value,
        rmse: r.value,
        gdl: Some(g.value),
        grad: r
            .grad
            .iter()
            .zip(&g.grad)
            .map(|(gr, gg)| a * gr + (1.0 - a) * gg)
            .collect(),
    })
}
