//! Linear ARMAX baseline from tool signals to forces.
//!
//! Model per output: `A(q) y = B(q) u + C(q) e` with
//! `A = 1 + a1 q^-1 + ... + a_na q^-na`, `C = 1 + c1 q^-1 + ...` and, for
//! every input `j`, `B_j = b_j1 q^-nk + ... + b_j,nb q^-(nk+nb-1)`.
//! Fitting runs extended least squares, then Levenberg-Marquardt on the
//! one-step prediction error.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Ridge added to the normal equations when they are (near) singular.
pub const RIDGE: f64 = 1e-8;
const ELS_MAX_ITERS: usize = 50;
const ELS_TOL: f64 = 1e-8;
const LM_MAX_ITERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmaxOrders {
    pub na: usize,
    pub nb: usize,
    pub nc: usize,
    pub nk: usize,
}

impl Default for ArmaxOrders {
    fn default() -> Self {
        Self { na: 2, nb: 2, nc: 2, nk: 1 }
    }
}

impl ArmaxOrders {
    pub fn validate(&self, inputs: usize) -> Result<()> {
        if self.na + self.nb * inputs + self.nc == 0 {
            return Err(Error::invalid("ARMAX model has no coefficients"));
        }
        Ok(())
    }

    /// Largest lag used by the regressor.
    pub fn max_lag(&self) -> usize {
        let b = if self.nb > 0 { self.nk + self.nb - 1 } else { 0 };
        self.na.max(b).max(self.nc)
    }

    pub fn n_params(&self, inputs: usize) -> usize {
        self.na + self.nb * inputs + self.nc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaxModel {
    pub orders: ArmaxOrders,
    pub inputs: usize,
    pub a: Vec<f64>,
    /// `b[j][k]`: input `j`, lag `nk + k`.
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub noise_var: f64,
    /// The ridge fallback was needed somewhere during the fit.
    pub ridge: bool,
}

/// One aligned sequence for a single output: `u` is `[len x inputs]`.
#[derive(Debug, Clone, Copy)]
pub struct IoSeq<'a> {
    pub u: &'a [f64],
    pub y: &'a [f64],
}

impl ArmaxModel {
    pub fn zeros(orders: ArmaxOrders, inputs: usize) -> Self {
        Self {
            orders,
            inputs,
            a: vec![0.0; orders.na],
            b: vec![vec![0.0; orders.nb]; inputs],
            c: vec![0.0; orders.nc],
            noise_var: 0.0,
            ridge: false,
        }
    }

    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.a.clone();
        for bj in &self.b {
            t.extend_from_slice(bj);
        }
        t.extend_from_slice(&self.c);
        t
    }

    fn set_theta(&mut self, t: &[f64]) {
        let o = self.orders;
        self.a.copy_from_slice(&t[..o.na]);
        for (j, bj) in self.b.iter_mut().enumerate() {
            bj.copy_from_slice(&t[o.na + j * o.nb..o.na + (j + 1) * o.nb]);
        }
        self.c.copy_from_slice(&t[o.na + self.inputs * o.nb..]);
    }

    /// Roots of `z^na + a1 z^(na-1) + ... + a_na` all inside the unit circle.
    pub fn is_stable(&self) -> bool {
        poly_stable(&self.a)
    }

    /// Regressor `[-y lags, u lags, e lags]` at time `t`.
    fn regressor(&self, u: &[f64], y: &[f64], e: &[f64], t: usize, out: &mut [f64]) {
        let o = self.orders;
        let m = self.inputs;
        for i in 0..o.na {
            out[i] = -y[t - 1 - i];
        }
        for j in 0..m {
            for k in 0..o.nb {
                out[o.na + j * o.nb + k] = u[(t - o.nk - k) * m + j];
            }
        }
        for i in 0..o.nc {
            out[o.na + m * o.nb + i] = e[t - 1 - i];
        }
    }

    fn check_seq(&self, s: &IoSeq) -> Result<usize> {
        let len = s.y.len();
        if s.u.len() != len * self.inputs {
            return Err(Error::shape(len * self.inputs, s.u.len()));
        }
        Ok(len)
    }

    /// Prediction errors and (optionally) their Jacobian rows for one sequence.
    /// Samples before the first full regressor have zero error.
    fn residuals(&self, s: &IoSeq, mut jac: Option<&mut Vec<f64>>) -> Vec<f64> {
        let len = s.y.len();
        let t0 = self.orders.max_lag();
        let p = self.orders.n_params(self.inputs);
        let theta = self.theta();
        let mut e = vec![0.0; len];
        let mut phi = vec![0.0; p];
        if let Some(j) = jac.as_deref_mut() {
            j.clear();
            j.resize(len * p, 0.0);
        }
        for t in t0..len {
            self.regressor(s.u, s.y, &e, t, &mut phi);
            e[t] = s.y[t] - dot(&phi, &theta);
            if let Some(j) = jac.as_deref_mut() {
                // d e_t / d theta = -phi_t - sum_k c_k d e_{t-k} / d theta
                for q in 0..p {
                    let mut v = -phi[q];
                    for (k, ck) in self.c.iter().enumerate() {
                        v -= ck * j[(t - 1 - k) * p + q];
                    }
                    j[t * p + q] = v;
                }
            }
        }
        e
    }

    /// One-step-ahead prediction. The first `max_lag` samples are history
    /// and are returned unchanged.
    pub fn predict(&self, u: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let s = IoSeq { u, y };
        let len = self.check_seq(&s)?;
        if len <= self.orders.max_lag() {
            return Err(Error::invalid(format!(
                "one-step prediction needs more than {} samples of history, got {len}",
                self.orders.max_lag()
            )));
        }
        let e = self.residuals(&s, None);
        Ok(y.iter().zip(&e).map(|(y, e)| y - e).collect())
    }

    /// Free-run simulation from the inputs alone (noise set to zero); the
    /// first `max_lag` outputs are taken from `y_init`.
    pub fn simulate(&self, u: &[f64], y_init: &[f64]) -> Result<Vec<f64>> {
        let len = u.len() / self.inputs.max(1);
        if self.inputs > 0 && u.len() != len * self.inputs {
            return Err(Error::shape(len * self.inputs, u.len()));
        }
        let t0 = self.orders.max_lag().min(len);
        if y_init.len() < t0 {
            return Err(Error::shape(t0, y_init.len()));
        }
        let o = self.orders;
        let m = self.inputs;
        let mut y = y_init[..t0].to_vec();
        y.resize(len, 0.0);
        for t in t0..len {
            let mut v = 0.0;
            for i in 0..o.na {
                v -= self.a[i] * y[t - 1 - i];
            }
            for j in 0..m {
                for k in 0..o.nb {
                    v += self.b[j][k] * u[(t - o.nk - k) * m + j];
                }
            }
            y[t] = v;
        }
        Ok(y)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn poly_stable(a: &[f64]) -> bool {
    let n = a.len();
    if n == 0 {
        return true;
    }
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for (k, ak) in a.iter().enumerate() {
        comp[(0, k)] = -ak;
    }
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    comp.complex_eigenvalues().iter().all(|z| z.norm() < 1.0)
}

/// Solves `h x = g` for symmetric positive semi-definite `h`; falls back to
/// a `RIDGE` diagonal when `h` is singular or badly conditioned.
fn solve_normal(h: &DMatrix<f64>, g: &DVector<f64>) -> (DVector<f64>, bool) {
    if let Some(ch) = h.clone().cholesky() {
        let l = ch.l_dirty();
        let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)]).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if max > 0.0 && min / max > 1e-7 {
            let x = ch.solve(g);
            if x.iter().all(|v| v.is_finite()) {
                return (x, false);
            }
        }
    }
    let mut r = h.clone();
    for i in 0..r.nrows() {
        r[(i, i)] += RIDGE;
    }
    let x = match r.clone().cholesky() {
        Some(ch) => ch.solve(g),
        None => r.lu().solve(g).unwrap_or_else(|| DVector::zeros(g.len())),
    };
    (x, true)
}

fn sse(model: &ArmaxModel, data: &[IoSeq]) -> f64 {
    data.iter().map(|s| model.residuals(s, None).iter().map(|e| e * e).sum::<f64>()).sum()
}

/// Fits one output on one or more aligned sequences.
pub fn fit_armax(data: &[IoSeq], inputs: usize, orders: ArmaxOrders) -> Result<ArmaxModel> {
    orders.validate(inputs)?;
    let mut model = ArmaxModel::zeros(orders, inputs);
    let p = orders.n_params(inputs);
    let t0 = orders.max_lag();
    let mut rows = 0;
    for s in data {
        let len = model.check_seq(s)?;
        if s.y.iter().chain(s.u).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in ARMAX data".into()));
        }
        rows += len.saturating_sub(t0);
    }
    if rows <= 10 * (orders.na + orders.nb + orders.nc) || rows < p {
        return Err(Error::invalid(format!("ARMAX fit needs more samples (have {rows} regression rows)")));
    }

    // extended least squares: regress on the residuals of the previous pass
    let mut resid: Vec<Vec<f64>> = data.iter().map(|s| vec![0.0; s.y.len()]).collect();
    let mut phi = vec![0.0; p];
    for _ in 0..ELS_MAX_ITERS {
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut g = DVector::<f64>::zeros(p);
        for (s, e) in data.iter().zip(&resid) {
            for t in t0..s.y.len() {
                model.regressor(s.u, s.y, e, t, &mut phi);
                let v = DVector::from_column_slice(&phi);
                h.ger(1.0, &v, &v, 1.0);
                g.axpy(s.y[t], &v, 1.0);
            }
        }
        let (x, ridged) = solve_normal(&h, &g);
        model.ridge |= ridged;
        let old = DVector::from_vec(model.theta());
        let change = (&x - &old).norm() / x.norm().max(1e-300);
        let mut next = model.clone();
        next.set_theta(x.as_slice());
        // an unstable noise filter makes the residual recursion diverge
        if !x.iter().all(|v| v.is_finite()) || !poly_stable(&next.c) {
            break;
        }
        model = next;
        if orders.nc == 0 || change < ELS_TOL {
            break;
        }
        resid = data.iter().map(|s| model.residuals(s, None)).collect();
    }

    // Levenberg-Marquardt on the one-step prediction error
    if orders.nc > 0 {
        let mut cost = sse(&model, data);
        let mut lambda = 1e-3;
        let mut jac = Vec::new();
        for _ in 0..LM_MAX_ITERS {
            let mut h = DMatrix::<f64>::zeros(p, p);
            let mut g = DVector::<f64>::zeros(p);
            for s in data {
                let e = model.residuals(s, Some(&mut jac));
                for (t, et) in e.iter().enumerate().skip(t0) {
                    let v = DVector::from_column_slice(&jac[t * p..(t + 1) * p]);
                    h.ger(1.0, &v, &v, 1.0);
                    g.axpy(*et, &v, 1.0);
                }
            }
            if !h.iter().all(|v| v.is_finite()) {
                break;
            }
            let theta = DVector::from_vec(model.theta());
            let mut improved = false;
            while lambda < 1e12 {
                let mut damped = h.clone();
                for i in 0..p {
                    damped[(i, i)] += lambda * h[(i, i)].max(RIDGE);
                }
                let (step, _) = solve_normal(&damped, &g);
                let mut trial = model.clone();
                trial.set_theta((&theta - &step).as_slice());
                let c = sse(&trial, data);
                if c.is_finite() && c < cost && poly_stable(&trial.c) {
                    let rel = (cost - c) / cost.max(1e-300);
                    model = trial;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = rel > 1e-12;
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
    }
    model.noise_var = sse(&model, data) / rows as f64;
    if !model.theta().iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("ARMAX fit produced non-finite coefficients".into()));
    }
    if !model.is_stable() {
        log::warn!("fitted A polynomial has roots outside the unit circle");
    }
    Ok(model)
}

/// Independent single-output fits for every column of `y` (`[len x outputs]`).
pub fn fit_miso(seqs: &[(&[f64], &[f64])], inputs: usize, outputs: usize, orders: ArmaxOrders) -> Result<Vec<ArmaxModel>> {
    if seqs.is_empty() || seqs.iter().all(|(_, y)| y.is_empty()) {
        return Err(Error::invalid("ARMAX fit on empty data"));
    }
    let cols: Vec<Vec<Vec<f64>>> = (0..outputs)
        .map(|k| seqs.iter().map(|(_, y)| y.iter().skip(k).step_by(outputs).copied().collect()).collect())
        .collect();
    for (u, y) in seqs {
        if y.len() % outputs != 0 {
            return Err(Error::shape(outputs, y.len()));
        }
        if u.len() != y.len() / outputs * inputs {
            return Err(Error::shape(y.len() / outputs * inputs, u.len()));
        }
    }
    cols.iter()
        .map(|col| {
            let data: Vec<IoSeq> = seqs.iter().zip(col).map(|((u, _), y)| IoSeq { u, y }).collect();
            fit_armax(&data, inputs, orders)
        })
        .collect()
}

/// Free-run simulation of every output, flat `[len x outputs]`; history
/// comes from the first rows of `y`.
pub fn simulate_miso(models: &[ArmaxModel], u: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let n = models.len();
    if n == 0 || y.len() % n != 0 {
        return Err(Error::shape(n, y.len()));
    }
    let len = y.len() / n;
    let mut out = vec![0.0; y.len()];
    for (k, m) in models.iter().enumerate() {
        let col: Vec<f64> = y.iter().skip(k).step_by(n).copied().collect();
        let sim = m.simulate(u, &col)?;
        if sim.len() != len {
            return Err(Error::shape(len, sim.len()));
        }
        for (t, v) in sim.into_iter().enumerate() {
            out[t * n + k] = v;
        }
    }
    Ok(out)
}

pub const COEF_HEADER: &str = "output,name,value";

/// Named coefficients, one row each.
pub fn models_csv(models: &[ArmaxModel]) -> String {
    let mut s = String::from(COEF_HEADER);
    s.push('\n');
    for (k, m) in models.iter().enumerate() {
        let o = m.orders;
        for (name, v) in [("na", o.na), ("nb", o.nb), ("nc", o.nc), ("nk", o.nk), ("inputs", m.inputs)] {
            let _ = writeln!(s, "{k},{name},{v}");
        }
        for (i, v) in m.a.iter().enumerate() {
            let _ = writeln!(s, "{k},a{},{v:e}", i + 1);
        }
        for (j, bj) in m.b.iter().enumerate() {
            for (i, v) in bj.iter().enumerate() {
                let _ = writeln!(s, "{k},b{}_{},{v:e}", j + 1, i + 1);
            }
        }
        for (i, v) in m.c.iter().enumerate() {
            let _ = writeln!(s, "{k},c{},{v:e}", i + 1);
        }
        let _ = writeln!(s, "{k},noise_var,{:e}", m.noise_var);
    }
    s
}

pub fn save_models(path: &Path, models: &[ArmaxModel]) -> Result<()> {
    write_atomic(path, models_csv(models).as_bytes())
}

pub fn load_models(path: &Path) -> Result<Vec<ArmaxModel>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_models(&text).map_err(|r| Error::format(path, r))
}

fn parse_models(text: &str) -> std::result::Result<Vec<ArmaxModel>, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(COEF_HEADER) {
        return Err("missing coefficient header".into());
    }
    let mut raw: Vec<Vec<(String, f64)>> = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(format!("bad row '{line}'"));
        }
        let k: usize = f[0].parse().map_err(|_| format!("bad output index in '{line}'"))?;
        let v: f64 = f[2].parse().map_err(|_| format!("bad value in '{line}'"))?;
        if k > raw.len() {
            return Err(format!("output {k} out of order"));
        }
        if k == raw.len() {
            raw.push(Vec::new());
        }
        raw[k].push((f[1].to_string(), v));
    }
    raw.into_iter()
        .map(|rows| {
            let get = |name: &str| {
                rows.iter().find(|(n, _)| n == name).map(|(_, v)| *v).ok_or_else(|| format!("missing {name}"))
            };
            let orders = ArmaxOrders {
                na: get("na")? as usize,
                nb: get("nb")? as usize,
                nc: get("nc")? as usize,
                nk: get("nk")? as usize,
            };
            let inputs = get("inputs")? as usize;
            let mut m = ArmaxModel::zeros(orders, inputs);
            for i in 0..orders.na {
                m.a[i] = get(&format!("a{}", i + 1))?;
            }
            for j in 0..inputs {
                for i in 0..orders.nb {
                    m.b[j][i] = get(&format!("b{}_{}", j + 1, i + 1))?;
                }
            }
            for i in 0..orders.nc {
                m.c[i] = get(&format!("c{}", i + 1))?;
            }
            m.noise_var = get("noise_var")?;
            Ok(m)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::rng_for;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn first_order(len: usize, sigma: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = rng_for(seed);
        let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        let u: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; len];
        for t in 1..len {
            let e = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            y[t] = 0.5 * y[t - 1] + 1.0 * u[t - 1] + e;
        }
        (u, y)
    }

    #[test]
    fn first_order_recovered() {
        let (u, y) = first_order(5000, 1e-4, 3);
        let o = ArmaxOrders { na: 1, nb: 1, nc: 0, nk: 1 };
        let m = fit_armax(&[IoSeq { u: &u, y: &y }], 1, o).unwrap();
        assert!((m.a[0] + 0.5).abs() < 0.005, "{m:?}");
        assert!((m.b[0][0] - 1.0).abs() < 0.01, "{m:?}");
        assert!(m.is_stable());
        assert!(!m.ridge);
    }

    #[test]
    fn noise_filter_stays_stable_on_short_records() {
        let o = ArmaxOrders { na: 2, nb: 2, nc: 2, nk: 1 };
        for seed in 0..40 {
            let mut rng = rng_for(seed);
            let u: Vec<f64> = (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut y = vec![0.0; 120];
            for t in 2..120 {
                y[t] = 1.6 * y[t - 1] - 0.64 * y[t - 2] + 0.1 * u[t - 1] + rng.gen_range(-0.5..0.5);
            }
            let m = fit_armax(&[IoSeq { u: &u, y: &y }], 1, o).unwrap();
            assert!(poly_stable(&m.c), "seed {seed}: {:?}", m.c);
            assert!(m.theta().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zero_data_gives_zero_model() {
        let z = vec![0.0; 200];
        let m = fit_armax(&[IoSeq { u: &z, y: &z }], 1, ArmaxOrders::default()).unwrap();
        assert!(m.theta().iter().all(|v| *v == 0.0));
        assert_eq!(m.noise_var, 0.0);
        assert!(m.ridge);
    }

    #[test]
    fn pure_ar_matches_ols() {
        let mut rng = rng_for(5);
        let mut y = vec![0.3];
        for _ in 1..400 {
            let last = *y.last().unwrap();
            y.push(0.8 * last + rng.gen_range(-0.1..0.1));
        }
        let o = ArmaxOrders { na: 1, nb: 0, nc: 0, nk: 0 };
        let m = fit_armax(&[IoSeq { u: &[], y: &y }], 0, o).unwrap();
        let num: f64 = (1..y.len()).map(|t| y[t] * y[t - 1]).sum();
        let den: f64 = (1..y.len()).map(|t| y[t - 1] * y[t - 1]).sum();
        assert!((-m.a[0] - num / den).abs() < 1e-9);
    }

    #[test]
    fn noiseless_prediction_is_exact() {
        let (u, y) = first_order(1000, 0.0, 8);
        let m = fit_armax(&[IoSeq { u: &u, y: &y }], 1, ArmaxOrders::default()).unwrap();
        let p = m.predict(&u, &y).unwrap();
        let rmse = (p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        assert!(rmse < 1e-6, "{rmse}");
        let s = m.simulate(&u, &y).unwrap();
        assert!(s.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn structural_cases() {
        let u = [1.0, 2.0, 3.0, 4.0];
        let y = [5.0, 6.0, 7.0, 8.0];
        let z = ArmaxModel::zeros(ArmaxOrders::default(), 1);
        assert!(z.predict(&u, &y).unwrap()[2..].iter().all(|v| *v == 0.0));

        let mut m = ArmaxModel::zeros(ArmaxOrders { na: 0, nb: 1, nc: 0, nk: 1 }, 1);
        m.b[0][0] = 0.5;
        let p = m.predict(&u, &y).unwrap();
        assert_eq!(&p[1..], &[0.5, 1.0, 1.5]);
        assert!(m.predict(&u[..1], &y[..1]).is_err());
        assert!(fit_armax(&[IoSeq { u: &[], y: &[] }], 1, ArmaxOrders::default()).is_err());
        assert!(fit_miso(&[], 1, 6, ArmaxOrders::default()).is_err());
    }

    #[test]
    fn rescaled_inputs_rescale_b() {
        let mut rng = rng_for(9);
        let u: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; 500];
        for t in 2..500 {
            y[t] = 1.2 * y[t - 1] - 0.5 * y[t - 2] + u[t - 1] + 0.4 * u[t - 2];
        }
        let o = ArmaxOrders { na: 2, nb: 2, nc: 0, nk: 1 };
        let m1 = fit_armax(&[IoSeq { u: &u, y: &y }], 1, o).unwrap();
        let us: Vec<f64> = u.iter().map(|v| v * 4.0).collect();
        let m2 = fit_armax(&[IoSeq { u: &us, y: &y }], 1, o).unwrap();
        for (a, b) in m1.a.iter().zip(&m2.a) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in m1.b[0].iter().zip(&m2.b[0]) {
            assert!((a - 4.0 * b).abs() < 1e-9);
        }
    }

    #[test]
    fn stability_check() {
        assert!(poly_stable(&[-0.5]));
        assert!(!poly_stable(&[-1.5]));
        // z^2 - 1.5 z + 0.7: complex roots with |z| = sqrt(0.7)
        assert!(poly_stable(&[-1.5, 0.7]));
        assert!(!poly_stable(&[0.0, -1.2]));
    }

    #[test]
    fn coefficient_csv_round_trip() {
        let mut m = ArmaxModel::zeros(ArmaxOrders::default(), 2);
        m.set_theta(&[0.1, -0.2, 0.3, 0.4, 0.5, 0.6, -0.7, 0.8]);
        m.noise_var = 1.5e-3;
        let text = models_csv(&[m.clone(), ArmaxModel::zeros(ArmaxOrders::default(), 2)]);
        let back = parse_models(&text).unwrap();
        assert_eq!(back[0], m);
        assert_eq!(back.len(), 2);
        assert!(parse_models("nope").is_err());
    }
}
