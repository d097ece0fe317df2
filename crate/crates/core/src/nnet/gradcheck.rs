//! Finite-difference check of analytic parameter gradients.

use rand::seq::index::sample;

use super::params::{rng_for, ParamStore};
use super::{FeatureCnn, LstmStack};
use crate::error::{Error, Result};

/// Anything that owns a [`ParamStore`].
pub trait HasParams {
    fn store(&mut self) -> &mut ParamStore;
}

impl HasParams for ParamStore {
    fn store(&mut self) -> &mut ParamStore {
        self
    }
}

impl HasParams for FeatureCnn {
    fn store(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

impl HasParams for LstmStack {
    fn store(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

/// Finite-difference formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdScheme {
    /// `(f(x+h) - f(x-h)) / 2h`.
    Central { h: f64 },
    /// Fourth-order `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
    /// Lets smooth models use a wider step, keeping roundoff small next to
    /// gradient entries far below the loss value.
    FivePoint { h: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-12)
}

/// Compares analytic gradients with finite differences.
///
/// `eval(model, with_grad)` returns the loss; when `with_grad` is true it
/// must also leave the full gradient in the store (zeroed first by the
/// checker). Models larger than `max_coords` scalars are checked on a
/// seeded random subset.
pub fn grad_check<M, F>(model: &mut M, mut eval: F, scheme: FdScheme, max_coords: usize, seed: u64) -> Result<GradCheckReport>
where
    M: HasParams,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    model.store().zero_grad();
    let base = eval(model, true)?;
    if !base.is_finite() || !model.store().grads_finite() {
        return Err(Error::Numeric("non-finite loss or gradient at the check point".into()));
    }
    let analytic: Vec<Vec<f64>> = model.store().iter().map(|p| p.grad.clone()).collect();
    let total = model.store().size();
    let coords: Vec<usize> = if total <= max_coords {
        (0..total).collect()
    } else {
        let mut v = sample(&mut rng_for(seed), total, max_coords).into_vec();
        v.sort_unstable();
        v
    };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_offset: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: coords.len(),
    };
    for k in coords {
        let (id, off) = model.store().locate(k).expect("coordinate in range");
        let orig = model.store().value(id)[off];
        let mut at = |d: f64| -> Result<f64> {
            model.store().value_mut(id)[off] = orig + d;
            let v = eval(model, false);
            model.store().value_mut(id)[off] = orig;
            let v = v?;
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss perturbing coordinate {k}")));
            }
            Ok(v)
        };
        let numeric = match scheme {
            FdScheme::Central { h } => (at(h)? - at(-h)?) / (2.0 * h),
            FdScheme::FivePoint { h } => {
                (-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h)
            }
        };
        let a = analytic[id.0][off];
        let e = rel_err(a, numeric);
        if e > report.max_rel_err || report.worst_param.is_empty() {
            report.max_rel_err = e;
            report.worst_param = model.store().param(id).name.clone();
            report.worst_offset = off;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
