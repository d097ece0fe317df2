//! Stacked CIFG-LSTM (input gate tied to `1 - f`) with optional peepholes
//! on the forget and output gates, and a shared linear head.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cnn::{dense, dense_backward};
use super::params::{rng_for, Init, ParamId, ParamStore};
use super::{dropout_mask, Mode};
use crate::data::FORCE_DIM;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmShape {
    pub input_dim: usize,
    /// Cell count per layer.
    pub hidden: Vec<usize>,
    /// Drop probability on each layer's output in train mode.
    pub dropout: Vec<f64>,
    pub peepholes: bool,
}

impl LstmShape {
    pub fn two_layer(input_dim: usize, hidden: usize, dropout: (f64, f64)) -> Self {
        Self {
            input_dim,
            hidden: vec![hidden, hidden],
            dropout: vec![dropout.0, dropout.1],
            peepholes: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.is_empty() || self.hidden.iter().any(|h| *h == 0) {
            return Err(Error::Config("LSTM needs a positive input width and cell counts".into()));
        }
        if self.dropout.len() != self.hidden.len() {
            return Err(Error::Config(format!(
                "{} dropout rates for {} layers",
                self.dropout.len(),
                self.hidden.len()
            )));
        }
        if let Some(p) = self.dropout.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::Config(format!("dropout {p} outside [0, 1)")));
        }
        Ok(())
    }
}

/// Borrowed weights of one CIFG layer. Matrices are row-major `[hidden x in]`.
#[derive(Debug, Clone, Copy)]
pub struct CifgWeights<'a> {
    pub input: usize,
    pub hidden: usize,
    pub w_z: &'a [f64],
    pub w_f: &'a [f64],
    pub w_o: &'a [f64],
    pub r_z: &'a [f64],
    pub r_f: &'a [f64],
    pub r_o: &'a [f64],
    pub b_z: &'a [f64],
    pub b_f: &'a [f64],
    pub b_o: &'a [f64],
    pub p_f: Option<&'a [f64]>,
    pub p_o: Option<&'a [f64]>,
}

/// Intermediate values of one step, enough for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

impl StepCache {
    /// Input gate, `1 - f`.
    pub fn i(&self) -> Vec<f64> {
        self.f.iter().map(|f| 1.0 - f).collect()
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn gemv_add(m: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += m[r * n..(r + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// One CIFG step: returns `(h, c, cache)`.
pub fn cifg_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], w: &CifgWeights) -> Result<(Vec<f64>, Vec<f64>, StepCache)> {
    let hd = w.hidden;
    if x.len() != w.input {
        return Err(Error::shape(w.input, x.len()));
    }
    if h_prev.len() != hd || c_prev.len() != hd {
        return Err(Error::shape(hd, format!("h {} / c {}", h_prev.len(), c_prev.len())));
    }
    let mut az = w.b_z.to_vec();
    let mut af = w.b_f.to_vec();
    let mut ao = w.b_o.to_vec();
    gemv_add(w.w_z, x, &mut az);
    gemv_add(w.r_z, h_prev, &mut az);
    gemv_add(w.w_f, x, &mut af);
    gemv_add(w.r_f, h_prev, &mut af);
    gemv_add(w.w_o, x, &mut ao);
    gemv_add(w.r_o, h_prev, &mut ao);
    let z: Vec<f64> = az.iter().map(|v| v.tanh()).collect();
    let f: Vec<f64> = (0..hd)
        .map(|k| sigmoid(af[k] + w.p_f.map_or(0.0, |p| p[k] * c_prev[k])))
        .collect();
    let c: Vec<f64> = (0..hd).map(|k| f[k] * c_prev[k] + (1.0 - f[k]) * z[k]).collect();
    let o: Vec<f64> = (0..hd)
        .map(|k| sigmoid(ao[k] + w.p_o.map_or(0.0, |p| p[k] * c[k])))
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
    Ok((
        h,
        c.clone(),
        StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            z,
            f,
            o,
            c,
            tanh_c,
        },
    ))
}

#[derive(Debug, Clone)]
struct LayerIds {
    input: usize,
    hidden: usize,
    w: [ParamId; 3],
    r: [ParamId; 3],
    b: [ParamId; 3],
    p: Option<[ParamId; 2]>,
}

const GATES: [&str; 3] = ["z", "f", "o"];

#[derive(Debug, Clone)]
pub struct LstmStack {
    pub shape: LstmShape,
    pub params: ParamStore,
    layers: Vec<LayerIds>,
    head: (ParamId, ParamId),
}

/// Activations of a whole window.
#[derive(Debug, Clone)]
pub struct LstmCache {
    param_count: usize,
    steps: usize,
    /// `[layer][t]`.
    pub cells: Vec<Vec<StepCache>>,
    /// Dropout masks on each layer output, `[layer][t]`.
    masks: Vec<Vec<Vec<f64>>>,
    /// Masked output of the last layer, fed to the head.
    top: Vec<Vec<f64>>,
}

impl LstmStack {
    pub fn new(shape: LstmShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = rng_for(seed);
        let mut params = ParamStore::new(seed);
        let mut d = shape.input_dim;
        for (l, &h) in shape.hidden.iter().enumerate() {
            for g in GATES {
                params.add(&format!("l{l}.w_{g}"), &[h, d], Init::Glorot { fan_in: d, fan_out: h }, &mut rng)?;
            }
            for g in GATES {
                params.add(&format!("l{l}.r_{g}"), &[h, h], Init::Glorot { fan_in: h, fan_out: h }, &mut rng)?;
            }
            for g in GATES {
                let init = if g == "f" { Init::Constant(1.0) } else { Init::Zeros };
                params.add(&format!("l{l}.b_{g}"), &[h], init, &mut rng)?;
            }
            if shape.peepholes {
                params.add(&format!("l{l}.p_f"), &[h], Init::Zeros, &mut rng)?;
                params.add(&format!("l{l}.p_o"), &[h], Init::Zeros, &mut rng)?;
            }
            d = h;
        }
        params.add("head.w", &[FORCE_DIM, d], Init::Glorot { fan_in: d, fan_out: FORCE_DIM }, &mut rng)?;
        params.add("head.b", &[FORCE_DIM], Init::Zeros, &mut rng)?;
        Self::from_params(params, shape.dropout.clone())
    }

    /// Rebuilds a stack from stored parameters.
    pub fn from_params(params: ParamStore, dropout: Vec<f64>) -> Result<Self> {
        let mut layers = Vec::new();
        let mut hidden = Vec::new();
        let mut input_dim = None;
        let mut peepholes = None;
        while params.id(&format!("l{}.w_z", layers.len())).is_some() {
            let l = layers.len();
            let get = |n: &str| params.require(&format!("l{l}.{n}"));
            let w = [get("w_z")?, get("w_f")?, get("w_o")?];
            let r = [get("r_z")?, get("r_f")?, get("r_o")?];
            let b = [get("b_z")?, get("b_f")?, get("b_o")?];
            let p = match (params.id(&format!("l{l}.p_f")), params.id(&format!("l{l}.p_o"))) {
                (Some(a), Some(c)) => Some([a, c]),
                (None, None) => None,
                _ => return Err(Error::invalid(format!("layer {l} has only one peephole vector"))),
            };
            if *peepholes.get_or_insert(p.is_some()) != p.is_some() {
                return Err(Error::invalid("peepholes must be on for all layers or none"));
            }
            let sh = params.param(w[0]).shape.clone();
            let (h, d) = (sh[0], sh[1]);
            if let Some(prev) = hidden.last() {
                if *prev != d {
                    return Err(Error::shape(*prev, d));
                }
            } else {
                input_dim = Some(d);
            }
            for id in w {
                if params.param(id).shape != [h, d] {
                    return Err(Error::shape(format!("[{h}, {d}]"), format!("{:?}", params.param(id).shape)));
                }
            }
            for id in r {
                if params.param(id).shape != [h, h] {
                    return Err(Error::shape(format!("[{h}, {h}]"), format!("{:?}", params.param(id).shape)));
                }
            }
            layers.push(LayerIds { input: d, hidden: h, w, r, b, p });
            hidden.push(h);
        }
        let input_dim = input_dim.ok_or_else(|| Error::invalid("no LSTM layers in parameter store"))?;
        let head = (params.require("head.w")?, params.require("head.b")?);
        if params.param(head.0).shape != [FORCE_DIM, *hidden.last().unwrap()] {
            return Err(Error::shape("head [6, hidden]", format!("{:?}", params.param(head.0).shape)));
        }
        let shape = LstmShape {
            input_dim,
            hidden,
            dropout,
            peepholes: peepholes.unwrap_or(false),
        };
        shape.validate()?;
        Ok(Self { shape, params, layers, head })
    }

    pub fn layer_weights(&self, l: usize) -> CifgWeights<'_> {
        let ids = &self.layers[l];
        let v = |id: ParamId| self.params.value(id);
        CifgWeights {
            input: ids.input,
            hidden: ids.hidden,
            w_z: v(ids.w[0]),
            w_f: v(ids.w[1]),
            w_o: v(ids.w[2]),
            r_z: v(ids.r[0]),
            r_f: v(ids.r[1]),
            r_o: v(ids.r[2]),
            b_z: v(ids.b[0]),
            b_f: v(ids.b[1]),
            b_o: v(ids.b[2]),
            p_f: ids.p.map(|p| v(p[0])),
            p_o: ids.p.map(|p| v(p[1])),
        }
    }

    pub fn head_output(&self, h: &[f64]) -> Vec<f64> {
        dense(self.params.value(self.head.0), self.params.value(self.head.1), h)
    }

    /// Runs a window of `T` inputs (flat `[T x input_dim]`) from zero state.
    /// Returns the head output at every step, flat `[T x 6]`; the window's
    /// estimate is the last row.
    pub fn forward(&self, inputs: &[f64], mode: Mode, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Vec<f64>, LstmCache)> {
        let d = self.shape.input_dim;
        if inputs.is_empty() {
            return Err(Error::invalid("empty input sequence"));
        }
        if inputs.len() % d != 0 {
            return Err(Error::shape(format!("multiple of {d}"), inputs.len()));
        }
        if mode == Mode::Train && rng.is_none() {
            return Err(Error::invalid("train mode needs an RNG for dropout"));
        }
        let t_len = inputs.len() / d;
        let mut layer_in: Vec<Vec<f64>> = inputs.chunks_exact(d).map(|c| c.to_vec()).collect();
        let mut cells = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        for (l, ids) in self.layers.iter().enumerate() {
            let w = self.layer_weights(l);
            let mut h = vec![0.0; ids.hidden];
            let mut c = vec![0.0; ids.hidden];
            let mut steps = Vec::with_capacity(t_len);
            let mut out = Vec::with_capacity(t_len);
            let mut lm = Vec::with_capacity(t_len);
            for x in &layer_in {
                let (h_new, c_new, cache) = cifg_step(x, &h, &c, &w)?;
                let mask = match mode {
                    Mode::Eval => vec![1.0; ids.hidden],
                    Mode::Train => dropout_mask(rng.as_deref_mut().unwrap(), ids.hidden, self.shape.dropout[l]),
                };
                out.push(h_new.iter().zip(&mask).map(|(a, m)| a * m).collect::<Vec<f64>>());
                lm.push(mask);
                steps.push(cache);
                h = h_new;
                c = c_new;
            }
            cells.push(steps);
            masks.push(lm);
            layer_in = out;
        }
        let mut outputs = Vec::with_capacity(t_len * FORCE_DIM);
        for h in &layer_in {
            outputs.extend(self.head_output(h));
        }
        Ok((
            outputs,
            LstmCache {
                param_count: self.params.size(),
                steps: t_len,
                cells,
                masks,
                top: layer_in,
            },
        ))
    }

    /// Eval-mode estimate for one window (the last step's output).
    pub fn predict(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let (out, _) = self.forward(inputs, Mode::Eval, None)?;
        Ok(out[out.len() - FORCE_DIM..].to_vec())
    }

    /// Backpropagation through time. `dout` is the loss gradient for every
    /// step's output, flat `[T x 6]`. Gradients accumulate into the store.
    pub fn backward(&mut self, cache: &LstmCache, dout: &[f64]) -> Result<()> {
        if cache.param_count != self.params.size() || cache.cells.len() != self.layers.len() {
            return Err(Error::invalid("stale LSTM cache: parameter layout changed since forward"));
        }
        if dout.len() != cache.steps * FORCE_DIM {
            return Err(Error::shape(cache.steps * FORCE_DIM, dout.len()));
        }
        let t_len = cache.steps;
        let (hw, hb) = self.head;
        let head_w = self.params.value(hw).to_vec();
        let mut dw = vec![0.0; head_w.len()];
        let mut db = vec![0.0; FORCE_DIM];
        // gradient w.r.t. the masked output of the current layer
        let mut d_up: Vec<Vec<f64>> = (0..t_len)
            .map(|t| dense_backward(&head_w, &cache.top[t], &dout[t * FORCE_DIM..(t + 1) * FORCE_DIM], &mut dw, &mut db))
            .collect();
        add_into(self.params.grad_mut(hw), &dw);
        add_into(self.params.grad_mut(hb), &db);

        for l in (0..self.layers.len()).rev() {
            let ids = self.layers[l].clone();
            let (hd, din) = (ids.hidden, ids.input);
            let vals: Vec<Vec<f64>> = ids.w.iter().chain(&ids.r).map(|id| self.params.value(*id).to_vec()).collect();
            let (wm, rm) = (&vals[0..3], &vals[3..6]);
            let peep: Option<[Vec<f64>; 2]> = ids.p.map(|p| [self.params.value(p[0]).to_vec(), self.params.value(p[1]).to_vec()]);
            let mut gw = vec![vec![0.0; hd * din]; 3];
            let mut gr = vec![vec![0.0; hd * hd]; 3];
            let mut gb = vec![vec![0.0; hd]; 3];
            let mut gp = vec![vec![0.0; hd]; 2];
            let mut d_below = vec![vec![0.0; din]; t_len];
            let mut dh_next = vec![0.0; hd];
            let mut dc_next = vec![0.0; hd];
            for t in (0..t_len).rev() {
                let s = &cache.cells[l][t];
                let mask = &cache.masks[l][t];
                let mut da = [vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]];
                let mut dc_prev = vec![0.0; hd];
                for k in 0..hd {
                    let dh = d_up[t][k] * mask[k] + dh_next[k];
                    let d_o = dh * s.tanh_c[k];
                    let mut dc = dc_next[k] + dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                    let da_o = d_o * s.o[k] * (1.0 - s.o[k]);
                    if let Some(p) = &peep {
                        dc += da_o * p[1][k];
                        gp[1][k] += da_o * s.c[k];
                    }
                    let df = dc * (s.c_prev[k] - s.z[k]);
                    let dz = dc * (1.0 - s.f[k]);
                    let da_f = df * s.f[k] * (1.0 - s.f[k]);
                    let mut dcp = dc * s.f[k];
                    if let Some(p) = &peep {
                        dcp += da_f * p[0][k];
                        gp[0][k] += da_f * s.c_prev[k];
                    }
                    da[0][k] = dz * (1.0 - s.z[k] * s.z[k]);
                    da[1][k] = da_f;
                    da[2][k] = da_o;
                    dc_prev[k] = dcp;
                }
                let mut dh_prev = vec![0.0; hd];
                for g in 0..3 {
                    for k in 0..hd {
                        let a = da[g][k];
                        if a == 0.0 {
                            continue;
                        }
                        gb[g][k] += a;
                        let wrow = &wm[g][k * din..(k + 1) * din];
                        let gwrow = &mut gw[g][k * din..(k + 1) * din];
                        for i in 0..din {
                            gwrow[i] += a * s.x[i];
                            d_below[t][i] += a * wrow[i];
                        }
                        let rrow = &rm[g][k * hd..(k + 1) * hd];
                        let grrow = &mut gr[g][k * hd..(k + 1) * hd];
                        for i in 0..hd {
                            grrow[i] += a * s.h_prev[i];
                            dh_prev[i] += a * rrow[i];
                        }
                    }
                }
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            for g in 0..3 {
                add_into(self.params.grad_mut(ids.w[g]), &gw[g]);
                add_into(self.params.grad_mut(ids.r[g]), &gr[g]);
                add_into(self.params.grad_mut(ids.b[g]), &gb[g]);
            }
            if let Some(p) = ids.p {
                add_into(self.params.grad_mut(p[0]), &gp[0]);
                add_into(self.params.grad_mut(p[1]), &gp[1]);
            }
            d_up = d_below;
        }
        Ok(())
    }
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn randomized(shape: LstmShape, seed: u64) -> LstmStack {
        let mut net = LstmStack::new(shape, seed).unwrap();
        let mut rng = rng_for(seed + 100);
        for p in net.params.iter_mut() {
            p.value.iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
        }
        net
    }

    /// Scalar reference evaluation of one step.
    fn scalar_step(w: &CifgWeights, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (hd, d) = (w.hidden, w.input);
        let mut h_out = vec![0.0; hd];
        let mut c_out = vec![0.0; hd];
        for k in 0..hd {
            let mut az = w.b_z[k];
            let mut af = w.b_f[k];
            let mut ao = w.b_o[k];
            for i in 0..d {
                az += w.w_z[k * d + i] * x[i];
                af += w.w_f[k * d + i] * x[i];
                ao += w.w_o[k * d + i] * x[i];
            }
            for i in 0..hd {
                az += w.r_z[k * hd + i] * h[i];
                af += w.r_f[k * hd + i] * h[i];
                ao += w.r_o[k * hd + i] * h[i];
            }
            if let Some(p) = w.p_f {
                af += p[k] * c[k];
            }
            let z = az.tanh();
            let f = 1.0 / (1.0 + (-af).exp());
            let i = 1.0 - f;
            let cn = f * c[k] + i * z;
            if let Some(p) = w.p_o {
                ao += p[k] * cn;
            }
            let o = 1.0 / (1.0 + (-ao).exp());
            c_out[k] = cn;
            h_out[k] = o * cn.tanh();
        }
        (h_out, c_out)
    }

    #[test]
    fn zero_params_step() {
        let mut net = LstmStack::new(LstmShape::two_layer(3, 4, (0.0, 0.0)), 1).unwrap();
        net.params.iter_mut().for_each(|p| p.value.iter_mut().for_each(|v| *v = 0.0));
        let w = net.layer_weights(0);
        let (h, c, s) = cifg_step(&[0.3, -0.2, 0.9], &[0.0; 4], &[0.0; 4], &w).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(c, vec![0.0; 4]);
        assert_eq!(s.f, vec![0.5; 4]);
        assert_eq!(s.i(), vec![0.5; 4]);
        assert_eq!(s.z, vec![0.0; 4]);
        let (out, _) = net.forward(&[0.1; 15], Mode::Eval, None).unwrap();
        assert_eq!(out, vec![0.0; 30]);
    }

    #[test]
    fn step_matches_scalar_reference_and_coupling() {
        for peep in [true, false] {
            let shape = LstmShape { peepholes: peep, ..LstmShape::two_layer(5, 7, (0.0, 0.0)) };
            let net = randomized(shape, 3);
            let w = net.layer_weights(0);
            let mut rng = rng_for(4);
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (h1, c1, s) = cifg_step(&x, &h, &c, &w).unwrap();
            let (h2, c2) = scalar_step(&w, &x, &h, &c);
            for k in 0..7 {
                assert!((h1[k] - h2[k]).abs() < 1e-12);
                assert!((c1[k] - c2[k]).abs() < 1e-12);
                assert!((s.i()[k] + s.f[k] - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn forward_equals_unrolled_steps() {
        let net = randomized(LstmShape::two_layer(3, 5, (0.3, 0.3)), 9);
        let mut rng = rng_for(10);
        let t_len = 8;
        let x: Vec<f64> = (0..t_len * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (out, _) = net.forward(&x, Mode::Eval, None).unwrap();
        let (w0, w1) = (net.layer_weights(0), net.layer_weights(1));
        let (mut h0, mut c0, mut h1, mut c1) = (vec![0.0; 5], vec![0.0; 5], vec![0.0; 5], vec![0.0; 5]);
        for t in 0..t_len {
            let (a, b, _) = cifg_step(&x[t * 3..t * 3 + 3], &h0, &c0, &w0).unwrap();
            h0 = a;
            c0 = b;
            let (a, b, _) = cifg_step(&h0, &h1, &c1, &w1).unwrap();
            h1 = a;
            c1 = b;
            let y = net.head_output(&h1);
            for j in 0..6 {
                assert!((y[j] - out[t * 6 + j]).abs() < 1e-12);
            }
        }
        // T = 1 reduces to one step per layer plus the head
        let single = net.predict(&x[..3]).unwrap();
        let (a, _, _) = cifg_step(&x[..3], &[0.0; 5], &[0.0; 5], &w0).unwrap();
        let (b, _, _) = cifg_step(&a, &[0.0; 5], &[0.0; 5], &w1).unwrap();
        assert_eq!(single, net.head_output(&b));
    }

    #[test]
    fn backward_linearity() {
        let mut net = randomized(LstmShape::two_layer(2, 3, (0.0, 0.0)), 11);
        let x = [0.2, -0.4, 0.5, 0.1, -0.3, 0.7];
        let (_, cache) = net.forward(&x, Mode::Eval, None).unwrap();
        net.params.zero_grad();
        net.backward(&cache, &[0.0; 18]).unwrap();
        assert!(net.params.iter().all(|p| p.grad.iter().all(|g| *g == 0.0)));
        let d: Vec<f64> = (0..18).map(|k| (k as f64 - 8.0) / 10.0).collect();
        net.backward(&cache, &d).unwrap();
        let once: Vec<Vec<f64>> = net.params.iter().map(|p| p.grad.clone()).collect();
        net.backward(&cache, &d).unwrap();
        for (p, g) in net.params.iter().zip(&once) {
            for (a, b) in p.grad.iter().zip(g) {
                assert_eq!(*a, 2.0 * b);
            }
        }
        assert!(net.backward(&cache, &[0.0; 6]).is_err());
        assert!(net.forward(&[], Mode::Eval, None).is_err());
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let net = LstmStack::new(LstmShape::two_layer(4, 6, (0.5, 0.5)), 1).unwrap();
        let b = net.params.value(net.params.id("l0.b_f").unwrap());
        assert!(b.iter().all(|v| *v == 1.0));
        let again = LstmStack::from_params(net.params.clone(), vec![0.5, 0.5]).unwrap();
        assert_eq!(again.shape, net.shape);
    }
}
