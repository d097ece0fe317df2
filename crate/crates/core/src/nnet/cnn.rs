//! Small VGG-style regression CNN: 3x3 conv + ReLU + 2x2 max-pool blocks,
//! two fully-connected ReLU layers with dropout, a linear 6-output head and
//! a tanh feature head on the second fully-connected layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::add_into;
use super::params::{rng_for, Init, ParamId, ParamStore};
use super::{dropout_mask, Mode};
use crate::data::FORCE_DIM;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnShape {
    /// Side of the square `S x S x 3` input.
    pub input_size: usize,
    pub conv_widths: Vec<usize>,
    pub fc_width: usize,
    pub feature_dim: usize,
    /// Drop probability on the fully-connected layers in train mode.
    pub dropout: f64,
}

impl Default for CnnShape {
    fn default() -> Self {
        Self {
            input_size: 32,
            conv_widths: vec![8, 16, 32],
            fc_width: 64,
            feature_dim: 64,
            dropout: 0.5,
        }
    }
}

impl CnnShape {
    pub fn validate(&self) -> Result<()> {
        let k = self.conv_widths.len();
        if self.input_size == 0 || self.input_size % (1 << k) != 0 {
            return Err(Error::Config(format!(
                "input size {} must be a positive multiple of 2^{k}",
                self.input_size
            )));
        }
        if self.conv_widths.iter().any(|w| *w == 0) || self.fc_width == 0 || self.feature_dim == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_size * self.input_size * 3
    }

    fn flat_len(&self) -> usize {
        let s = self.input_size >> self.conv_widths.len();
        s * s * self.conv_widths.last().copied().unwrap_or(3)
    }
}

#[derive(Debug, Clone)]
struct ConvIds {
    w: ParamId,
    b: ParamId,
    c_in: usize,
    c_out: usize,
}

#[derive(Debug, Clone)]
pub struct FeatureCnn {
    pub shape: CnnShape,
    pub params: ParamStore,
    conv: Vec<ConvIds>,
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
    head: (ParamId, ParamId),
}

/// Activations kept by [`FeatureCnn::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct CnnCache {
    param_count: usize,
    /// Input of each conv block (CHW).
    block_in: Vec<Vec<f64>>,
    /// Post-ReLU conv output of each block.
    block_relu: Vec<Vec<f64>>,
    /// Arg-max offset (within the plane) for every pooled output.
    block_argmax: Vec<Vec<u32>>,
    flat: Vec<f64>,
    pub fc1_pre: Vec<f64>,
    fc1_out: Vec<f64>,
    mask1: Vec<f64>,
    /// Pre-activation of the second fully-connected layer.
    pub fc2_pre: Vec<f64>,
    fc2_out: Vec<f64>,
    mask2: Vec<f64>,
    pub output: Vec<f64>,
}

/// Same-padded 3x3 convolution over CHW planes, accumulated into `out`.
pub fn conv3x3_forward(input: &[f64], c_in: usize, h: usize, w: usize, weight: &[f64], bias: &[f64], c_out: usize, out: &mut [f64]) {
    let plane = h * w;
    for co in 0..c_out {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..c_in {
            let x = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[((co * c_in + ci) * 3 + ky) * 3 + kx];
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let orow = &mut o[y * w + x0..y * w + x1];
                        let xrow = &x[iy * w + (x0 as isize + dx) as usize..iy * w + (x1 as isize + dx) as usize];
                        for (ov, xv) in orow.iter_mut().zip(xrow) {
                            *ov += wv * xv;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv3x3_forward`]: accumulates into `dweight`, `dbias`
/// and, when given, `dinput`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    c_out: usize,
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    mut dinput: Option<&mut [f64]>,
) {
    let plane = h * w;
    for co in 0..c_out {
        let g = &dout[co * plane..(co + 1) * plane];
        dbias[co] += g.iter().sum::<f64>();
        for ci in 0..c_in {
            let x = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((co * c_in + ci) * 3 + ky) * 3 + kx;
                    let wv = weight[widx];
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let grow = &g[y * w + x0..y * w + x1];
                        let xs = iy * w + (x0 as isize + dx) as usize;
                        let xrow = &x[xs..xs + (x1 - x0)];
                        for (gv, xv) in grow.iter().zip(xrow) {
                            acc += gv * xv;
                        }
                        if let Some(di) = dinput.as_deref_mut() {
                            let drow = &mut di[ci * plane + xs..ci * plane + xs + (x1 - x0)];
                            for (dv, gv) in drow.iter_mut().zip(grow) {
                                *dv += wv * gv;
                            }
                        }
                    }
                    dweight[widx] += acc;
                }
            }
        }
    }
}

fn maxpool2(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let p = &input[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let mut best = 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let k = (2 * y + dy) * w + 2 * x + dx;
                    if p[k] > p[best] {
                        best = k;
                    }
                }
                let o = ch * oh * ow + y * ow + x;
                out[o] = p[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

/// `out = W x + b` with `W` row-major `[out x in]`.
pub(crate) fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// Accumulates `dW += g x^T`, `db += g` and returns `W^T g`.
pub(crate) fn dense_backward(w: &[f64], x: &[f64], g: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    for (o, go) in g.iter().enumerate() {
        if *go == 0.0 {
            continue;
        }
        db[o] += go;
        let row = &w[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            drow[i] += go * x[i];
            dx[i] += go * row[i];
        }
    }
    dx
}

fn hwc_to_chw(input: &[f64], s: usize) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    let plane = s * s;
    for p in 0..plane {
        for c in 0..3 {
            out[c * plane + p] = input[p * 3 + c];
        }
    }
    out
}

impl FeatureCnn {
    /// Fresh network: Glorot-uniform weights, zero biases.
    pub fn new(shape: CnnShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = rng_for(seed);
        let mut params = ParamStore::new(seed);
        let mut c_in = 3;
        for (k, &c_out) in shape.conv_widths.iter().enumerate() {
            params.add(
                &format!("conv{k}.w"),
                &[c_out, c_in, 3, 3],
                Init::Glorot { fan_in: 9 * c_in, fan_out: 9 * c_out },
                &mut rng,
            )?;
            params.add(&format!("conv{k}.b"), &[c_out], Init::Zeros, &mut rng)?;
            c_in = c_out;
        }
        let flat = shape.flat_len();
        for (name, n_in, n_out) in [
            ("fc1", flat, shape.fc_width),
            ("fc2", shape.fc_width, shape.feature_dim),
            ("head", shape.feature_dim, FORCE_DIM),
        ] {
            params.add(&format!("{name}.w"), &[n_out, n_in], Init::Glorot { fan_in: n_in, fan_out: n_out }, &mut rng)?;
            params.add(&format!("{name}.b"), &[n_out], Init::Zeros, &mut rng)?;
        }
        Self::from_params(params, shape.dropout)
    }

    /// Rebuilds a network from a parameter store, inferring the layer shape.
    pub fn from_params(params: ParamStore, dropout: f64) -> Result<Self> {
        let mut conv = Vec::new();
        let mut c_in = 3;
        let mut widths = Vec::new();
        while let Some(w) = params.id(&format!("conv{}.w", conv.len())) {
            let b = params.require(&format!("conv{}.b", conv.len()))?;
            let sh = &params.param(w).shape;
            if sh.len() != 4 || sh[1] != c_in || sh[2] != 3 || sh[3] != 3 {
                return Err(Error::shape(format!("[*, {c_in}, 3, 3]"), format!("{sh:?}")));
            }
            conv.push(ConvIds { w, b, c_in, c_out: sh[0] });
            widths.push(sh[0]);
            c_in = sh[0];
        }
        let pair = |name: &str| -> Result<(ParamId, ParamId)> {
            Ok((params.require(&format!("{name}.w"))?, params.require(&format!("{name}.b"))?))
        };
        let (fc1, fc2, head) = (pair("fc1")?, pair("fc2")?, pair("head")?);
        let fc1_shape = params.param(fc1.0).shape.clone();
        let fc2_shape = params.param(fc2.0).shape.clone();
        let head_shape = params.param(head.0).shape.clone();
        if head_shape[0] != FORCE_DIM || head_shape[1] != fc2_shape[0] || fc2_shape[1] != fc1_shape[0] {
            return Err(Error::shape("consistent fully-connected shapes", format!("{fc1_shape:?} {fc2_shape:?} {head_shape:?}")));
        }
        let flat = fc1_shape[1];
        let last = *widths.last().unwrap_or(&3);
        let side2 = flat / last;
        let side = (side2 as f64).sqrt().round() as usize;
        if side * side * last != flat {
            return Err(Error::shape("square flattened feature map", flat));
        }
        let shape = CnnShape {
            input_size: side << widths.len(),
            conv_widths: widths,
            fc_width: fc1_shape[0],
            feature_dim: fc2_shape[0],
            dropout,
        };
        shape.validate()?;
        Ok(Self { shape, params, conv, fc1, fc2, head })
    }

    /// Forward pass on one `S x S x 3` (HWC) input. Train mode draws
    /// inverted-dropout masks from `rng`.
    pub fn forward(&self, input: &[f64], mode: Mode, rng: Option<&mut ChaCha8Rng>) -> Result<(Vec<f64>, CnnCache)> {
        if input.len() != self.shape.input_len() {
            return Err(Error::shape(self.shape.input_len(), input.len()));
        }
        let mut s = self.shape.input_size;
        let mut x = hwc_to_chw(input, s);
        let mut block_in = Vec::with_capacity(self.conv.len());
        let mut block_relu = Vec::with_capacity(self.conv.len());
        let mut block_argmax = Vec::with_capacity(self.conv.len());
        for c in &self.conv {
            let mut out = vec![0.0; c.c_out * s * s];
            conv3x3_forward(&x, c.c_in, s, s, self.params.value(c.w), self.params.value(c.b), c.c_out, &mut out);
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            let (pooled, arg) = maxpool2(&out, c.c_out, s, s);
            block_in.push(std::mem::replace(&mut x, pooled));
            block_relu.push(out);
            block_argmax.push(arg);
            s /= 2;
        }
        let flat = x;
        let p = self.shape.dropout;
        let (mask1, mask2) = match mode {
            Mode::Eval => (vec![1.0; self.shape.fc_width], vec![1.0; self.shape.feature_dim]),
            Mode::Train => {
                let rng = rng.ok_or_else(|| Error::invalid("train mode needs an RNG for dropout"))?;
                (dropout_mask(rng, self.shape.fc_width, p), dropout_mask(rng, self.shape.feature_dim, p))
            }
        };
        let fc1_pre = dense(self.params.value(self.fc1.0), self.params.value(self.fc1.1), &flat);
        let fc1_out: Vec<f64> = fc1_pre.iter().zip(&mask1).map(|(z, m)| z.max(0.0) * m).collect();
        let fc2_pre = dense(self.params.value(self.fc2.0), self.params.value(self.fc2.1), &fc1_out);
        let fc2_out: Vec<f64> = fc2_pre.iter().zip(&mask2).map(|(z, m)| z.max(0.0) * m).collect();
        let output = dense(self.params.value(self.head.0), self.params.value(self.head.1), &fc2_out);
        Ok((
            output.clone(),
            CnnCache {
                param_count: self.params.size(),
                block_in,
                block_relu,
                block_argmax,
                flat,
                fc1_pre,
                fc1_out,
                mask1,
                fc2_pre,
                fc2_out,
                mask2,
                output,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream gradient `dout` (length
    /// 6) into the store. Callers zero the buffers.
    pub fn backward(&mut self, cache: &CnnCache, dout: &[f64]) -> Result<()> {
        if cache.param_count != self.params.size() || cache.block_in.len() != self.conv.len() {
            return Err(Error::invalid("stale CNN cache: parameter layout changed since forward"));
        }
        if dout.len() != FORCE_DIM {
            return Err(Error::shape(FORCE_DIM, dout.len()));
        }
        let p = &mut self.params;
        let d_fc2_out = backward_dense(p, self.head, &cache.fc2_out, dout);
        let d_fc2_pre: Vec<f64> = d_fc2_out
            .iter()
            .zip(&cache.mask2)
            .zip(&cache.fc2_pre)
            .map(|((g, m), z)| if *z > 0.0 { g * m } else { 0.0 })
            .collect();
        let d_fc1_out = backward_dense(p, self.fc2, &cache.fc1_out, &d_fc2_pre);
        let d_fc1_pre: Vec<f64> = d_fc1_out
            .iter()
            .zip(&cache.mask1)
            .zip(&cache.fc1_pre)
            .map(|((g, m), z)| if *z > 0.0 { g * m } else { 0.0 })
            .collect();
        let mut d = backward_dense(p, self.fc1, &cache.flat, &d_fc1_pre);

        let mut s = self.shape.input_size >> self.conv.len();
        for (k, c) in self.conv.iter().enumerate().rev() {
            let big = 2 * s;
            let plane = big * big;
            // un-pool through the arg-max, then through the ReLU
            let mut d_relu = vec![0.0; c.c_out * plane];
            for ch in 0..c.c_out {
                for o in 0..s * s {
                    let idx = ch * s * s + o;
                    let a = cache.block_argmax[k][idx] as usize;
                    d_relu[ch * plane + a] += d[idx];
                }
            }
            for (g, r) in d_relu.iter_mut().zip(&cache.block_relu[k]) {
                if *r <= 0.0 {
                    *g = 0.0;
                }
            }
            let w = p.value(c.w).to_vec();
            let mut dw = vec![0.0; w.len()];
            let mut db = vec![0.0; c.c_out];
            let mut din = if k > 0 { Some(vec![0.0; c.c_in * plane]) } else { None };
            conv3x3_backward(&cache.block_in[k], c.c_in, big, big, &w, c.c_out, &d_relu, &mut dw, &mut db, din.as_deref_mut());
            add_into(p.grad_mut(c.w), &dw);
            add_into(p.grad_mut(c.b), &db);
            if let Some(di) = din {
                d = di;
            }
            s = big;
        }
        Ok(())
    }

    /// Eval-mode regression output.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input, Mode::Eval, None)?.0)
    }

    /// `tanh` of the second fully-connected pre-activation, dropout off.
    pub fn features(&self, input: &[f64]) -> Result<Vec<f64>> {
        let (_, cache) = self.forward(input, Mode::Eval, None)?;
        Ok(cache.fc2_pre.iter().map(|z| z.tanh()).collect())
    }
}

fn backward_dense(p: &mut ParamStore, ids: (ParamId, ParamId), x: &[f64], g: &[f64]) -> Vec<f64> {
    let w = p.value(ids.0).to_vec();
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.len()];
    let dx = dense_backward(&w, x, g, &mut dw, &mut db);
    add_into(p.grad_mut(ids.0), &dw);
    add_into(p.grad_mut(ids.1), &db);
    dx
}

/// Random input in `[-1, 1]`, used by tests and smoke checks.
pub fn random_input(shape: &CnnShape, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..shape.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect()
}
