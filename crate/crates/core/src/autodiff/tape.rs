use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::network::Activation;
use super::tensor::Tensor;
use crate::error::{bail, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Reshape {
        x: Var,
    },
    Slice {
        x: Var,
        start: usize,
    },
    Reparam {
        mu: Var,
        log_var: Var,
        noise: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    Kl {
        mu: Var,
        log_var: Var,
    },
    Sum {
        terms: Vec<(Var, f64)>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records forward values and the ops that produced them.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node with respect to one scalar output.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Taps `kk` in `0..k` with `0 <= start + kk < len`.
/// For each of `n` positions, the first in-bounds index into a signal of
/// length `len` and the kernel taps that land inside it.
fn tap_plan(
    n: usize,
    k: usize,
    stride: usize,
    pad: usize,
    len: usize,
) -> Vec<(usize, Range<usize>)> {
    (0..n)
        .map(|t| {
            let start = (t * stride) as isize - pad as isize;
            let lo = (-start).max(0) as usize;
            let hi = (len as isize - start).clamp(0, k as isize) as usize;
            let lo = lo.min(hi);
            ((start + lo as isize) as usize, lo..hi)
        })
        .collect()
}

fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        bail!(Config, "kernel and stride must be positive");
    }
    if pad >= kernel {
        bail!(Config, "padding {pad} must be smaller than kernel {kernel}");
    }
    if stride >= len {
        bail!(Dimension, "stride {stride} is not below input length {len}");
    }
    if len + 2 * pad < kernel {
        bail!(
            Dimension,
            "input length {len} too short for kernel {kernel} with padding {pad}"
        );
    }
    Ok((len + 2 * pad - kernel) / stride + 1)
}

fn conv_transpose_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 || len == 0 {
        bail!(Config, "kernel, stride and length must be positive");
    }
    if pad >= kernel {
        bail!(Config, "padding {pad} must be smaller than kernel {kernel}");
    }
    let full = stride * (len - 1) + kernel;
    if full <= 2 * pad {
        bail!(Dimension, "transposed convolution output would be empty");
    }
    Ok(full - 2 * pad)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            bail!(Numeric, "non-finite value produced by {}", op_name(&op));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// `out[b] = W x[b] + bias`; `w` is `1 x out x in`, `b` is `1 x 1 x out`.
    /// The output has `out_channels` channels of `out / out_channels` samples.
    pub fn dense(&mut self, x: Var, w: Var, b: Var, out_channels: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (units, inputs) = (wv.channels(), wv.length());
        if xv.features() != inputs {
            bail!(
                Dimension,
                "dense layer expects {inputs} features, got {}",
                xv.features()
            );
        }
        if bv.len() != units {
            bail!(Dimension, "bias has {} entries for {units} units", bv.len());
        }
        if out_channels == 0 || units % out_channels != 0 {
            bail!(
                Config,
                "{units} units cannot be split into {out_channels} channels"
            );
        }
        let batch = xv.batch();
        let mut out = Tensor::zeros([batch, out_channels, units / out_channels]);
        let (wd, bd) = (wv.data(), bv.data());
        for bi in 0..batch {
            let xr = xv.row(bi);
            let o = &mut out.data_mut()[bi * units..(bi + 1) * units];
            for u in 0..units {
                let wr = &wd[u * inputs..(u + 1) * inputs];
                o[u] = bd[u] + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
            }
        }
        self.push(out, Op::Dense { x, w, b })
    }

    /// Cross-correlation: `w` is `out_ch x in_ch x k`, `b` is `1 x 1 x out_ch`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let [batch, cin, len] = xv.shape();
        let [cout, wcin, k] = wv.shape();
        if wcin != cin {
            bail!(Dimension, "convolution expects {wcin} channels, got {cin}");
        }
        if bv.len() != cout {
            bail!(
                Dimension,
                "bias has {} entries for {cout} channels",
                bv.len()
            );
        }
        let lout = conv_out_len(len, k, stride, pad)?;
        let plan = tap_plan(lout, k, stride, pad, len);
        let mut out = Tensor::zeros([batch, cout, lout]);
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let od = out.data_mut();
        for bi in 0..batch {
            for o in 0..cout {
                let orow = &mut od[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                orow.iter_mut().for_each(|v| *v = bd[o]);
                for c in 0..cin {
                    let xrow = &xd[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                    let wrow = &wd[(o * cin + c) * k..(o * cin + c + 1) * k];
                    for (ov, (base, r)) in orow.iter_mut().zip(&plan) {
                        let (base, r) = (*base, r.clone());
                        let xs = &xrow[base..base + r.len()];
                        *ov += wrow[r].iter().zip(xs).map(|(w, x)| w * x).sum::<f64>();
                    }
                }
            }
        }
        self.push(
            out,
            Op::Conv {
                x,
                w,
                b,
                stride,
                pad,
            },
        )
    }

    /// Adjoint of [`Tape::conv1d`]: `w` is `in_ch x out_ch x k`, output
    /// length `stride * (len - 1) + k - 2 * pad`.
    pub fn conv1d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let [batch, cin, len] = xv.shape();
        let [wcin, cout, k] = wv.shape();
        if wcin != cin {
            bail!(
                Dimension,
                "transposed convolution expects {wcin} channels, got {cin}"
            );
        }
        if bv.len() != cout {
            bail!(
                Dimension,
                "bias has {} entries for {cout} channels",
                bv.len()
            );
        }
        let lout = conv_transpose_out_len(len, k, stride, pad)?;
        let plan = tap_plan(len, k, stride, pad, lout);
        let mut out = Tensor::zeros([batch, cout, lout]);
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let od = out.data_mut();
        for bi in 0..batch {
            for o in 0..cout {
                let orow = &mut od[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                orow.iter_mut().for_each(|v| *v = bd[o]);
                for c in 0..cin {
                    let xrow = &xd[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                    let wrow = &wd[(c * cout + o) * k..(c * cout + o + 1) * k];
                    for (&xt, (base, r)) in xrow.iter().zip(&plan) {
                        let (base, r) = (*base, r.clone());
                        let os = &mut orow[base..base + r.len()];
                        for (o, w) in os.iter_mut().zip(&wrow[r]) {
                            *o += xt * w;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::ConvTranspose {
                x,
                w,
                b,
                stride,
                pad,
            },
        )
    }

    /// Non-overlapping max pooling; a ragged tail is padded with -inf.
    /// Ties resolve to the lowest index.
    pub fn maxpool(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            bail!(Config, "pool factor must be positive");
        }
        let xv = self.value(x);
        let [batch, ch, len] = xv.shape();
        let lout = len.div_ceil(factor);
        let mut out = Tensor::zeros([batch, ch, lout]);
        let mut argmax = vec![0usize; batch * ch * lout];
        let xd = xv.data();
        for r in 0..batch * ch {
            let row = &xd[r * len..(r + 1) * len];
            for t in 0..lout {
                let lo = t * factor;
                let hi = (lo + factor).min(len);
                let mut best = lo;
                for i in lo + 1..hi {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.data_mut()[r * lout + t] = row[best];
                argmax[r * lout + t] = r * len + best;
            }
        }
        self.push(out, Op::MaxPool { x, argmax })
    }

    /// Nearest-neighbour upsampling: each sample repeated `factor` times.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            bail!(Config, "upsample factor must be positive");
        }
        let xv = self.value(x);
        let [batch, ch, len] = xv.shape();
        let mut out = Tensor::zeros([batch, ch, len * factor]);
        for (i, &v) in xv.data().iter().enumerate() {
            out.data_mut()[i * factor..(i + 1) * factor].fill(v);
        }
        self.push(out, Op::Upsample { x, factor })
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = kind.apply(*v);
        }
        self.push(out, Op::Act { x, kind })
    }

    pub fn reshape(&mut self, x: Var, shape: [usize; 3]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        self.push(out, Op::Reshape { x })
    }

    /// Features `start..start + len` of every batch row, as `batch x 1 x len`.
    pub fn slice_features(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let f = xv.features();
        if start + len > f {
            bail!(
                Dimension,
                "slice {start}..{} exceeds {f} features",
                start + len
            );
        }
        let batch = xv.batch();
        let mut out = Tensor::zeros([batch, 1, len]);
        for bi in 0..batch {
            out.data_mut()[bi * len..(bi + 1) * len]
                .copy_from_slice(&xv.row(bi)[start..start + len]);
        }
        self.push(out, Op::Slice { x, start })
    }

    /// `z = mu + exp(log_var / 2) * noise`.
    pub fn reparameterize(&mut self, mu: Var, log_var: Var, noise: Vec<f64>) -> Result<Var> {
        let (mv, lv) = (self.value(mu), self.value(log_var));
        if mv.shape() != lv.shape() || noise.len() != mv.len() {
            bail!(Dimension, "mean, log-variance and noise must share a shape");
        }
        let mut out = mv.clone();
        for ((z, &l), &e) in out.data_mut().iter_mut().zip(lv.data()).zip(&noise) {
            *z += libm::exp(0.5 * l) * e;
        }
        self.push(out, Op::Reparam { mu, log_var, noise })
    }

    /// Mean squared error over all elements. `target` is treated as data.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.len() != t.len() || p.batch() != t.batch() {
            bail!(
                Dimension,
                "prediction shape {:?} vs target {:?}",
                p.shape(),
                t.shape()
            );
        }
        let n = p.len().max(1) as f64;
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.push(Tensor::scalar(s / n), Op::Mse { pred, target })
    }

    /// KL divergence of `N(mu, exp(log_var))` from `N(0, I)`, summed over
    /// latent dimensions and averaged over the batch.
    pub fn gaussian_kl(&mut self, mu: Var, log_var: Var) -> Result<Var> {
        let (mv, lv) = (self.value(mu), self.value(log_var));
        if mv.shape() != lv.shape() {
            bail!(Dimension, "mean and log-variance shapes differ");
        }
        if !lv.is_finite() {
            bail!(Numeric, "log-variance is not finite");
        }
        let batch = mv.batch().max(1) as f64;
        let s: f64 = mv
            .data()
            .iter()
            .zip(lv.data())
            .map(|(&m, &l)| 1.0 + l - m * m - libm::exp(l))
            .sum();
        self.push(Tensor::scalar(-0.5 * s / batch), Op::Kl { mu, log_var })
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                bail!(Dimension, "weighted_sum takes scalars");
            }
            s += w * t.data()[0];
        }
        self.push(
            Tensor::scalar(s),
            Op::Sum {
                terms: terms.to_vec(),
            },
        )
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            bail!(Dimension, "backward needs a scalar output");
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        if let Some(bad) = grads.iter().flatten().find(|t| !t.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient of shape {:?}",
                bad.shape()
            )));
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        f(slot.as_mut().expect("just set").data_mut());
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (units, inputs) = (wv.channels(), wv.length());
                let batch = xv.batch();
                self.accumulate(grads, *x, |gx| {
                    for bi in 0..batch {
                        let gr = &gd[bi * units..(bi + 1) * units];
                        let gxr = &mut gx[bi * inputs..(bi + 1) * inputs];
                        for (u, &gu) in gr.iter().enumerate() {
                            let wr = &wv.data()[u * inputs..(u + 1) * inputs];
                            for (a, &wv) in gxr.iter_mut().zip(wr) {
                                *a += gu * wv;
                            }
                        }
                    }
                });
                self.accumulate(grads, *w, |gw| {
                    for bi in 0..batch {
                        let xr = xv.row(bi);
                        for u in 0..units {
                            let gu = gd[bi * units + u];
                            for (a, &xi) in gw[u * inputs..(u + 1) * inputs].iter_mut().zip(xr) {
                                *a += gu * xi;
                            }
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for bi in 0..batch {
                        for u in 0..units {
                            gb[u] += gd[bi * units + u];
                        }
                    }
                });
            }
            Op::Conv {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let [batch, cin, len] = xv.shape();
                let [cout, _, k] = wv.shape();
                let lout = g.length();
                let (stride, pad) = (*stride, *pad);
                let plan = tap_plan(lout, k, stride, pad, len);
                self.accumulate(grads, *x, |gx| {
                    for bi in 0..batch {
                        for o in 0..cout {
                            let grow = &gd[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                            for c in 0..cin {
                                let wrow = &wv.data()[(o * cin + c) * k..(o * cin + c + 1) * k];
                                let gxr = &mut gx[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                                for (&gt, (base, r)) in grow.iter().zip(&plan) {
                                    let (base, r) = (*base, r.clone());
                                    let gs = &mut gxr[base..base + r.len()];
                                    for (a, w) in gs.iter_mut().zip(&wrow[r]) {
                                        *a += w * gt;
                                    }
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *w, |gw| {
                    for bi in 0..batch {
                        for o in 0..cout {
                            let grow = &gd[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                            for c in 0..cin {
                                let xr = &xv.data()[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                                let gwr = &mut gw[(o * cin + c) * k..(o * cin + c + 1) * k];
                                for (&gt, (base, r)) in grow.iter().zip(&plan) {
                                    let (base, r) = (*base, r.clone());
                                    let xs = &xr[base..base + r.len()];
                                    for (a, x) in gwr[r].iter_mut().zip(xs) {
                                        *a += x * gt;
                                    }
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for bi in 0..batch {
                        for (o, a) in gb.iter_mut().enumerate() {
                            *a += gd[(bi * cout + o) * lout..(bi * cout + o + 1) * lout]
                                .iter()
                                .sum::<f64>();
                        }
                    }
                });
            }
            Op::ConvTranspose {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let [batch, cin, len] = xv.shape();
                let [_, cout, k] = wv.shape();
                let lout = g.length();
                let (stride, pad) = (*stride, *pad);
                let plan = tap_plan(len, k, stride, pad, lout);
                self.accumulate(grads, *x, |gx| {
                    for bi in 0..batch {
                        for c in 0..cin {
                            let gxr = &mut gx[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                            for o in 0..cout {
                                let grow = &gd[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                                let wrow = &wv.data()[(c * cout + o) * k..(c * cout + o + 1) * k];
                                for (a, (base, r)) in gxr.iter_mut().zip(&plan) {
                                    let (base, r) = (*base, r.clone());
                                    let gs = &grow[base..base + r.len()];
                                    *a += wrow[r].iter().zip(gs).map(|(w, g)| w * g).sum::<f64>();
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *w, |gw| {
                    for bi in 0..batch {
                        for c in 0..cin {
                            let xr = &xv.data()[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                            for o in 0..cout {
                                let grow = &gd[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                                let gwr = &mut gw[(c * cout + o) * k..(c * cout + o + 1) * k];
                                for (&xt, (base, r)) in xr.iter().zip(&plan) {
                                    let (base, r) = (*base, r.clone());
                                    let gs = &grow[base..base + r.len()];
                                    for (a, g) in gwr[r].iter_mut().zip(gs) {
                                        *a += xt * g;
                                    }
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for bi in 0..batch {
                        for (o, a) in gb.iter_mut().enumerate() {
                            *a += gd[(bi * cout + o) * lout..(bi * cout + o + 1) * lout]
                                .iter()
                                .sum::<f64>();
                        }
                    }
                });
            }
            Op::MaxPool { x, argmax } => {
                self.accumulate(grads, *x, |gx| {
                    for (&src, &gv) in argmax.iter().zip(gd) {
                        gx[src] += gv;
                    }
                });
            }
            Op::Upsample { x, factor } => {
                let f = *factor;
                self.accumulate(grads, *x, |gx| {
                    for (i, a) in gx.iter_mut().enumerate() {
                        *a += gd[i * f..(i + 1) * f].iter().sum::<f64>();
                    }
                });
            }
            Op::Act { x, kind } => {
                let xv = self.value(*x);
                let out = &self.nodes[idx].value;
                self.accumulate(grads, *x, |gx| {
                    for ((a, (&xi, &yi)), &gv) in
                        gx.iter_mut().zip(xv.data().iter().zip(out.data())).zip(gd)
                    {
                        *a += gv * kind.derivative(xi, yi);
                    }
                });
            }
            Op::Reshape { x } => {
                self.accumulate(grads, *x, |gx| {
                    for (a, &gv) in gx.iter_mut().zip(gd) {
                        *a += gv;
                    }
                });
            }
            Op::Slice { x, start } => {
                let f = self.value(*x).features();
                let len = g.features();
                let start = *start;
                self.accumulate(grads, *x, |gx| {
                    for bi in 0..g.batch() {
                        for (a, &gv) in gx[bi * f + start..bi * f + start + len]
                            .iter_mut()
                            .zip(&gd[bi * len..(bi + 1) * len])
                        {
                            *a += gv;
                        }
                    }
                });
            }
            Op::Reparam { mu, log_var, noise } => {
                let lv = self.value(*log_var);
                self.accumulate(grads, *mu, |gm| {
                    for (a, &gv) in gm.iter_mut().zip(gd) {
                        *a += gv;
                    }
                });
                self.accumulate(grads, *log_var, |gl| {
                    for (i, a) in gl.iter_mut().enumerate() {
                        *a += gd[i] * noise[i] * 0.5 * libm::exp(0.5 * lv.data()[i]);
                    }
                });
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let scale = 2.0 * gd[0] / p.len().max(1) as f64;
                self.accumulate(grads, *pred, |gp| {
                    for (a, (&pi, &ti)) in gp.iter_mut().zip(p.data().iter().zip(t.data())) {
                        *a += scale * (pi - ti);
                    }
                });
            }
            Op::Kl { mu, log_var } => {
                let (mv, lv) = (self.value(*mu), self.value(*log_var));
                let scale = gd[0] / mv.batch().max(1) as f64;
                self.accumulate(grads, *mu, |gm| {
                    for (a, &m) in gm.iter_mut().zip(mv.data()) {
                        *a += scale * m;
                    }
                });
                self.accumulate(grads, *log_var, |gl| {
                    for (a, &l) in gl.iter_mut().zip(lv.data()) {
                        *a += scale * 0.5 * (libm::exp(l) - 1.0);
                    }
                });
            }
            Op::Sum { terms } => {
                for &(v, w) in terms {
                    self.accumulate(grads, v, |gv| gv[0] += w * gd[0]);
                }
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Dense { .. } => "dense",
        Op::Conv { .. } => "conv1d",
        Op::ConvTranspose { .. } => "conv1d_transpose",
        Op::MaxPool { .. } => "maxpool",
        Op::Upsample { .. } => "upsample",
        Op::Act { .. } => "activation",
        Op::Reshape { .. } => "reshape",
        Op::Slice { .. } => "slice",
        Op::Reparam { .. } => "reparameterize",
        Op::Mse { .. } => "mse",
        Op::Kl { .. } => "gaussian_kl",
        Op::Sum { .. } => "weighted_sum",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn t(shape: [usize; 3], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn random(shape: [usize; 3], rng: &mut SplitMix64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn dense_identity_and_hand_case() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 2], &[0.3, -2.0])).unwrap();
        let w = tape.leaf(t([1, 2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let b = tape.leaf(t([1, 1, 2], &[0.0, 0.0])).unwrap();
        let y = tape.dense(x, w, b, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[0.3, -2.0]);

        let x = tape.leaf(t([1, 1, 2], &[1.0, 1.0])).unwrap();
        let w = tape.leaf(t([1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let y = tape.dense(x, w, b, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn dense_shape_mismatch() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 3], &[1.0, 1.0, 1.0])).unwrap();
        let w = tape.leaf(t([1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let b = tape.leaf(t([1, 1, 2], &[0.0, 0.0])).unwrap();
        assert!(matches!(
            tape.dense(x, w, b, 1),
            Err(crate::Error::Dimension(_))
        ));
    }

    #[test]
    fn conv_single_tap_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 4], &[1.0, -2.0, 3.0, 0.5])).unwrap();
        let w = tape.leaf(t([1, 1, 1], &[1.0])).unwrap();
        let b = tape.leaf(t([1, 1, 1], &[0.0])).unwrap();
        let y = tape.conv1d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -2.0, 3.0, 0.5]);
    }

    #[test]
    fn conv_hand_cross_correlation() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let w = tape.leaf(t([1, 1, 3], &[1.0, 0.0, -1.0])).unwrap();
        let b = tape.leaf(t([1, 1, 1], &[0.0])).unwrap();
        let y = tape.conv1d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[-2.0]);
    }

    #[test]
    fn conv_stride_not_below_length_is_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let w = tape.leaf(t([1, 1, 1], &[1.0])).unwrap();
        let b = tape.leaf(t([1, 1, 1], &[0.0])).unwrap();
        assert!(matches!(
            tape.conv1d(x, w, b, 3, 0),
            Err(crate::Error::Dimension(_))
        ));
    }

    #[test]
    fn transpose_length_formula() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2, 3, 10])).unwrap();
        let w = tape.leaf(Tensor::zeros([3, 2, 5])).unwrap();
        let b = tape.leaf(Tensor::zeros([1, 1, 2])).unwrap();
        let y = tape.conv1d_transpose(x, w, b, 3, 1).unwrap();
        assert_eq!(tape.value(y).shape(), [2, 2, 3 * 9 + 5 - 2]);
    }

    #[test]
    fn conv_adjoint_identity() {
        let mut rng = SplitMix64::new(11);
        for &(cin, cout, len, k, s, p) in &[
            (1, 1, 12, 3, 1, 0),
            (2, 3, 17, 4, 1, 2),
            (3, 2, 21, 5, 2, 0),
            (2, 4, 32, 8, 4, 2),
            (4, 2, 30, 6, 3, 3),
        ] {
            let xin = random([2, cin, len], &mut rng);
            let w = random([cout, cin, k], &mut rng);
            let mut tape = Tape::new();
            let xv = tape.leaf(xin.clone()).unwrap();
            let wv = tape.leaf(w.clone()).unwrap();
            let b0 = tape.leaf(Tensor::zeros([1, 1, cout])).unwrap();
            let y = tape.conv1d(xv, wv, b0, s, p).unwrap();
            let lout = tape.value(y).length();
            assert_eq!(s * (lout - 1) + k - 2 * p, len, "config must tile exactly");
            let probe = random([2, cout, lout], &mut rng);
            let pv = tape.leaf(probe.clone()).unwrap();
            let b1 = tape.leaf(Tensor::zeros([1, 1, cin])).unwrap();
            let back = tape.conv1d_transpose(pv, wv, b1, s, p).unwrap();
            let lhs = tape.value(y).dot(&probe);
            let rhs = xin.dot(tape.value(back));
            assert!((lhs - rhs).abs() <= 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn maxpool_hand_case_and_routing() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 4], &[1.0, 3.0, 2.0, 2.0])).unwrap();
        let y = tape.maxpool(x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 2.0]);
        let target = tape.leaf(Tensor::zeros([1, 1, 2])).unwrap();
        let loss = tape.mse(y, target).unwrap();
        let g = tape.backward(loss).unwrap();
        let gx = g.get(x).unwrap().data();
        assert_eq!(gx[0], 0.0);
        assert!(gx[1] != 0.0);
        assert!(gx[2] != 0.0);
        assert_eq!(gx[3], 0.0);
    }

    #[test]
    fn maxpool_pads_ragged_tail() {
        let mut tape = Tape::new();
        let x = tape
            .leaf(t([1, 1, 5], &[1.0, 0.0, -1.0, -2.0, -7.0]))
            .unwrap();
        let y = tape.maxpool(x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -1.0, -7.0]);
    }

    #[test]
    fn factor_one_is_identity() {
        let mut tape = Tape::new();
        let data = [1.0, -3.0, 2.0];
        let x = tape.leaf(t([1, 1, 3], &data)).unwrap();
        let p = tape.maxpool(x, 1).unwrap();
        let u = tape.upsample(x, 1).unwrap();
        assert_eq!(tape.value(p).data(), &data);
        assert_eq!(tape.value(u).data(), &data);
    }

    #[test]
    fn upsample_repeats_and_sums_back() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 1], &[5.0])).unwrap();
        let y = tape.upsample(x, 3).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 5.0, 5.0]);
        let target = tape.leaf(Tensor::zeros([1, 1, 3])).unwrap();
        let loss = tape.mse(y, target).unwrap();
        let g = tape.backward(loss).unwrap();
        // d/dx of mean((x-0)^2 over 3 copies) = 2x
        assert!((g.get(x).unwrap().data()[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn mse_values() {
        let mut tape = Tape::new();
        let p = tape.leaf(t([1, 1, 2], &[0.0, 0.0])).unwrap();
        let q = tape.leaf(t([1, 1, 2], &[1.0, 1.0])).unwrap();
        let l = tape.mse(p, q).unwrap();
        assert_eq!(tape.value(l).data()[0], 1.0);
        let l0 = tape.mse(q, q).unwrap();
        assert_eq!(tape.value(l0).data()[0], 0.0);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[-1.0, -1.0]);
    }

    #[test]
    fn kl_closed_form() {
        let mut tape = Tape::new();
        let mu = tape.leaf(t([1, 1, 1], &[0.0])).unwrap();
        let lv = tape.leaf(t([1, 1, 1], &[0.0])).unwrap();
        let k = tape.gaussian_kl(mu, lv).unwrap();
        assert!(tape.value(k).data()[0].abs() <= 1e-12);
        let mu1 = tape.leaf(t([1, 1, 1], &[1.0])).unwrap();
        let k1 = tape.gaussian_kl(mu1, lv).unwrap();
        assert!((tape.value(k1).data()[0] - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn kl_non_negative_sweep() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..1000 {
            let mut tape = Tape::new();
            let mu = tape.leaf(t([1, 1, 1], &[rng.uniform(-3.0, 3.0)])).unwrap();
            let lv = tape.leaf(t([1, 1, 1], &[rng.uniform(-5.0, 3.0)])).unwrap();
            let k = tape.gaussian_kl(mu, lv).unwrap();
            assert!(tape.value(k).data()[0] >= 0.0);
        }
    }

    #[test]
    fn nan_is_rejected() {
        let mut tape = Tape::new();
        assert!(tape.leaf(t([1, 1, 1], &[f64::NAN])).is_err());
    }

    #[test]
    fn forward_ops_are_pure() {
        let mut rng = SplitMix64::new(2);
        let x = random([2, 2, 16], &mut rng);
        let w = random([3, 2, 4], &mut rng);
        let run = |x: &Tensor, w: &Tensor| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone()).unwrap();
            let wv = tape.leaf(w.clone()).unwrap();
            let b = tape.leaf(Tensor::zeros([1, 1, 3])).unwrap();
            let y = tape.conv1d(xv, wv, b, 2, 1).unwrap();
            let y = tape.activation(y, Activation::Tanh).unwrap();
            let y = tape.maxpool(y, 2).unwrap();
            tape.value(y).clone()
        };
        assert_eq!(run(&x, &w).data(), run(&x, &w).data());
    }
}
