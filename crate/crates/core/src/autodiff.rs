//! Minimal reverse-mode differentiation over the kernel op set.
//!
//! A [`Tape`] records every op eagerly (forward values are materialized at
//! native precision) and [`Tape::backward`] walks the graph in reverse,
//! accumulating gradients additively across fan-out. Rounding inside the
//! quantizer differentiates by the straight-through rule. Gradient
//! verification ([`finite_diff_check`]) runs the same graph builders on f64.

use std::collections::BTreeMap;

use crate::error::{TensorError, TensorResult};
use crate::exec::{gaussian_bits_eager, Executor, RATE_P_MIN};
use crate::gauss::{normal_cdf, normal_pdf};
use crate::scalar::Scalar;
use crate::tensor::{self, Dims, ResampleDir, Tensor};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

pub type GradMap<T> = BTreeMap<String, Tensor<T>>;

enum Op<T: Scalar> {
    Leaf,
    Conv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, padding: usize },
    Silu { x: NodeId },
    Relu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    MulScalar { a: NodeId, s: f64 },
    ScaleChannels { x: NodeId, s: NodeId },
    ConcatC { a: NodeId, b: NodeId, split: usize },
    SliceC { a: NodeId, from: usize, to: usize },
    PixelUnshuffle { x: NodeId, s: usize },
    PixelShuffle { x: NodeId, s: usize },
    Down2 { x: NodeId },
    Up2 { x: NodeId },
    Bilinear { x: NodeId, flow: Tensor<T> },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    Abs { x: NodeId },
    Square { x: NodeId },
    Exp { x: NodeId },
    RoundSte { x: NodeId },
    GaussianBits { k: NodeId, sigma: NodeId },
    Sum { x: NodeId },
    Mean { x: NodeId },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Reverse-mode tape. Single-owner during forward and backward; independent
/// tapes may run on separate workers.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, NodeId)>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Detach: re-enter a node's value as a fresh constant leaf.
    pub fn stop_gradient(&mut self, id: NodeId) -> NodeId {
        let v = self.nodes[id.0].value.clone();
        self.push(v, Op::Leaf)
    }

    /// Gradients of a scalar loss with respect to every registered param.
    ///
    /// Disconnected params get zero tensors. Deterministic: identical tapes
    /// yield identical gradient maps.
    pub fn backward(&mut self, loss: NodeId) -> TensorResult<GradMap<T>> {
        if self.nodes[loss.0].value.dims() != Dims::new(1, 1, 1, 1) {
            return Err(TensorError::InvalidArgument("backward requires a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let mut out = GradMap::new();
        for (name, id) in &self.params {
            let g = grads[id.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[id.0].value.dims()));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn accumulate(
        grads: &mut [Option<Tensor<T>>],
        id: NodeId,
        delta: Tensor<T>,
    ) -> TensorResult<()> {
        match &mut grads[id.0] {
            Some(existing) => {
                *existing = tensor::add(existing, &delta)?;
            }
            slot => *slot = Some(delta),
        }
        Ok(())
    }

    fn backprop(
        &self,
        i: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> TensorResult<()> {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, padding } => {
                let xt = &self.nodes[x.0].value;
                let wt = &self.nodes[w.0].value;
                let (dx, dw, db) = conv2d_backward(xt, wt, g, *stride, *padding);
                Self::accumulate(grads, *x, dx)?;
                Self::accumulate(grads, *w, dw)?;
                Self::accumulate(grads, *b, db)?;
            }
            Op::Silu { x } => {
                let xt = &self.nodes[x.0].value;
                let mut d = g.clone();
                for (dv, &xv) in d.data_mut().iter_mut().zip(xt.data()) {
                    let z = xv.as_f64();
                    let s = 1.0 / (1.0 + (-z).exp());
                    *dv = *dv * T::of_f64(s * (1.0 + z * (1.0 - s)));
                }
                Self::accumulate(grads, *x, d)?;
            }
            Op::Relu { x } => {
                let xt = &self.nodes[x.0].value;
                let mut d = g.clone();
                for (dv, &xv) in d.data_mut().iter_mut().zip(xt.data()) {
                    if xv <= T::zero() {
                        *dv = T::zero();
                    }
                }
                Self::accumulate(grads, *x, d)?;
            }
            Op::Add { a, b } => {
                Self::accumulate(grads, *a, g.clone())?;
                Self::accumulate(grads, *b, g.clone())?;
            }
            Op::Sub { a, b } => {
                Self::accumulate(grads, *a, g.clone())?;
                Self::accumulate(grads, *b, tensor::mul_scalar(g, T::of_f64(-1.0)))?;
            }
            Op::Mul { a, b } => {
                let da = tensor::mul(g, &self.nodes[b.0].value)?;
                let db = tensor::mul(g, &self.nodes[a.0].value)?;
                Self::accumulate(grads, *a, da)?;
                Self::accumulate(grads, *b, db)?;
            }
            Op::MulScalar { a, s } => {
                Self::accumulate(grads, *a, tensor::mul_scalar(g, T::of_f64(*s)))?;
            }
            Op::ScaleChannels { x, s } => {
                let xt = &self.nodes[x.0].value;
                let st = &self.nodes[s.0].value;
                let dx = tensor::scale_channels(g, st)?;
                // ds[c] = sum over n,h,w of g * x
                let d = xt.dims();
                let mut ds = Tensor::zeros(st.dims());
                let plane = d.h * d.w;
                for n in 0..d.n {
                    for c in 0..d.c {
                        let base = (n * d.c + c) * plane;
                        let mut acc = T::zero();
                        for i in 0..plane {
                            acc += g.data()[base + i] * xt.data()[base + i];
                        }
                        ds.data_mut()[c] += acc;
                    }
                }
                Self::accumulate(grads, *x, dx)?;
                Self::accumulate(grads, *s, ds)?;
            }
            Op::ConcatC { a, b, split } => {
                let ga = tensor::slice_channels(g, 0, *split)?;
                let gb = tensor::slice_channels(g, *split, g.dims().c)?;
                Self::accumulate(grads, *a, ga)?;
                Self::accumulate(grads, *b, gb)?;
            }
            Op::SliceC { a, from, to } => {
                let ad = self.nodes[a.0].value.dims();
                let mut da = Tensor::zeros(ad);
                let plane = ad.h * ad.w;
                for n in 0..ad.n {
                    for (ci, c) in (*from..*to).enumerate() {
                        let src = (n * g.dims().c + ci) * plane;
                        let dst = (n * ad.c + c) * plane;
                        for i in 0..plane {
                            da.data_mut()[dst + i] = g.data()[src + i];
                        }
                    }
                }
                Self::accumulate(grads, *a, da)?;
            }
            Op::PixelUnshuffle { x, s } => {
                Self::accumulate(grads, *x, tensor::pixel_shuffle(g, *s)?)?;
            }
            Op::PixelShuffle { x, s } => {
                Self::accumulate(grads, *x, tensor::pixel_unshuffle(g, *s)?)?;
            }
            Op::Down2 { x } => {
                let up = tensor::resample2x(g, ResampleDir::Up)?;
                Self::accumulate(grads, *x, tensor::mul_scalar(&up, T::of_f64(0.25)))?;
            }
            Op::Up2 { x } => {
                let down = tensor::resample2x(g, ResampleDir::Down)?;
                Self::accumulate(grads, *x, tensor::mul_scalar(&down, T::of_f64(4.0)))?;
            }
            Op::Bilinear { x, flow } => {
                let xt = &self.nodes[x.0].value;
                Self::accumulate(grads, *x, bilinear_backward(xt.dims(), flow, g))?;
            }
            Op::Clamp { x, lo, hi } => {
                let xt = &self.nodes[x.0].value;
                let (lo, hi) = (T::of_f64(*lo), T::of_f64(*hi));
                let mut d = g.clone();
                for (dv, &xv) in d.data_mut().iter_mut().zip(xt.data()) {
                    if xv < lo || xv > hi {
                        *dv = T::zero();
                    }
                }
                Self::accumulate(grads, *x, d)?;
            }
            Op::Abs { x } => {
                let xt = &self.nodes[x.0].value;
                let mut d = g.clone();
                for (dv, &xv) in d.data_mut().iter_mut().zip(xt.data()) {
                    *dv = if xv > T::zero() {
                        *dv
                    } else if xv < T::zero() {
                        -*dv
                    } else {
                        T::zero()
                    };
                }
                Self::accumulate(grads, *x, d)?;
            }
            Op::Square { x } => {
                let xt = &self.nodes[x.0].value;
                let two_x = tensor::mul_scalar(xt, T::of_f64(2.0));
                Self::accumulate(grads, *x, tensor::mul(g, &two_x)?)?;
            }
            Op::Exp { x } => {
                // d exp(x) = exp(x); the node's own output is the factor.
                Self::accumulate(grads, *x, tensor::mul(g, &self.nodes[i].value)?)?;
            }
            Op::RoundSte { x } => {
                // Straight-through: d round(y)/dy treated as 1.
                Self::accumulate(grads, *x, g.clone())?;
            }
            Op::GaussianBits { k, sigma } => {
                let kt = &self.nodes[k.0].value;
                let st = &self.nodes[sigma.0].value;
                let mut dk = Tensor::zeros(kt.dims());
                let mut ds = Tensor::zeros(st.dims());
                let ln2 = std::f64::consts::LN_2;
                for i in 0..kt.len() {
                    let kv = kt.data()[i].as_f64();
                    let sv = st.data()[i].as_f64();
                    let a = (kv + 0.5) / sv;
                    let b = (kv - 0.5) / sv;
                    let p = normal_cdf(a) - normal_cdf(b);
                    if p <= RATE_P_MIN {
                        continue; // clamped region: flat
                    }
                    let gv = g.data()[i].as_f64();
                    let (pa, pb) = (normal_pdf(a), normal_pdf(b));
                    dk.data_mut()[i] = T::of_f64(gv * -(pa - pb) / (sv * p * ln2));
                    ds.data_mut()[i] = T::of_f64(gv * (a * pa - b * pb) / (sv * p * ln2));
                }
                Self::accumulate(grads, *k, dk)?;
                Self::accumulate(grads, *sigma, ds)?;
            }
            Op::Sum { x } => {
                let gd = g.data()[0];
                Self::accumulate(grads, *x, Tensor::filled(self.nodes[x.0].value.dims(), gd))?;
            }
            Op::Mean { x } => {
                let d = self.nodes[x.0].value.dims();
                let gd = g.data()[0] * T::of_f64(1.0 / d.len().max(1) as f64);
                Self::accumulate(grads, *x, Tensor::filled(d, gd))?;
            }
        }
        Ok(())
    }
}

fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let id = x.dims();
    let wd = w.dims();
    let gd = g.dims();
    let k = wd.h;
    let mut dx = Tensor::zeros(id);
    let mut dw = Tensor::zeros(wd);
    let mut db = Tensor::zeros(Dims::new(1, wd.n, 1, 1));
    for n in 0..gd.n {
        for oc in 0..gd.c {
            for oy in 0..gd.h {
                for ox in 0..gd.w {
                    let gv = g.at(n, oc, oy, ox);
                    if gv == T::zero() {
                        continue;
                    }
                    db.data_mut()[oc] += gv;
                    let y0 = (oy * stride) as isize - padding as isize;
                    let x0 = (ox * stride) as isize - padding as isize;
                    for ic in 0..id.c {
                        for ky in 0..k {
                            let iy = y0 + ky as isize;
                            if iy < 0 || iy >= id.h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = x0 + kx as isize;
                                if ix < 0 || ix >= id.w as isize {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                let xi = x.idx(n, ic, iy, ix);
                                let wi = w.idx(oc, ic, ky, kx);
                                dx.data_mut()[xi] += gv * w.data()[wi];
                                dw.data_mut()[wi] += gv * x.data()[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

fn bilinear_backward<T: Scalar>(xdims: Dims, flow: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let d = xdims;
    let mut dx = Tensor::zeros(d);
    for n in 0..d.n {
        for y in 0..d.h {
            for x in 0..d.w {
                let fdx = flow.at(n, 0, y, x).as_f64();
                let fdy = flow.at(n, 1, y, x).as_f64();
                let sx = (x as f64 + fdx).clamp(0.0, (d.w - 1) as f64);
                let sy = (y as f64 + fdy).clamp(0.0, (d.h - 1) as f64);
                let x0 = sx.floor() as usize;
                let y0 = sy.floor() as usize;
                let x1 = (x0 + 1).min(d.w - 1);
                let y1 = (y0 + 1).min(d.h - 1);
                let fx = sx - x0 as f64;
                let fy = sy - y0 as f64;
                for c in 0..d.c {
                    let gv = g.at(n, c, y, x).as_f64();
                    for (yy, xx, wgt) in [
                        (y0, x0, (1.0 - fy) * (1.0 - fx)),
                        (y0, x1, (1.0 - fy) * fx),
                        (y1, x0, fy * (1.0 - fx)),
                        (y1, x1, fy * fx),
                    ] {
                        let i = dx.idx(n, c, yy, xx);
                        dx.data_mut()[i] += T::of_f64(gv * wgt);
                    }
                }
            }
        }
    }
    dx
}

impl<T: Scalar> Executor<T> for Tape<T> {
    type V = NodeId;

    fn constant(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Leaf)
    }

    fn param(&mut self, name: &str, t: Tensor<T>) -> NodeId {
        let id = self.push(t, Op::Leaf);
        self.params.push((name.to_string(), id));
        id
    }

    fn tensor(&self, v: NodeId) -> &Tensor<T> {
        self.value(v)
    }

    fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, padding: usize)
        -> TensorResult<NodeId> {
        let bias: Vec<T> = self.nodes[b.0].value.data().to_vec();
        let out = tensor::conv2d(&self.nodes[x.0].value, &self.nodes[w.0].value, &bias, stride, padding)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, padding }))
    }

    fn silu(&mut self, x: NodeId) -> NodeId {
        let out = tensor::silu(&self.nodes[x.0].value);
        self.push(out, Op::Silu { x })
    }

    fn relu(&mut self, x: NodeId) -> NodeId {
        let out = tensor::relu(&self.nodes[x.0].value);
        self.push(out, Op::Relu { x })
    }

    fn add(&mut self, a: NodeId, b: NodeId) -> TensorResult<NodeId> {
        let out = tensor::add(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    fn sub(&mut self, a: NodeId, b: NodeId) -> TensorResult<NodeId> {
        let out = tensor::sub(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        Ok(self.push(out, Op::Sub { a, b }))
    }

    fn mul(&mut self, a: NodeId, b: NodeId) -> TensorResult<NodeId> {
        let out = tensor::mul(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    fn mul_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let out = tensor::mul_scalar(&self.nodes[a.0].value, T::of_f64(s));
        self.push(out, Op::MulScalar { a, s })
    }

    fn scale_channels(&mut self, x: NodeId, s: NodeId) -> TensorResult<NodeId> {
        let out = tensor::scale_channels(&self.nodes[x.0].value, &self.nodes[s.0].value)?;
        Ok(self.push(out, Op::ScaleChannels { x, s }))
    }

    fn concat_channels(&mut self, a: NodeId, b: NodeId) -> TensorResult<NodeId> {
        let split = self.nodes[a.0].value.dims().c;
        let out = tensor::concat_channels(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        Ok(self.push(out, Op::ConcatC { a, b, split }))
    }

    fn slice_channels(&mut self, a: NodeId, from: usize, to: usize) -> TensorResult<NodeId> {
        let out = tensor::slice_channels(&self.nodes[a.0].value, from, to)?;
        Ok(self.push(out, Op::SliceC { a, from, to }))
    }

    fn pixel_unshuffle(&mut self, x: NodeId, s: usize) -> TensorResult<NodeId> {
        let out = tensor::pixel_unshuffle(&self.nodes[x.0].value, s)?;
        Ok(self.push(out, Op::PixelUnshuffle { x, s }))
    }

    fn pixel_shuffle(&mut self, x: NodeId, s: usize) -> TensorResult<NodeId> {
        let out = tensor::pixel_shuffle(&self.nodes[x.0].value, s)?;
        Ok(self.push(out, Op::PixelShuffle { x, s }))
    }

    fn resample2x(&mut self, x: NodeId, dir: ResampleDir) -> TensorResult<NodeId> {
        let out = tensor::resample2x(&self.nodes[x.0].value, dir)?;
        let op = match dir {
            ResampleDir::Down => Op::Down2 { x },
            ResampleDir::Up => Op::Up2 { x },
        };
        Ok(self.push(out, op))
    }

    fn bilinear_sample(&mut self, x: NodeId, flow: &Tensor<T>) -> TensorResult<NodeId> {
        let out = tensor::bilinear_sample(&self.nodes[x.0].value, flow)?;
        Ok(self.push(out, Op::Bilinear { x, flow: flow.clone() }))
    }

    fn clamp01(&mut self, x: NodeId) -> NodeId {
        self.clamp(x, 0.0, 1.0)
    }

    fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let out = tensor::clamp_elem(&self.nodes[x.0].value, lo, hi);
        self.push(out, Op::Clamp { x, lo, hi })
    }

    fn abs(&mut self, x: NodeId) -> NodeId {
        let out = tensor::abs_elem(&self.nodes[x.0].value);
        self.push(out, Op::Abs { x })
    }

    fn square(&mut self, x: NodeId) -> NodeId {
        let out = tensor::square_elem(&self.nodes[x.0].value);
        self.push(out, Op::Square { x })
    }

    fn exp(&mut self, x: NodeId) -> NodeId {
        let out = tensor::exp_elem(&self.nodes[x.0].value);
        self.push(out, Op::Exp { x })
    }

    fn round_ste(&mut self, x: NodeId) -> NodeId {
        let out = tensor::round_elem(&self.nodes[x.0].value);
        self.push(out, Op::RoundSte { x })
    }

    fn gaussian_bits(&mut self, centered: NodeId, sigma: NodeId) -> TensorResult<NodeId> {
        let out = gaussian_bits_eager(&self.nodes[centered.0].value, &self.nodes[sigma.0].value)?;
        Ok(self.push(out, Op::GaussianBits { k: centered, sigma }))
    }

    fn sum(&mut self, x: NodeId) -> NodeId {
        let out = tensor::sum_all(&self.nodes[x.0].value);
        self.push(out, Op::Sum { x })
    }

    fn mean(&mut self, x: NodeId) -> NodeId {
        let out = tensor::mean_all(&self.nodes[x.0].value);
        self.push(out, Op::Mean { x })
    }
}

/// Adam optimizer state: per-parameter moment estimates plus step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// One bias-corrected Adam update over every (param, grad) pair.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<T>>,
        grads: &GradMap<T>,
    ) -> TensorResult<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = match params.get_mut(name) {
                Some(p) => p,
                None => continue,
            };
            if p.dims() != g.dims() {
                return Err(TensorError::ShapeMismatch {
                    context: "adam_step",
                    left: p.dims().as_array(),
                    right: g.dims().as_array(),
                });
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.dims()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.dims()));
            for i in 0..g.len() {
                let gv = g.data()[i].as_f64();
                let mv = self.beta1 * m.data()[i].as_f64() + (1.0 - self.beta1) * gv;
                let vv = self.beta2 * v.data()[i].as_f64() + (1.0 - self.beta2) * gv * gv;
                m.data_mut()[i] = T::of_f64(mv);
                v.data_mut()[i] = T::of_f64(vv);
                let mhat = mv / bc1;
                let vhat = vv / bc2;
                let upd = self.lr * mhat / (vhat.sqrt() + self.eps);
                p.data_mut()[i] = T::of_f64(p.data()[i].as_f64() - upd);
            }
        }
        Ok(())
    }
}

/// Max relative error between analytic gradients and central differences.
///
/// The builder is re-run per probe; evaluation should use `f64` inputs so
/// that differentiation error is separable from roundoff. The relative error
/// is `|analytic - numeric| / max(1e-8, |numeric|)`, maximized over every
/// coordinate of every input.
pub fn finite_diff_check<F>(build: F, inputs: &[Tensor<f64>], eps: f64) -> TensorResult<f64>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> TensorResult<NodeId>,
{
    let eval = |probe: &[Tensor<f64>]| -> TensorResult<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> =
            probe.iter().enumerate().map(|(i, t)| tape.param(&format!("in{i}"), t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> =
        inputs.iter().enumerate().map(|(i, t)| tape.param(&format!("in{i}"), t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    if tape.value(loss).dims() != Dims::new(1, 1, 1, 1) {
        return Err(TensorError::InvalidArgument("finite_diff_check requires scalar output"));
    }
    let analytic = tape.backward(loss)?;

    let mut max_rel = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let a = &analytic[&format!("in{i}")];
        for j in 0..input.len() {
            let mut plus: Vec<Tensor<f64>> = inputs.to_vec();
            plus[i].data_mut()[j] += eps;
            let mut minus: Vec<Tensor<f64>> = inputs.to_vec();
            minus[i].data_mut()[j] -= eps;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let rel = (a.data()[j] - numeric).abs() / numeric.abs().max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
