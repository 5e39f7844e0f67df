//! Execution contexts for network graphs.
//!
//! Network forward passes are written once against [`Executor`] and run
//! either on [`Eager`] (plain kernel calls, with the operating precision
//! applied to every op output) or on the autodiff tape in [`crate::autodiff`]
//! (native precision, gradients recorded).

use crate::error::TensorResult;
use crate::precision::PrecisionMode;
use crate::scalar::Scalar;
use crate::tensor::{self, Dims, ResampleDir, Tensor};

/// Abstract op set shared by inference and training.
pub trait Executor<T: Scalar> {
    type V: Copy + std::fmt::Debug;

    /// Non-differentiable leaf.
    fn constant(&mut self, t: Tensor<T>) -> Self::V;
    /// Named leaf; on the tape, gradients are collected for it.
    fn param(&mut self, name: &str, t: Tensor<T>) -> Self::V;
    /// Current forward value.
    fn tensor(&self, v: Self::V) -> &Tensor<T>;

    fn dims(&self, v: Self::V) -> Dims {
        self.tensor(v).dims()
    }
    fn scalar_value(&self, v: Self::V) -> f64 {
        self.tensor(v).data()[0].as_f64()
    }

    fn conv2d(&mut self, x: Self::V, w: Self::V, b: Self::V, stride: usize, padding: usize)
        -> TensorResult<Self::V>;
    fn silu(&mut self, x: Self::V) -> Self::V;
    fn relu(&mut self, x: Self::V) -> Self::V;
    fn add(&mut self, a: Self::V, b: Self::V) -> TensorResult<Self::V>;
    fn sub(&mut self, a: Self::V, b: Self::V) -> TensorResult<Self::V>;
    fn mul(&mut self, a: Self::V, b: Self::V) -> TensorResult<Self::V>;
    fn mul_scalar(&mut self, a: Self::V, s: f64) -> Self::V;
    fn scale_channels(&mut self, x: Self::V, s: Self::V) -> TensorResult<Self::V>;
    fn concat_channels(&mut self, a: Self::V, b: Self::V) -> TensorResult<Self::V>;
    fn slice_channels(&mut self, a: Self::V, from: usize, to: usize) -> TensorResult<Self::V>;
    fn pixel_unshuffle(&mut self, x: Self::V, s: usize) -> TensorResult<Self::V>;
    fn pixel_shuffle(&mut self, x: Self::V, s: usize) -> TensorResult<Self::V>;
    fn resample2x(&mut self, x: Self::V, dir: ResampleDir) -> TensorResult<Self::V>;
    /// Backward warp by a constant flow field.
    fn bilinear_sample(&mut self, x: Self::V, flow: &Tensor<T>) -> TensorResult<Self::V>;
    fn clamp01(&mut self, x: Self::V) -> Self::V;
    fn clamp(&mut self, x: Self::V, lo: f64, hi: f64) -> Self::V;
    fn abs(&mut self, x: Self::V) -> Self::V;
    fn square(&mut self, x: Self::V) -> Self::V;
    fn exp(&mut self, x: Self::V) -> Self::V;
    /// Round half away from zero; gradient is the straight-through rule.
    fn round_ste(&mut self, x: Self::V) -> Self::V;
    /// Elementwise -log2 of the discretized-Gaussian probability of the
    /// (mean-removed) value under scale `sigma`.
    fn gaussian_bits(&mut self, centered: Self::V, sigma: Self::V) -> TensorResult<Self::V>;
    fn sum(&mut self, x: Self::V) -> Self::V;
    fn mean(&mut self, x: Self::V) -> Self::V;
}

/// Eager evaluation at a fixed operating precision.
pub struct Eager<T: Scalar> {
    mode: PrecisionMode,
    vals: Vec<Tensor<T>>,
    /// When set, every op output is scanned and non-finite elements counted
    /// (used to validate the emulated half-precision paths).
    pub scan_nonfinite: bool,
    pub nonfinite_elements: usize,
}

/// Handle into an [`Eager`] arena.
#[derive(Debug, Clone, Copy)]
pub struct Val(usize);

impl<T: Scalar> Eager<T> {
    pub fn new(mode: PrecisionMode) -> Self {
        Eager { mode, vals: Vec::new(), scan_nonfinite: false, nonfinite_elements: 0 }
    }

    pub fn mode(&self) -> PrecisionMode {
        self.mode
    }

    pub fn take(&mut self, v: Val) -> Tensor<T> {
        self.vals[v.0].clone()
    }

    fn push(&mut self, t: Tensor<T>) -> Val {
        if self.scan_nonfinite {
            self.nonfinite_elements += t.data().iter().filter(|v| !v.is_finite()).count();
        }
        self.vals.push(t);
        Val(self.vals.len() - 1)
    }

    fn enter(&mut self, t: Tensor<T>) -> Val {
        let t = if t.precision() == self.mode { t } else { t.to_precision(self.mode) };
        self.push(t)
    }
}

impl<T: Scalar> Executor<T> for Eager<T> {
    type V = Val;

    fn constant(&mut self, t: Tensor<T>) -> Val {
        self.enter(t)
    }

    fn param(&mut self, _name: &str, t: Tensor<T>) -> Val {
        self.enter(t)
    }

    fn tensor(&self, v: Val) -> &Tensor<T> {
        &self.vals[v.0]
    }

    fn conv2d(&mut self, x: Val, w: Val, b: Val, stride: usize, padding: usize) -> TensorResult<Val> {
        let bias: Vec<T> = self.vals[b.0].data().to_vec();
        let out = tensor::conv2d(&self.vals[x.0], &self.vals[w.0], &bias, stride, padding)?;
        Ok(self.push(out))
    }

    fn silu(&mut self, x: Val) -> Val {
        let out = tensor::silu(&self.vals[x.0]);
        self.push(out)
    }

    fn relu(&mut self, x: Val) -> Val {
        let out = tensor::relu(&self.vals[x.0]);
        self.push(out)
    }

    fn add(&mut self, a: Val, b: Val) -> TensorResult<Val> {
        let out = tensor::add(&self.vals[a.0], &self.vals[b.0])?;
        Ok(self.push(out))
    }

    fn sub(&mut self, a: Val, b: Val) -> TensorResult<Val> {
        let out = tensor::sub(&self.vals[a.0], &self.vals[b.0])?;
        Ok(self.push(out))
    }

    fn mul(&mut self, a: Val, b: Val) -> TensorResult<Val> {
        let out = tensor::mul(&self.vals[a.0], &self.vals[b.0])?;
        Ok(self.push(out))
    }

    fn mul_scalar(&mut self, a: Val, s: f64) -> Val {
        let out = tensor::mul_scalar(&self.vals[a.0], T::of_f64(s));
        self.push(out)
    }

    fn scale_channels(&mut self, x: Val, s: Val) -> TensorResult<Val> {
        let out = tensor::scale_channels(&self.vals[x.0], &self.vals[s.0])?;
        Ok(self.push(out))
    }

    fn concat_channels(&mut self, a: Val, b: Val) -> TensorResult<Val> {
        let out = tensor::concat_channels(&self.vals[a.0], &self.vals[b.0])?;
        Ok(self.push(out))
    }

    fn slice_channels(&mut self, a: Val, from: usize, to: usize) -> TensorResult<Val> {
        let out = tensor::slice_channels(&self.vals[a.0], from, to)?;
        Ok(self.push(out))
    }

    fn pixel_unshuffle(&mut self, x: Val, s: usize) -> TensorResult<Val> {
        let out = tensor::pixel_unshuffle(&self.vals[x.0], s)?;
        Ok(self.push(out))
    }

    fn pixel_shuffle(&mut self, x: Val, s: usize) -> TensorResult<Val> {
        let out = tensor::pixel_shuffle(&self.vals[x.0], s)?;
        Ok(self.push(out))
    }

    fn resample2x(&mut self, x: Val, dir: ResampleDir) -> TensorResult<Val> {
        let out = tensor::resample2x(&self.vals[x.0], dir)?;
        Ok(self.push(out))
    }

    fn bilinear_sample(&mut self, x: Val, flow: &Tensor<T>) -> TensorResult<Val> {
        let out = tensor::bilinear_sample(&self.vals[x.0], flow)?;
        Ok(self.push(out))
    }

    fn clamp01(&mut self, x: Val) -> Val {
        let out = tensor::clamp01(&self.vals[x.0]);
        self.push(out)
    }

    fn clamp(&mut self, x: Val, lo: f64, hi: f64) -> Val {
        let out = tensor::clamp_elem(&self.vals[x.0], lo, hi);
        self.push(out)
    }

    fn abs(&mut self, x: Val) -> Val {
        let out = tensor::abs_elem(&self.vals[x.0]);
        self.push(out)
    }

    fn square(&mut self, x: Val) -> Val {
        let out = tensor::square_elem(&self.vals[x.0]);
        self.push(out)
    }

    fn exp(&mut self, x: Val) -> Val {
        let out = tensor::exp_elem(&self.vals[x.0]);
        self.push(out)
    }

    fn round_ste(&mut self, x: Val) -> Val {
        let out = tensor::round_elem(&self.vals[x.0]);
        self.push(out)
    }

    fn gaussian_bits(&mut self, centered: Val, sigma: Val) -> TensorResult<Val> {
        let out = gaussian_bits_eager(&self.vals[centered.0], &self.vals[sigma.0])?;
        Ok(self.push(out))
    }

    fn sum(&mut self, x: Val) -> Val {
        let out = tensor::sum_all(&self.vals[x.0]);
        self.push(out)
    }

    fn mean(&mut self, x: Val) -> Val {
        let out = tensor::mean_all(&self.vals[x.0]);
        self.push(out)
    }
}

/// Probability floor for the rate surrogate; keeps -log2 finite.
pub const RATE_P_MIN: f64 = 1e-12;

/// Forward evaluation of the elementwise rate term shared by both executors.
pub fn gaussian_bits_eager<T: Scalar>(
    centered: &Tensor<T>,
    sigma: &Tensor<T>,
) -> TensorResult<Tensor<T>> {
    if centered.dims() != sigma.dims() {
        return Err(crate::error::TensorError::ShapeMismatch {
            context: "gaussian_bits",
            left: centered.dims().as_array(),
            right: sigma.dims().as_array(),
        });
    }
    let mut out = Tensor::zeros(centered.dims());
    let ln2 = std::f64::consts::LN_2;
    for (i, (&k, &s)) in centered.data().iter().zip(sigma.data()).enumerate() {
        let (k, s) = (k.as_f64(), s.as_f64());
        let p = (crate::gauss::normal_cdf((k + 0.5) / s) - crate::gauss::normal_cdf((k - 0.5) / s))
            .max(RATE_P_MIN);
        out.data_mut()[i] = T::of_f64(-p.ln() / ln2);
    }
    out.round_in_place(centered.precision());
    Ok(out)
}
