//! Rank-4 tensor type and the deterministic kernels every network is built
//! from.
//!
//! Layout is frame-batch/channel/height/width, row-major. Kernels process
//! batch samples independently with a fixed per-sample operation order, so
//! results are bit-identical regardless of how frames are packed into
//! batches. Every kernel rounds its output elementwise to the input tensor's
//! precision mode.

use crate::error::{TensorError, TensorResult};
use crate::precision::PrecisionMode;
use crate::scalar::Scalar;

/// Shape of a rank-4 tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }
    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

/// Dense rank-4 float tensor with a precision tag.
///
/// Invariant: if `precision` is an emulated half format, every element is
/// exactly representable in it (construction and every kernel re-round).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    dims: Dims,
    precision: PrecisionMode,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: Dims) -> Self {
        Tensor { dims, precision: PrecisionMode::Fp32, data: vec![T::zero(); dims.len()] }
    }

    pub fn filled(dims: Dims, v: T) -> Self {
        Tensor { dims, precision: PrecisionMode::Fp32, data: vec![v; dims.len()] }
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> TensorResult<Self> {
        if data.len() != dims.len() {
            return Err(TensorError::DataLength {
                shape: dims.as_array(),
                expected: dims.len(),
                got: data.len(),
            });
        }
        Ok(Tensor { dims, precision: PrecisionMode::Fp32, data })
    }

    /// Scalar tensor of shape (1,1,1,1).
    pub fn scalar(v: T) -> Self {
        Tensor::filled(Dims::new(1, 1, 1, 1), v)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn precision(&self) -> PrecisionMode {
        self.precision
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims.c + c) * self.dims.h + y) * self.dims.w + x
    }
    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.idx(n, c, y, x)]
    }
    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.idx(n, c, y, x);
        self.data[i] = v;
    }

    /// Re-round every element to `mode` and tag the tensor with it.
    pub fn to_precision(&self, mode: PrecisionMode) -> Tensor<T> {
        let data = self.data.iter().map(|&v| v.round_to(mode)).collect();
        Tensor { dims: self.dims, precision: mode, data }
    }

    /// Tag with `mode`, rounding in place.
    pub fn round_in_place(&mut self, mode: PrecisionMode) {
        for v in &mut self.data {
            *v = v.round_to(mode);
        }
        self.precision = mode;
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            precision: self.precision,
            data: self.data.iter().map(|&v| U::of_f64(v.as_f64())).collect(),
        }
    }

    /// Extract sample `i` as a batch-1 tensor.
    pub fn sample(&self, i: usize) -> Tensor<T> {
        let per = self.dims.c * self.dims.h * self.dims.w;
        let mut out = Tensor {
            dims: Dims::new(1, self.dims.c, self.dims.h, self.dims.w),
            precision: self.precision,
            data: self.data[i * per..(i + 1) * per].to_vec(),
        };
        out.precision = self.precision;
        out
    }

    /// Stack batch-1 tensors along the batch dimension.
    pub fn stack(samples: &[Tensor<T>]) -> TensorResult<Tensor<T>> {
        let first = samples.first().ok_or(TensorError::InvalidArgument("stack of zero tensors"))?;
        let d = first.dims;
        let mut data = Vec::with_capacity(d.c * d.h * d.w * samples.len());
        for s in samples {
            if s.dims != d {
                return Err(TensorError::ShapeMismatch {
                    context: "stack",
                    left: d.as_array(),
                    right: s.dims.as_array(),
                });
            }
            data.extend_from_slice(&s.data);
        }
        Ok(Tensor {
            dims: Dims::new(samples.len() * d.n, d.c, d.h, d.w),
            precision: first.precision,
            data,
        })
    }

    pub fn iter_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn same_shape<T: Scalar>(ctx: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> TensorResult<()> {
    if a.dims() != b.dims() {
        return Err(TensorError::ShapeMismatch {
            context: ctx,
            left: a.dims().as_array(),
            right: b.dims().as_array(),
        });
    }
    Ok(())
}

fn rounded<T: Scalar>(dims: Dims, mode: PrecisionMode, mut data: Vec<T>) -> Tensor<T> {
    if mode != PrecisionMode::Fp32 {
        for v in &mut data {
            *v = v.round_to(mode);
        }
    }
    let mut t = Tensor::zeros(dims);
    t.data = data;
    t.precision = mode;
    t
}

/// Direct cross-correlation with zero padding.
///
/// `weight` has shape (out_c, in_c, k, k), `bias` one entry per output
/// channel. Accumulation runs in native precision; the output is rounded to
/// the input's precision mode.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    stride: usize,
    padding: usize,
) -> TensorResult<Tensor<T>> {
    let id = input.dims();
    let wd = weight.dims();
    let (out_c, in_c, k) = (wd.n, wd.c, wd.h);
    if wd.h != wd.w || k % 2 == 0 {
        return Err(TensorError::InvalidArgument("conv kernel must be square with odd size"));
    }
    if in_c != id.c {
        return Err(TensorError::ShapeMismatch {
            context: "conv2d channels",
            left: id.as_array(),
            right: wd.as_array(),
        });
    }
    if bias.len() != out_c {
        return Err(TensorError::InvalidArgument("conv bias length != out channels"));
    }
    if stride == 0 {
        return Err(TensorError::InvalidArgument("conv stride must be >= 1"));
    }
    if id.h + 2 * padding < k || id.w + 2 * padding < k {
        return Err(TensorError::InvalidArgument("conv input smaller than kernel"));
    }
    let oh = (id.h + 2 * padding - k) / stride + 1;
    let ow = (id.w + 2 * padding - k) / stride + 1;
    let dims = Dims::new(id.n, out_c, oh, ow);
    let mut data = vec![T::zero(); dims.len()];

    let xs = input.data();
    let ws = weight.data();
    let mut o = 0usize;
    for n in 0..id.n {
        for oc in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[oc];
                    let y0 = (oy * stride) as isize - padding as isize;
                    let x0 = (ox * stride) as isize - padding as isize;
                    for ic in 0..in_c {
                        let xbase = (n * id.c + ic) * id.h;
                        let wbase = (oc * in_c + ic) * k;
                        for ky in 0..k {
                            let iy = y0 + ky as isize;
                            if iy < 0 || iy >= id.h as isize {
                                continue;
                            }
                            let xrow = (xbase + iy as usize) * id.w;
                            let wrow = (wbase + ky) * k;
                            for kx in 0..k {
                                let ix = x0 + kx as isize;
                                if ix < 0 || ix >= id.w as isize {
                                    continue;
                                }
                                acc += xs[xrow + ix as usize] * ws[wrow + kx];
                            }
                        }
                    }
                    data[o] = acc;
                    o += 1;
                }
            }
        }
    }
    Ok(rounded(dims, input.precision(), data))
}

/// Space-to-depth: (n, c, h, w) -> (n, c*s^2, h/s, w/s), bijective.
pub fn pixel_unshuffle<T: Scalar>(input: &Tensor<T>, s: usize) -> TensorResult<Tensor<T>> {
    let d = input.dims();
    if s == 0 {
        return Err(TensorError::InvalidArgument("unshuffle factor must be >= 1"));
    }
    if d.h % s != 0 {
        return Err(TensorError::Divisibility { context: "pixel_unshuffle h", value: d.h, divisor: s });
    }
    if d.w % s != 0 {
        return Err(TensorError::Divisibility { context: "pixel_unshuffle w", value: d.w, divisor: s });
    }
    let dims = Dims::new(d.n, d.c * s * s, d.h / s, d.w / s);
    let mut out = vec![T::zero(); dims.len()];
    for n in 0..d.n {
        for c in 0..d.c {
            for i in 0..s {
                for j in 0..s {
                    let oc = c * s * s + i * s + j;
                    for y in 0..dims.h {
                        for x in 0..dims.w {
                            let src = input.at(n, c, y * s + i, x * s + j);
                            out[((n * dims.c + oc) * dims.h + y) * dims.w + x] = src;
                        }
                    }
                }
            }
        }
    }
    // Pure permutation: elements are already closed under the input precision.
    let mut t = Tensor::zeros(dims);
    t.data = out;
    t.precision = input.precision();
    Ok(t)
}

/// Depth-to-space: exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle<T: Scalar>(input: &Tensor<T>, s: usize) -> TensorResult<Tensor<T>> {
    let d = input.dims();
    if s == 0 {
        return Err(TensorError::InvalidArgument("shuffle factor must be >= 1"));
    }
    if d.c % (s * s) != 0 {
        return Err(TensorError::Divisibility { context: "pixel_shuffle c", value: d.c, divisor: s * s });
    }
    let dims = Dims::new(d.n, d.c / (s * s), d.h * s, d.w * s);
    let mut out = vec![T::zero(); dims.len()];
    for n in 0..d.n {
        for oc in 0..dims.c {
            for i in 0..s {
                for j in 0..s {
                    let c = oc * s * s + i * s + j;
                    for y in 0..d.h {
                        for x in 0..d.w {
                            let v = input.at(n, c, y, x);
                            out[((n * dims.c + oc) * dims.h + (y * s + i)) * dims.w + (x * s + j)] = v;
                        }
                    }
                }
            }
        }
    }
    let mut t = Tensor::zeros(dims);
    t.data = out;
    t.precision = input.precision();
    Ok(t)
}

#[inline]
fn sigmoid_f64(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn silu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .map(|&v| {
            let z = v.as_f64();
            T::of_f64(z * sigmoid_f64(z))
        })
        .collect();
    rounded(input.dims(), input.precision(), data)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    rounded(input.dims(), input.precision(), data)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> TensorResult<Tensor<T>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(rounded(a.dims(), a.precision(), data))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> TensorResult<Tensor<T>> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
    Ok(rounded(a.dims(), a.precision(), data))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> TensorResult<Tensor<T>> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Ok(rounded(a.dims(), a.precision(), data))
}

pub fn mul_scalar<T: Scalar>(a: &Tensor<T>, s: T) -> Tensor<T> {
    let data = a.data().iter().map(|&x| x * s).collect();
    rounded(a.dims(), a.precision(), data)
}

/// Concatenate along the channel axis; n/h/w must agree.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> TensorResult<Tensor<T>> {
    let (da, db) = (a.dims(), b.dims());
    if da.n != db.n || da.h != db.h || da.w != db.w {
        return Err(TensorError::ShapeMismatch {
            context: "concat_channels",
            left: da.as_array(),
            right: db.as_array(),
        });
    }
    let dims = Dims::new(da.n, da.c + db.c, da.h, da.w);
    let plane = da.h * da.w;
    let mut data = Vec::with_capacity(dims.len());
    for n in 0..da.n {
        let a0 = n * da.c * plane;
        data.extend_from_slice(&a.data()[a0..a0 + da.c * plane]);
        let b0 = n * db.c * plane;
        data.extend_from_slice(&b.data()[b0..b0 + db.c * plane]);
    }
    let mut t = Tensor::zeros(dims);
    t.data = data;
    t.precision = a.precision();
    Ok(t)
}

/// Channel slice [from, to).
pub fn slice_channels<T: Scalar>(a: &Tensor<T>, from: usize, to: usize) -> TensorResult<Tensor<T>> {
    let d = a.dims();
    if from > to || to > d.c {
        return Err(TensorError::InvalidArgument("channel slice out of range"));
    }
    let dims = Dims::new(d.n, to - from, d.h, d.w);
    let plane = d.h * d.w;
    let mut data = Vec::with_capacity(dims.len());
    for n in 0..d.n {
        let base = (n * d.c + from) * plane;
        data.extend_from_slice(&a.data()[base..base + (to - from) * plane]);
    }
    let mut t = Tensor::zeros(dims);
    t.data = data;
    t.precision = a.precision();
    Ok(t)
}

/// Backward warp: `output(p) = input(p + flow(p))`, bilinear, border clamp.
///
/// `flow` is (n, 2, h, w): channel 0 horizontal dx, channel 1 vertical dy,
/// in pixels.
pub fn bilinear_sample<T: Scalar>(input: &Tensor<T>, flow: &Tensor<T>) -> TensorResult<Tensor<T>> {
    let d = input.dims();
    let fd = flow.dims();
    if fd.c != 2 || fd.h != d.h || fd.w != d.w || fd.n != d.n {
        return Err(TensorError::ShapeMismatch {
            context: "bilinear_sample flow",
            left: d.as_array(),
            right: fd.as_array(),
        });
    }
    let mut out = Tensor::zeros(d);
    for n in 0..d.n {
        for y in 0..d.h {
            for x in 0..d.w {
                let dx = flow.at(n, 0, y, x).as_f64();
                let dy = flow.at(n, 1, y, x).as_f64();
                let sx = (x as f64 + dx).clamp(0.0, (d.w - 1) as f64);
                let sy = (y as f64 + dy).clamp(0.0, (d.h - 1) as f64);
                let x0 = sx.floor() as usize;
                let y0 = sy.floor() as usize;
                let x1 = (x0 + 1).min(d.w - 1);
                let y1 = (y0 + 1).min(d.h - 1);
                let fx = sx - x0 as f64;
                let fy = sy - y0 as f64;
                for c in 0..d.c {
                    let v00 = input.at(n, c, y0, x0).as_f64();
                    let v01 = input.at(n, c, y0, x1).as_f64();
                    let v10 = input.at(n, c, y1, x0).as_f64();
                    let v11 = input.at(n, c, y1, x1).as_f64();
                    let v = v00 * (1.0 - fy) * (1.0 - fx)
                        + v01 * (1.0 - fy) * fx
                        + v10 * fy * (1.0 - fx)
                        + v11 * fy * fx;
                    out.set(n, c, y, x, T::of_f64(v));
                }
            }
        }
    }
    out.round_in_place(input.precision());
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleDir {
    Down,
    Up,
}

/// 2x resampling: `Down` is a 2x2 mean pool, `Up` nearest-neighbor doubling.
pub fn resample2x<T: Scalar>(input: &Tensor<T>, dir: ResampleDir) -> TensorResult<Tensor<T>> {
    let d = input.dims();
    match dir {
        ResampleDir::Down => {
            if d.h % 2 != 0 {
                return Err(TensorError::Divisibility { context: "resample2x h", value: d.h, divisor: 2 });
            }
            if d.w % 2 != 0 {
                return Err(TensorError::Divisibility { context: "resample2x w", value: d.w, divisor: 2 });
            }
            let dims = Dims::new(d.n, d.c, d.h / 2, d.w / 2);
            let mut data = Vec::with_capacity(dims.len());
            let quarter = T::of_f64(0.25);
            for n in 0..d.n {
                for c in 0..d.c {
                    for y in 0..dims.h {
                        for x in 0..dims.w {
                            let s = input.at(n, c, 2 * y, 2 * x)
                                + input.at(n, c, 2 * y, 2 * x + 1)
                                + input.at(n, c, 2 * y + 1, 2 * x)
                                + input.at(n, c, 2 * y + 1, 2 * x + 1);
                            data.push(s * quarter);
                        }
                    }
                }
            }
            Ok(rounded(dims, input.precision(), data))
        }
        ResampleDir::Up => {
            let dims = Dims::new(d.n, d.c, d.h * 2, d.w * 2);
            let mut out = Tensor::zeros(dims);
            for n in 0..d.n {
                for c in 0..d.c {
                    for y in 0..dims.h {
                        for x in 0..dims.w {
                            out.set(n, c, y, x, input.at(n, c, y / 2, x / 2));
                        }
                    }
                }
            }
            out.precision = input.precision();
            Ok(out)
        }
    }
}

pub fn clamp01<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let one = T::one();
    let data = input
        .data()
        .iter()
        .map(|&v| if v < T::zero() { T::zero() } else if v > one { one } else { v })
        .collect();
    rounded(input.dims(), input.precision(), data)
}

pub fn clamp_elem<T: Scalar>(input: &Tensor<T>, lo: f64, hi: f64) -> Tensor<T> {
    let (lo, hi) = (T::of_f64(lo), T::of_f64(hi));
    let data = input
        .data()
        .iter()
        .map(|&v| if v < lo { lo } else if v > hi { hi } else { v })
        .collect();
    rounded(input.dims(), input.precision(), data)
}

pub fn abs_elem<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| v.abs()).collect();
    rounded(input.dims(), input.precision(), data)
}

pub fn square_elem<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| v * v).collect();
    rounded(input.dims(), input.precision(), data)
}

/// Elementwise exp via the deterministic evaluation in [`crate::gauss`], so
/// entropy parameters are reproducible across platforms.
pub fn exp_elem<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| T::of_f64(crate::gauss::exp_det(v.as_f64()))).collect();
    rounded(input.dims(), input.precision(), data)
}

/// Elementwise round half away from zero (the quantizer's rounding rule).
pub fn round_elem<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| v.round()).collect();
    rounded(input.dims(), input.precision(), data)
}

/// Per-channel scaling: `x` is (n, c, h, w), `s` is (1, c, 1, 1).
pub fn scale_channels<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>) -> TensorResult<Tensor<T>> {
    let (d, sd) = (x.dims(), s.dims());
    if sd.n != 1 || sd.h != 1 || sd.w != 1 || sd.c != d.c {
        return Err(TensorError::ShapeMismatch {
            context: "scale_channels",
            left: d.as_array(),
            right: sd.as_array(),
        });
    }
    let plane = d.h * d.w;
    let mut data = Vec::with_capacity(d.len());
    for n in 0..d.n {
        for c in 0..d.c {
            let sv = s.data()[c];
            let base = (n * d.c + c) * plane;
            for i in 0..plane {
                data.push(x.data()[base + i] * sv);
            }
        }
    }
    Ok(rounded(d, x.precision(), data))
}

/// Sum of all elements as a (1,1,1,1) tensor. Fixed left-to-right order.
pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut acc = T::zero();
    for &v in x.data() {
        acc += v;
    }
    rounded(Dims::new(1, 1, 1, 1), x.precision(), vec![acc])
}

pub fn mean_all<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.len().max(1);
    let s = sum_all(x);
    mul_scalar(&s, T::of_f64(1.0 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{uniform_tensor, DetRng};
    use proptest::prelude::*;

    #[test]
    fn identity_1x1_conv() {
        let mut r = DetRng::seeded(7);
        let x = uniform_tensor(Dims::new(1, 3, 4, 4), -1.0, 1.0, &mut r);
        // 1x1 kernel = identity matrix over channels.
        let mut w = Tensor::zeros(Dims::new(3, 3, 1, 1));
        for c in 0..3 {
            w.set(c, c, 0, 0, 1.0);
        }
        let y = conv2d(&x, &w, &[0.0; 3], 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_center_sum() {
        let x = Tensor::filled(Dims::new(1, 1, 5, 5), 1.0f32);
        let w = Tensor::filled(Dims::new(1, 1, 3, 3), 1.0f32);
        let y = conv2d(&x, &w, &[0.0], 1, 1).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 1, 5, 5));
        assert_eq!(y.at(0, 0, 2, 2), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0); // corner sees a 2x2 window
    }

    /// Independent quadruple-loop reference convolution.
    fn conv_reference(
        x: &Tensor<f32>,
        w: &Tensor<f32>,
        b: &[f32],
        stride: usize,
        pad: usize,
    ) -> Tensor<f32> {
        let (id, wd) = (x.dims(), w.dims());
        let oh = (id.h + 2 * pad - wd.h) / stride + 1;
        let ow = (id.w + 2 * pad - wd.w) / stride + 1;
        let mut out = Tensor::zeros(Dims::new(id.n, wd.n, oh, ow));
        for n in 0..id.n {
            for oc in 0..wd.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[oc];
                        for ic in 0..id.c {
                            for ky in 0..wd.h {
                                for kx in 0..wd.w {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && iy < id.h as isize && ix >= 0 && ix < id.w as isize
                                    {
                                        acc += x.at(n, ic, iy as usize, ix as usize)
                                            * w.at(oc, ic, ky, kx);
                                    }
                                }
                            }
                        }
                        out.set(n, oc, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_bruteforce() {
        let mut r = DetRng::seeded(11);
        for &(stride, pad) in &[(1usize, 0usize), (1, 1), (2, 1), (3, 2)] {
            let x = uniform_tensor(Dims::new(2, 3, 7, 9), -2.0, 2.0, &mut r);
            let w = uniform_tensor(Dims::new(4, 3, 3, 3), -1.0, 1.0, &mut r);
            let b = [0.3f32, -0.1, 0.0, 2.0];
            let got = conv2d(&x, &w, &b, stride, pad).unwrap();
            let want = conv_reference(&x, &w, &b, stride, pad);
            assert_eq!(got.dims(), want.dims());
            // Same accumulation order on both paths: exact equality in FP32.
            assert_eq!(got.data(), want.data(), "stride {stride} pad {pad}");
        }
    }

    #[test]
    fn conv_batch_packing_invariance() {
        let mut r = DetRng::seeded(13);
        let x = uniform_tensor(Dims::new(3, 2, 6, 6), -1.0, 1.0, &mut r);
        let w = uniform_tensor(Dims::new(2, 2, 3, 3), -1.0, 1.0, &mut r);
        let whole = conv2d(&x, &w, &[0.1, 0.2], 1, 1).unwrap();
        for i in 0..3 {
            let single = conv2d(&x.sample(i), &w, &[0.1, 0.2], 1, 1).unwrap();
            assert_eq!(single.data(), whole.sample(i).data());
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::<f32>::zeros(Dims::new(1, 3, 4, 4));
        let w = Tensor::<f32>::zeros(Dims::new(2, 4, 3, 3));
        assert!(conv2d(&x, &w, &[0.0; 2], 1, 1).is_err());
        let w_even = Tensor::<f32>::zeros(Dims::new(2, 3, 2, 2));
        assert!(conv2d(&x, &w_even, &[0.0; 2], 1, 1).is_err());
    }

    #[test]
    fn unshuffle_shapes() {
        let x = Tensor::<f32>::zeros(Dims::new(1, 3, 8, 8));
        let y = pixel_unshuffle(&x, 8).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 192, 1, 1));
        let x1 = pixel_unshuffle(&x, 1).unwrap();
        assert_eq!(x1, x);
        assert!(pixel_unshuffle(&x, 3).is_err());
        let z = pixel_shuffle(&y, 8).unwrap();
        assert_eq!(z.dims(), Dims::new(1, 3, 8, 8));
    }

    #[test]
    fn unshuffle_element_layout() {
        // 1x1x4x4 ramp, s=2: output channel (i*2+j) holds input (2y+i, 2x+j).
        let data: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let x = Tensor::from_vec(Dims::new(1, 1, 4, 4), data).unwrap();
        let y = pixel_unshuffle(&x, 2).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 4, 2, 2));
        assert_eq!(y.at(0, 0, 0, 0), 0.0); // (0,0)
        assert_eq!(y.at(0, 1, 0, 0), 1.0); // (0,1)
        assert_eq!(y.at(0, 2, 0, 0), 4.0); // (1,0)
        assert_eq!(y.at(0, 3, 1, 1), 15.0); // (3,3)
    }

    proptest! {
        #[test]
        fn shuffle_roundtrip(n in 1usize..3, c in 1usize..4, hs in 1usize..4, ws in 1usize..4,
                             s in 1usize..4, seed in 0u64..500) {
            let mut r = DetRng::seeded(seed);
            let x = uniform_tensor::<f32>(Dims::new(n, c, hs * s, ws * s), -3.0, 3.0, &mut r);
            let y = pixel_unshuffle(&x, s).unwrap();
            let z = pixel_shuffle(&y, s).unwrap();
            prop_assert_eq!(z, x);
        }

        #[test]
        fn shuffle_then_unshuffle(seed in 0u64..200, s in 1usize..4) {
            let mut r = DetRng::seeded(seed);
            let x = uniform_tensor::<f32>(Dims::new(1, 2 * s * s, 3, 2), -3.0, 3.0, &mut r);
            let y = pixel_shuffle(&x, s).unwrap();
            let z = pixel_unshuffle(&y, s).unwrap();
            prop_assert_eq!(z, x);
        }
    }

    #[test]
    fn elementwise_basics() {
        let x = Tensor::from_vec(Dims::new(1, 1, 1, 2), vec![-1.0f32, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 2.0]);
        let s = silu(&Tensor::scalar(0.0f32));
        assert_eq!(s.data(), &[0.0]);
        let a = Tensor::<f32>::zeros(Dims::new(1, 4, 2, 2));
        let b = Tensor::<f32>::zeros(Dims::new(1, 6, 2, 2));
        assert_eq!(concat_channels(&a, &b).unwrap().dims(), Dims::new(1, 10, 2, 2));
        assert!(add(&a, &b).is_err());
    }

    #[test]
    fn bilinear_zero_flow_identity() {
        let mut r = DetRng::seeded(5);
        let x = uniform_tensor::<f32>(Dims::new(1, 2, 4, 5), 0.0, 1.0, &mut r);
        let flow = Tensor::zeros(Dims::new(1, 2, 4, 5));
        let y = bilinear_sample(&x, &flow).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn bilinear_integer_shift_on_ramp() {
        // Horizontal ramp f(x) = x; flow dx=1 shifts it by one pixel, so the
        // interior reads x+1 and the right border clamps.
        let mut x = Tensor::zeros(Dims::new(1, 1, 2, 6));
        for y in 0..2 {
            for i in 0..6 {
                x.set(0, 0, y, i, i as f32);
            }
        }
        let mut flow = Tensor::zeros(Dims::new(1, 1, 2, 6));
        flow = concat_channels(&flow, &Tensor::zeros(Dims::new(1, 1, 2, 6))).unwrap();
        for y in 0..2 {
            for i in 0..6 {
                flow.set(0, 0, y, i, 1.0);
            }
        }
        let out = bilinear_sample(&x, &flow).unwrap();
        for i in 0..5 {
            assert_eq!(out.at(0, 0, 0, i), (i + 1) as f32);
        }
        assert_eq!(out.at(0, 0, 0, 5), 5.0); // clamped at the border
    }

    #[test]
    fn bilinear_midpoint() {
        let x = Tensor::from_vec(Dims::new(1, 1, 1, 2), vec![3.0f32, 5.0]).unwrap();
        let mut flow = Tensor::zeros(Dims::new(1, 2, 1, 2));
        flow.set(0, 0, 0, 0, 0.5);
        let out = bilinear_sample(&x, &flow).unwrap();
        assert_eq!(out.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn resample_cases() {
        let c = Tensor::filled(Dims::new(1, 2, 4, 4), 0.7f32);
        let d = resample2x(&c, ResampleDir::Down).unwrap();
        assert_eq!(d.dims(), Dims::new(1, 2, 2, 2));
        assert!(d.data().iter().all(|&v| v == 0.7));
        let u = resample2x(&d, ResampleDir::Up).unwrap();
        assert_eq!(u.dims(), c.dims());
        assert!(u.data().iter().all(|&v| v == 0.7));

        let x = Tensor::from_vec(Dims::new(1, 1, 2, 2), vec![1.0f32, 3.0, 5.0, 7.0]).unwrap();
        let m = resample2x(&x, ResampleDir::Down).unwrap();
        assert_eq!(m.at(0, 0, 0, 0), 4.0);

        let odd = Tensor::<f32>::zeros(Dims::new(1, 1, 3, 4));
        assert!(resample2x(&odd, ResampleDir::Down).is_err());
    }

    #[test]
    fn precision_closure_of_ops() {
        use crate::precision::{round_f64_to_bf16, round_f64_to_fp16};
        let mut r = DetRng::seeded(23);
        for mode in [PrecisionMode::Fp16Emu, PrecisionMode::Bf16Emu] {
            let x = uniform_tensor(Dims::new(1, 4, 4, 4), -4.0, 4.0, &mut r).to_precision(mode);
            let w = uniform_tensor(Dims::new(4, 4, 3, 3), -1.0, 1.0, &mut r).to_precision(mode);
            let y = conv2d(&x, &w, &[0.5; 4], 1, 1).unwrap();
            let z = silu(&y);
            for t in [&y, &z] {
                assert_eq!(t.precision(), mode);
                for &v in t.data() {
                    let rr = match mode {
                        PrecisionMode::Fp16Emu => round_f64_to_fp16(v as f64) as f32,
                        _ => round_f64_to_bf16(v as f64) as f32,
                    };
                    assert_eq!(v, rr);
                }
            }
        }
    }

    #[test]
    fn f64_instantiation_runs_same_kernels() {
        let mut r = DetRng::seeded(31);
        let x32 = uniform_tensor(Dims::new(1, 2, 4, 4), -1.0, 1.0, &mut r);
        let w32 = uniform_tensor(Dims::new(2, 2, 3, 3), -1.0, 1.0, &mut r);
        let y64 = conv2d(&x32.cast::<f64>(), &w32.cast::<f64>(), &[0.0f64; 2], 1, 1).unwrap();
        let y32 = conv2d(&x32, &w32, &[0.0f32; 2], 1, 1).unwrap();
        for (a, b) in y64.data().iter().zip(y32.data()) {
            assert!((a - *b as f64).abs() < 1e-6);
        }
    }
}
