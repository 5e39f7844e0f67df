//! Temporal consistency machinery: block-matching flow, forward-backward
//! occlusion masks, occlusion-weighted pixel/feature warping losses, and the
//! fixed perceptual-proxy feature extractor.
//!
//! The losses are training-only objectives. Flow fields map frame-t
//! coordinates to frame t-1 (backward warping): `x_t(p) ~ x_{t-1}(p + v(p))`.

use crate::error::{CodecError, Result, TensorError};
use crate::exec::{Eager, Executor};
use crate::precision::PrecisionMode;
use crate::rng::{conv_init, DetRng};
use crate::scalar::Scalar;
use crate::tensor::{self, Dims, ResampleDir, Tensor};
use crate::Tensor32;

/// Loss weights for the combined consistency objective.
#[derive(Debug, Clone, Copy)]
pub struct IccWeights {
    pub lambda_p: f64,
    pub lambda_f: f64,
}

impl Default for IccWeights {
    fn default() -> Self {
        IccWeights { lambda_p: 1.0, lambda_f: 2e-4 }
    }
}

/// Combined consistency objective from precomputed loss terms.
pub fn icc_loss(pixel: f64, feature: f64, w: IccWeights) -> f64 {
    w.lambda_p * pixel + w.lambda_f * feature
}

pub const DEFAULT_BLOCK: usize = 8;
pub const DEFAULT_RADIUS: usize = 4;
pub const DEFAULT_FB_TAU: f64 = 1.5;

/// Integer block-matching flow from `cur` to `prev`: per block, the
/// displacement minimizing SAD within +/- radius, ties broken by smallest
/// |dx|+|dy|, then smallest dy, then dx. The winning displacement is
/// replicated across the block; partial border blocks are matched as-is.
pub fn block_matching_flow(
    cur: &Tensor32,
    prev: &Tensor32,
    block: usize,
    radius: usize,
) -> Result<Tensor32> {
    let d = cur.dims();
    if prev.dims() != d {
        return Err(TensorError::ShapeMismatch {
            context: "block_matching_flow",
            left: d.as_array(),
            right: prev.dims().as_array(),
        }
        .into());
    }
    if block == 0 {
        return Err(CodecError::Config("block size must be >= 1".into()));
    }
    let r = radius as isize;
    let mut flow = Tensor::zeros(Dims::new(d.n, 2, d.h, d.w));
    for n in 0..d.n {
        let mut by = 0;
        while by < d.h {
            let y1 = (by + block).min(d.h);
            let mut bx = 0;
            while bx < d.w {
                let x1 = (bx + block).min(d.w);
                // key: (sad, |dx|+|dy|, dy, dx)
                let mut best = (f64::INFINITY, isize::MAX, isize::MAX, isize::MAX);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let mut sad = 0.0f64;
                        for c in 0..d.c {
                            for y in by..y1 {
                                let sy = (y as isize + dy).clamp(0, d.h as isize - 1) as usize;
                                for x in bx..x1 {
                                    let sx = (x as isize + dx).clamp(0, d.w as isize - 1) as usize;
                                    sad += (cur.at(n, c, y, x) - prev.at(n, c, sy, sx)).abs()
                                        as f64;
                                }
                            }
                        }
                        let key = (sad, dx.abs() + dy.abs(), dy, dx);
                        if key < best {
                            best = key;
                        }
                    }
                }
                for y in by..y1 {
                    for x in bx..x1 {
                        flow.set(n, 0, y, x, best.3 as f32);
                        flow.set(n, 1, y, x, best.2 as f32);
                    }
                }
                bx += block;
            }
            by += block;
        }
    }
    Ok(flow)
}

/// Forward-backward consistency mask: valid (1) where the forward flow and
/// the warped backward flow cancel within `tau` pixels.
pub fn occlusion_mask(v_fwd: &Tensor32, v_bwd: &Tensor32, tau: f64) -> Result<Tensor32> {
    let d = v_fwd.dims();
    if v_bwd.dims() != d || d.c != 2 {
        return Err(TensorError::ShapeMismatch {
            context: "occlusion_mask",
            left: d.as_array(),
            right: v_bwd.dims().as_array(),
        }
        .into());
    }
    let warped_bwd = tensor::bilinear_sample(v_bwd, v_fwd)?;
    let mut mask = Tensor::zeros(Dims::new(d.n, 1, d.h, d.w));
    for n in 0..d.n {
        for y in 0..d.h {
            for x in 0..d.w {
                let ex = v_fwd.at(n, 0, y, x) as f64 + warped_bwd.at(n, 0, y, x) as f64;
                let ey = v_fwd.at(n, 1, y, x) as f64 + warped_bwd.at(n, 1, y, x) as f64;
                let err = (ex * ex + ey * ey).sqrt();
                mask.set(n, 1 - 1, y, x, if err <= tau { 1.0 } else { 0.0 });
            }
        }
    }
    Ok(mask)
}

fn repeat_mask<T: Scalar>(mask: &Tensor<T>, channels: usize) -> Tensor<T> {
    let d = mask.dims();
    let mut out = Tensor::zeros(Dims::new(d.n, channels, d.h, d.w));
    for n in 0..d.n {
        for c in 0..channels {
            for y in 0..d.h {
                for x in 0..d.w {
                    out.set(n, c, y, x, mask.at(n, 0, y, x));
                }
            }
        }
    }
    out
}

fn mask_total<T: Scalar>(mask: &Tensor<T>) -> f64 {
    mask.data().iter().map(|v| v.as_f64()).sum()
}

/// Graph builder: occlusion-weighted mean L1 between `cur` and the warped
/// `prev`, normalized by the valid-pixel count. Zero valid pixels yield a
/// constant zero.
pub fn masked_warp_l1<T: Scalar, E: Executor<T>>(
    ex: &mut E,
    cur: E::V,
    prev: E::V,
    flow: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<E::V> {
    let total = mask_total(mask);
    if total == 0.0 {
        return Ok(ex.constant(Tensor::scalar(T::zero())));
    }
    let channels = ex.dims(cur).c;
    let warped = ex.bilinear_sample(prev, flow)?;
    let diff = ex.sub(cur, warped)?;
    let l1 = ex.abs(diff);
    let m = ex.constant(repeat_mask(mask, channels));
    let weighted = ex.mul(l1, m)?;
    let s = ex.sum(weighted);
    Ok(ex.mul_scalar(s, 1.0 / total))
}

/// Graph builder: occlusion-weighted mean squared-L2 form of the same loss.
pub fn masked_warp_l2<T: Scalar, E: Executor<T>>(
    ex: &mut E,
    cur: E::V,
    prev: E::V,
    flow: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<E::V> {
    let total = mask_total(mask);
    if total == 0.0 {
        return Ok(ex.constant(Tensor::scalar(T::zero())));
    }
    let channels = ex.dims(cur).c;
    let warped = ex.bilinear_sample(prev, flow)?;
    let diff = ex.sub(cur, warped)?;
    let sq = ex.square(diff);
    let m = ex.constant(repeat_mask(mask, channels));
    let weighted = ex.mul(sq, m)?;
    let s = ex.sum(weighted);
    Ok(ex.mul_scalar(s, 1.0 / total))
}

/// Average-pool the flow by 2^levels and scale displacements to the reduced
/// resolution.
pub fn downscale_flow<T: Scalar>(flow: &Tensor<T>, levels: u32) -> Result<Tensor<T>> {
    let mut f = flow.clone();
    for _ in 0..levels {
        f = tensor::resample2x(&f, ResampleDir::Down)?;
    }
    Ok(tensor::mul_scalar(&f, T::of_f64(1.0 / (1u32 << levels) as f64)))
}

/// Min-pool the mask by 2^levels: a reduced cell is valid only if every
/// covered pixel is valid.
pub fn downscale_mask<T: Scalar>(mask: &Tensor<T>, levels: u32) -> Result<Tensor<T>> {
    let d = mask.dims();
    let f = 1usize << levels;
    if d.h % f != 0 || d.w % f != 0 {
        return Err(TensorError::Divisibility {
            context: "downscale_mask",
            value: d.h.max(d.w),
            divisor: f,
        }
        .into());
    }
    let od = Dims::new(d.n, 1, d.h / f, d.w / f);
    let mut out = Tensor::zeros(od);
    for n in 0..d.n {
        for y in 0..od.h {
            for x in 0..od.w {
                let mut v = T::one();
                for yy in 0..f {
                    for xx in 0..f {
                        let m = mask.at(n, 0, y * f + yy, x * f + xx);
                        if m < v {
                            v = m;
                        }
                    }
                }
                out.set(n, 0, y, x, v);
            }
        }
    }
    Ok(out)
}

/// Fixed feature extractor standing in for a pretrained perceptual network:
/// four conv layers, relu activations, two stride-2 downsamples, weights
/// generated once from seed 0x5EED and never trained.
pub struct ProxyNet {
    weights: Vec<(Tensor32, usize)>, // (kernel, stride)
}

pub const PROXY_SEED: u64 = 0x5EED;
/// Spatial reduction of the proxy features relative to the input.
pub const PROXY_LEVELS: u32 = 2;

impl Default for ProxyNet {
    fn default() -> Self {
        Self::new()
    }
}

impl ProxyNet {
    pub fn new() -> Self {
        let mut rng = DetRng::seeded(PROXY_SEED);
        let spec: [(usize, usize, usize); 4] =
            [(8, 3, 1), (16, 8, 2), (16, 16, 1), (24, 16, 2)];
        let weights = spec
            .iter()
            .map(|&(out_c, in_c, stride)| (conv_init::<f32>(out_c, in_c, 3, &mut rng), stride))
            .collect();
        ProxyNet { weights }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.last().map(|(w, _)| w.dims().n).unwrap_or(0)
    }

    /// Feature pass as a graph fragment (no trainable parameters).
    pub fn features<T: Scalar, E: Executor<T>>(&self, ex: &mut E, x: E::V) -> Result<E::V> {
        let mut h = x;
        for (w, stride) in &self.weights {
            let out_c = w.dims().n;
            let wv = ex.constant(w.cast::<T>());
            let bv = ex.constant(Tensor::zeros(Dims::new(1, out_c, 1, 1)));
            h = ex.conv2d(h, wv, bv, *stride, 1)?;
            h = ex.relu(h);
        }
        Ok(h)
    }

    /// Eager feature evaluation at native precision.
    pub fn features_eager(&self, x: &Tensor32) -> Result<Tensor32> {
        let mut ex = Eager::<f32>::new(PrecisionMode::Fp32);
        let xv = ex.constant(x.clone());
        let f = self.features(&mut ex, xv)?;
        Ok(ex.take(f))
    }
}

/// Occlusion-weighted L1 between the current frame and the flow-warped
/// previous frame, evaluated eagerly.
pub fn pixel_warping_loss(
    cur: &Tensor32,
    prev: &Tensor32,
    flow: &Tensor32,
    mask: &Tensor32,
) -> Result<f64> {
    let mut ex = Eager::<f32>::new(PrecisionMode::Fp32);
    let c = ex.constant(cur.clone());
    let p = ex.constant(prev.clone());
    let loss = masked_warp_l1(&mut ex, c, p, flow, mask)?;
    Ok(ex.scalar_value(loss))
}

/// Occlusion-weighted squared-L2 between proxy features of the two frames,
/// with the flow pooled and rescaled to feature resolution and the mask
/// min-pooled, evaluated eagerly.
pub fn feature_warping_loss(
    cur: &Tensor32,
    prev: &Tensor32,
    flow: &Tensor32,
    mask: &Tensor32,
    proxy: &ProxyNet,
) -> Result<f64> {
    let mut ex = Eager::<f32>::new(PrecisionMode::Fp32);
    let c = ex.constant(cur.clone());
    let p = ex.constant(prev.clone());
    let fc = proxy.features(&mut ex, c)?;
    let fp = proxy.features(&mut ex, p)?;
    let flow_l = downscale_flow(flow, PROXY_LEVELS)?;
    let mask_l = downscale_mask(mask, PROXY_LEVELS)?;
    let loss = masked_warp_l2(&mut ex, fc, fp, &flow_l, &mask_l)?;
    Ok(ex.scalar_value(loss))
}

/// Flow file I/O: magic "NVCF", u32 height, u32 width, then the dx plane and
/// the dy plane as little-endian f32.
pub mod flowio {
    use super::*;
    use std::io::{Read, Write};
    use std::path::Path;

    const MAGIC: &[u8; 4] = b"NVCF";

    pub fn write_flow(flow: &Tensor32, mut w: impl Write) -> Result<()> {
        let d = flow.dims();
        if d.n != 1 || d.c != 2 {
            return Err(CodecError::Format("flow must be (1,2,H,W)".into()));
        }
        w.write_all(MAGIC)?;
        w.write_all(&(d.h as u32).to_le_bytes())?;
        w.write_all(&(d.w as u32).to_le_bytes())?;
        for &v in flow.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_flow(mut r: impl Read) -> Result<Tensor32> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CodecError::Format("bad magic, not a flow file".into()));
        }
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        let h = u32::from_le_bytes(b) as usize;
        r.read_exact(&mut b)?;
        let w = u32::from_le_bytes(b) as usize;
        let dims = Dims::new(1, 2, h, w);
        let mut data = vec![0f32; dims.len()];
        for v in &mut data {
            r.read_exact(&mut b)?;
            *v = f32::from_le_bytes(b);
        }
        Ok(Tensor::from_vec(dims, data).map_err(CodecError::Tensor)?)
    }

    pub fn save(flow: &Tensor32, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        write_flow(flow, &mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor32> {
        let bytes = std::fs::read(path)?;
        read_flow(bytes.as_slice())
    }
}
