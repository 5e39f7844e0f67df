//! In-loop latent codec: space-to-depth transform, temporal context
//! extraction, conditional analysis/synthesis, quantization and entropy
//! coding.
//!
//! Frames enter as (1, 3, H, W) in [0,1] and become raw latents via
//! pixel-unshuffle (bijective). Conditioned on contexts extracted from the
//! previously reconstructed latent, the analysis stack produces a code plane
//! that is mean-removed, rounded and range-coded; the synthesis stack maps
//! the dequantized plane back to the reconstructed latent. The encoder
//! computes its copy of the reconstruction through the identical arithmetic
//! path the decoder uses, so P-frame chains are drift-free. Inference runs
//! at emulated FP16; training reuses the same graph definitions at native
//! precision.

use crate::config::ModelConfig;
use crate::entropy::{self, Bitstream, GaussianParams, SymbolPlane, SIGMA_MAX, SIGMA_MIN};
use crate::error::{CodecError, Result};
use crate::exec::{Eager, Executor};
use crate::layers::{init_conv, Conv};
use crate::precision::PrecisionMode;
use crate::rng::DetRng;
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor};
use crate::weights::WeightStore;
use crate::Tensor32;

/// Bitrate operating point, one of 16 discrete values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QualityIndex(u8);

pub const QUALITY_COUNT: usize = 16;
pub const LAMBDA_MIN: f64 = 16.0;
pub const LAMBDA_MAX: f64 = 384.0;

impl QualityIndex {
    pub fn new(q: u8) -> Result<Self> {
        if q as usize >= QUALITY_COUNT {
            return Err(CodecError::Config(format!("quality index {q} out of [0, 15]")));
        }
        Ok(QualityIndex(q))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Lagrange multiplier: geometric interpolation between the endpoints,
    /// strictly increasing, lambda(0) = 16, lambda(15) = 384.
    pub fn lambda(self) -> f64 {
        LAMBDA_MIN * (LAMBDA_MAX / LAMBDA_MIN).powf(self.0 as f64 / (QUALITY_COUNT - 1) as f64)
    }
}

/// Conditioning features extracted from the previous reconstructed latent.
/// Zero tensors for intra frames.
#[derive(Debug, Clone)]
pub struct TemporalContexts {
    /// Reconstruction-conditioning context.
    pub cm: Tensor32,
    /// Entropy-conditioning context.
    pub ce: Tensor32,
}

impl TemporalContexts {
    pub fn zeros(cfg: &ModelConfig, lat_h: usize, lat_w: usize) -> Self {
        let d = Dims::new(1, cfg.c_ctx, lat_h, lat_w);
        TemporalContexts { cm: Tensor::zeros(d), ce: Tensor::zeros(d) }
    }
}

/// Space-to-depth: frame -> raw latent, zero information loss.
pub fn to_latent(frame: &Tensor32, s: usize) -> Result<Tensor32> {
    Ok(crate::tensor::pixel_unshuffle(frame, s)?)
}

/// Inverse of [`to_latent`] for raw latents (diagnostics).
pub fn from_latent(latent: &Tensor32, s: usize) -> Result<Tensor32> {
    Ok(crate::tensor::pixel_shuffle(latent, s)?)
}

/// Compressor parameters bound into an executor.
pub struct CompressorVars<V: Copy> {
    ctx_m: [Conv<V>; 2],
    ctx_e: [Conv<V>; 2],
    analysis: [Conv<V>; 3],
    synthesis: [Conv<V>; 3],
    entropy: [Conv<V>; 2],
    q_enc: Vec<V>,
    q_dec: Vec<V>,
}

/// Insert freshly initialized compressor parameters.
///
/// The per-quality modulation pairs start at sqrt(lambda(q)/lambda(0)) and
/// its reciprocal, so higher quality indices code larger symbols (more bits)
/// before any training.
pub fn init_weights(ws: &mut WeightStore, cfg: &ModelConfig, rng: &mut DetRng) {
    let (raw, lat, ctx, hid) = (cfg.c_raw(), cfg.c_lat, cfg.c_ctx, cfg.hidden);
    init_conv(ws, "lc.ctx_m.c0", ctx, lat, 3, rng);
    init_conv(ws, "lc.ctx_m.c1", ctx, ctx, 3, rng);
    init_conv(ws, "lc.ctx_e.c0", ctx, lat, 3, rng);
    init_conv(ws, "lc.ctx_e.c1", ctx, ctx, 3, rng);
    init_conv(ws, "lc.analysis.c0", hid, raw + ctx, 3, rng);
    init_conv(ws, "lc.analysis.c1", hid, hid, 3, rng);
    init_conv(ws, "lc.analysis.c2", lat, hid, 3, rng);
    init_conv(ws, "lc.synthesis.c0", hid, lat + ctx, 3, rng);
    init_conv(ws, "lc.synthesis.c1", hid, hid, 3, rng);
    init_conv(ws, "lc.synthesis.c2", lat, hid, 3, rng);
    init_conv(ws, "lc.entropy.c0", hid, ctx, 3, rng);
    init_conv(ws, "lc.entropy.c1", 2 * lat, hid, 3, rng);
    for q in 0..QUALITY_COUNT {
        let lam = QualityIndex(q as u8).lambda();
        let gain = (lam / LAMBDA_MIN).sqrt();
        ws.insert(
            format!("lc.q_enc.{q:02}"),
            Tensor::filled(Dims::new(1, lat, 1, 1), gain as f32),
        );
        ws.insert(
            format!("lc.q_dec.{q:02}"),
            Tensor::filled(Dims::new(1, lat, 1, 1), (1.0 / gain) as f32),
        );
    }
}

pub fn bind<T: Scalar, E: Executor<T>>(
    ex: &mut E,
    ws: &WeightStore,
    _cfg: &ModelConfig,
) -> Result<CompressorVars<E::V>> {
    let c = |ex: &mut E, n: &str| Conv::bind(ex, ws, n);
    let vars = CompressorVars {
        ctx_m: [c(ex, "lc.ctx_m.c0")?, c(ex, "lc.ctx_m.c1")?],
        ctx_e: [c(ex, "lc.ctx_e.c0")?, c(ex, "lc.ctx_e.c1")?],
        analysis: [c(ex, "lc.analysis.c0")?, c(ex, "lc.analysis.c1")?, c(ex, "lc.analysis.c2")?],
        synthesis: [
            c(ex, "lc.synthesis.c0")?,
            c(ex, "lc.synthesis.c1")?,
            c(ex, "lc.synthesis.c2")?,
        ],
        entropy: [c(ex, "lc.entropy.c0")?, c(ex, "lc.entropy.c1")?],
        q_enc: (0..QUALITY_COUNT)
            .map(|q| {
                let n = format!("lc.q_enc.{q:02}");
                Ok(ex.param(&n, ws.get(&n)?.cast::<T>()))
            })
            .collect::<Result<_>>()?,
        q_dec: (0..QUALITY_COUNT)
            .map(|q| {
                let n = format!("lc.q_dec.{q:02}");
                Ok(ex.param(&n, ws.get(&n)?.cast::<T>()))
            })
            .collect::<Result<_>>()?,
    };
    Ok(vars)
}

fn stack3<T: Scalar, E: Executor<T>>(
    ex: &mut E,
    convs: &[Conv<E::V>; 3],
    x: E::V,
) -> Result<E::V> {
    let h = convs[0].apply(ex, x, 1, 1)?;
    let h = ex.silu(h);
    let h = convs[1].apply(ex, h, 1, 1)?;
    let h = ex.silu(h);
    convs[2].apply(ex, h, 1, 1)
}

/// Both temporal contexts from the previous reconstructed latent.
pub fn contexts<T: Scalar, E: Executor<T>>(
    ex: &mut E,
    vars: &CompressorVars<E::V>,
    prev: E::V,
) -> Result<(E::V, E::V)> {
    let run = |convs: &[Conv<E::V>; 2], ex: &mut E| -> Result<E::V> {
        let h = convs[0].apply(ex, prev, 1, 1)?;
        let h = ex.silu(h);
        convs[1].apply(ex, h, 1, 1)
    };
    let cm = run(&vars.ctx_m, ex)?;
    let ce = run(&vars.ctx_e, ex)?;
    Ok((cm, ce))
}

/// Entropy parameters (mean, scale) from the entropy context.
pub fn entropy_params<T: Scalar, E: Executor<T>>(
    ex: &mut E,
    vars: &CompressorVars<E::V>,
    ce: E::V,
    c_lat: usize,
) -> Result<(E::V, E::V)> {
    let h = vars.entropy[0].apply(ex, ce, 1, 1)?;
    let h = ex.silu(h);
    let h = vars.entropy[1].apply(ex, h, 1, 1)?;
    let mu = ex.slice_channels(h, 0, c_lat)?;
    let raw = ex.slice_channels(h, c_lat, 2 * c_lat)?;
    let clamped = ex.clamp(raw, SIGMA_MIN.ln(), SIGMA_MAX.ln());
    let sigma = ex.exp(clamped);
    Ok((mu, sigma))
}

/// Analysis transform including the quality-indexed channel gain.
pub fn analyze<T: Scalar, E: Executor<T>>(
    ex: &mut E,
    vars: &CompressorVars<E::V>,
    raw_latent: E::V,
    ce: E::V,
    q: QualityIndex,
) -> Result<E::V> {
    let joint = ex.concat_channels(raw_latent, ce)?;
    let y = stack3(ex, &vars.analysis, joint)?;
    Ok(ex.scale_channels(y, vars.q_enc[q.get() as usize])?)
}

/// Synthesis transform from the dequantized plane, including the inverse
/// channel gain.
pub fn synthesize<T: Scalar, E: Executor<T>>(
    ex: &mut E,
    vars: &CompressorVars<E::V>,
    y_hat: E::V,
    ce: E::V,
    q: QualityIndex,
) -> Result<E::V> {
    let demod = ex.scale_channels(y_hat, vars.q_dec[q.get() as usize])?;
    let joint = ex.concat_channels(demod, ce)?;
    stack3(ex, &vars.synthesis, joint)
}

/// Inference-precision context extraction (emulated FP16).
pub fn extract_contexts(
    ws: &WeightStore,
    cfg: &ModelConfig,
    prev: &Tensor32,
) -> Result<TemporalContexts> {
    let mut ex = Eager::<f32>::new(PrecisionMode::Fp16Emu);
    let vars = bind(&mut ex, ws, cfg)?;
    let prev_v = ex.constant(prev.clone());
    let (cm, ce) = contexts(&mut ex, &vars, prev_v)?;
    Ok(TemporalContexts { cm: ex.take(cm), ce: ex.take(ce) })
}

/// Encode one raw latent; returns the bitstream and the reconstructed latent
/// computed through the decoder's exact arithmetic path.
pub fn encode_latent(
    ws: &WeightStore,
    cfg: &ModelConfig,
    raw_latent: &Tensor32,
    ctx: &TemporalContexts,
    q: QualityIndex,
) -> Result<(Bitstream, Tensor32)> {
    let mut ex = Eager::<f32>::new(PrecisionMode::Fp16Emu);
    let vars = bind(&mut ex, ws, cfg)?;
    let lt = ex.constant(raw_latent.clone());
    let ce = ex.constant(ctx.ce.clone());

    let y = analyze(&mut ex, &vars, lt, ce, q)?;
    let (mu, sigma) = entropy_params(&mut ex, &vars, ce, cfg.c_lat)?;
    let centered = ex.sub(y, mu)?;
    // Clamp keeps every symbol inside the escape representation.
    let centered = ex.clamp(centered, -30000.0, 30000.0);
    let rounded = ex.round_ste(centered);

    let symbols = plane_from_tensor(ex.tensor(rounded))?;
    let params = GaussianParams::zero_mean(ex.take(sigma));
    let bits = entropy::encode(&symbols, &params)?;

    let y_hat = ex.add(rounded, mu)?;
    let lbar = synthesize(&mut ex, &vars, y_hat, ce, q)?;
    Ok((bits, ex.take(lbar)))
}

/// Decode one latent; exact mirror of the encoder-side reconstruction.
pub fn decode_latent(
    ws: &WeightStore,
    cfg: &ModelConfig,
    bits: &Bitstream,
    ctx: &TemporalContexts,
    q: QualityIndex,
) -> Result<Tensor32> {
    let mut ex = Eager::<f32>::new(PrecisionMode::Fp16Emu);
    let vars = bind(&mut ex, ws, cfg)?;
    let ce = ex.constant(ctx.ce.clone());

    let (mu, sigma) = entropy_params(&mut ex, &vars, ce, cfg.c_lat)?;
    let params = GaussianParams::zero_mean(ex.take(sigma));
    let symbols = entropy::decode(bits, &params)?;
    let rounded = ex.constant(tensor_from_plane(&symbols));

    let y_hat = ex.add(rounded, mu)?;
    let lbar = synthesize(&mut ex, &vars, y_hat, ce, q)?;
    Ok(ex.take(lbar))
}

fn plane_from_tensor(t: &Tensor32) -> Result<SymbolPlane> {
    let symbols: Vec<i32> = t.data().iter().map(|&v| v as i32).collect();
    Ok(SymbolPlane::new(t.dims(), symbols)?)
}

fn tensor_from_plane(p: &SymbolPlane) -> Tensor32 {
    let mut t = Tensor::zeros(p.dims());
    for (v, &s) in t.data_mut().iter_mut().zip(p.symbols()) {
        *v = s as f32;
    }
    t
}
