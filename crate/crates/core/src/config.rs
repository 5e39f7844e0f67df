//! Model configuration shared by the compressor and the reconstructor.

use crate::error::{CodecError, Result};
use crate::shift::ShiftConfig;
use crate::weights::WeightStore;

/// U-Net and decoder-head geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    /// Channels at the full-resolution level; level 1 uses twice as many.
    pub base: usize,
    /// Residual blocks per level per path (down and up).
    pub blocks_per_level: usize,
    /// Channels after the first head conv; halves per upsampling stage.
    pub head: usize,
}

/// Full codec geometry. Every channel width at a shifted layer must be
/// divisible by the shift fraction P.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Space-to-depth factor between frames and latents.
    pub s: usize,
    /// Channels of the reconstructed/enhanced latents and of the coded plane.
    pub c_lat: usize,
    /// Channels of each temporal context.
    pub c_ctx: usize,
    /// Hidden width of the analysis/synthesis stacks.
    pub hidden: usize,
    pub unet: UNetConfig,
    pub shift: ShiftConfig,
}

impl ModelConfig {
    /// Raw latent channels produced by the space-to-depth transform.
    pub fn c_raw(&self) -> usize {
        3 * self.s * self.s
    }

    /// Desk-scale defaults: every mechanism exercised, sub-second inference.
    pub fn desk() -> Self {
        ModelConfig {
            s: 8,
            c_lat: 32,
            c_ctx: 16,
            hidden: 48,
            unet: UNetConfig { base: 32, blocks_per_level: 2, head: 32 },
            shift: ShiftConfig { p: 8 },
        }
    }

    /// Full-scale latent width (256); geometry otherwise unchanged.
    pub fn full() -> Self {
        ModelConfig { c_lat: 256, ..Self::desk() }
    }

    /// Minimal config for fast equivalence tests.
    pub fn tiny() -> Self {
        ModelConfig {
            s: 8,
            c_lat: 16,
            c_ctx: 8,
            hidden: 16,
            unet: UNetConfig { base: 8, blocks_per_level: 1, head: 8 },
            shift: ShiftConfig { p: 8 },
        }
    }

    pub fn with_shift(self, p: usize) -> Self {
        ModelConfig { shift: ShiftConfig { p }, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 || self.c_lat == 0 || self.c_ctx == 0 || self.unet.base == 0 {
            return Err(CodecError::Config("zero-sized dimension".into()));
        }
        let p = self.shift.p;
        for (what, c) in [("level0", self.unet.base), ("level1", self.unet.base * 2)] {
            if c % p != 0 {
                return Err(CodecError::Config(format!(
                    "{what} width {c} not divisible by shift fraction P={p}"
                )));
            }
        }
        if self.unet.head % 4 != 0 || (self.unet.head / 2) % 4 != 0 {
            return Err(CodecError::Config("head widths must support pixel-shuffle x2".into()));
        }
        Ok(())
    }

    /// Recover the geometry from weight-tensor shapes, for loading models
    /// from a bare weights file.
    pub fn infer_from(ws: &WeightStore) -> Result<Self> {
        let ctx_in = ws.get("lc.ctx_m.c0.w")?.dims();
        let c_ctx = ws.get("lc.ctx_m.c1.w")?.dims().n;
        let analysis0 = ws.get("lc.analysis.c0.w")?.dims();
        let c_lat = ws.get("lc.analysis.c2.w")?.dims().n;
        let in_proj = ws.get("fr.in_proj.w")?.dims();
        let head0 = ws.get("fr.head.c0.w")?.dims();
        if ctx_in.c != c_lat {
            return Err(CodecError::Weights("context input width mismatch".into()));
        }
        if analysis0.c <= c_ctx {
            return Err(CodecError::Weights("analysis input width mismatch".into()));
        }
        let c_raw = analysis0.c - c_ctx;
        if c_raw % 3 != 0 {
            return Err(CodecError::Weights("analysis input not a raw latent width".into()));
        }
        let s2 = c_raw / 3;
        let s = (1..=64).find(|v| v * v == s2).ok_or_else(|| {
            CodecError::Weights("raw latent width is not 3*s^2 for integer s".into())
        })?;
        if in_proj.c != c_lat + c_ctx {
            return Err(CodecError::Weights("reconstructor input width mismatch".into()));
        }
        let base = in_proj.n;
        let blocks_per_level = (0..)
            .take_while(|i| ws.contains(&format!("fr.d0.b{i}.c0.w")))
            .count();
        if blocks_per_level == 0 {
            return Err(CodecError::Weights("no residual blocks found".into()));
        }
        let cfg = ModelConfig {
            s,
            c_lat,
            c_ctx,
            hidden: analysis0.n,
            unet: UNetConfig { base, blocks_per_level, head: head0.n / 4 },
            shift: ShiftConfig::default(),
        };
        Ok(cfg)
    }
}
