//! Out-of-loop frame reconstructor: a small U-Net whose residual blocks
//! exchange a channel slice between consecutive frames, plus a pixel-shuffle
//! decoder head mapping the enhanced latent to the displayed frame.
//!
//! The temporal exchange is injected through a [`Shifter`], so the same
//! forward definition runs sequentially (per-frame buffer), batched over
//! consecutive frames (intra-batch exchange plus inter-batch carry), or on
//! the training tape where the exchange stays differentiable across the
//! frame chain. Batched and sequential execution are bit-identical.
//! Inference runs at emulated BF16.

use std::collections::BTreeMap;

use crate::config::ModelConfig;
use crate::error::{Result, TensorError, TensorResult};
use crate::exec::{Eager, Executor};
use crate::layers::{init_conv, Conv};
use crate::precision::PrecisionMode;
use crate::rng::DetRng;
use crate::scalar::Scalar;
use crate::shift::{batch_shift, online_shift, BatchCarry, ShiftState};
use crate::tensor::{Dims, ResampleDir, Tensor};
use crate::weights::WeightStore;
use crate::Tensor32;

/// Supplies the temporal exchange at the entry of each residual branch.
pub trait Shifter<T: Scalar, E: Executor<T>> {
    fn apply(&mut self, ex: &mut E, layer: u32, x: E::V) -> TensorResult<E::V>;
}

/// No exchange at all; features pass through unchanged. Used to assert the
/// mechanism is parameter-free and for single-image paths.
pub struct NoShift;

impl<T: Scalar, E: Executor<T>> Shifter<T, E> for NoShift {
    fn apply(&mut self, _ex: &mut E, _layer: u32, x: E::V) -> TensorResult<E::V> {
        Ok(x)
    }
}

/// Sequential buffer-backed exchange over an eager executor.
pub struct SeqShift<'a> {
    pub state: &'a mut ShiftState<f32>,
}

impl<E: Executor<f32>> Shifter<f32, E> for SeqShift<'_> {
    fn apply(&mut self, ex: &mut E, layer: u32, x: E::V) -> TensorResult<E::V> {
        let shifted = online_shift(ex.tensor(x), self.state, layer)?;
        Ok(ex.constant(shifted))
    }
}

/// Batched exchange with inter-batch carry over an eager executor.
pub struct BatchShift<'a> {
    pub carry: &'a mut BatchCarry<f32>,
}

impl<E: Executor<f32>> Shifter<f32, E> for BatchShift<'_> {
    fn apply(&mut self, ex: &mut E, layer: u32, x: E::V) -> TensorResult<E::V> {
        let shifted = batch_shift(ex.tensor(x), self.carry, layer)?;
        Ok(ex.constant(shifted))
    }
}

/// Graph-level exchange: cached slices are executor values, so in cascaded
/// training the gradient flows through the exchange into earlier frames.
pub struct GraphShift<V> {
    p: usize,
    slots: BTreeMap<u32, V>,
}

impl<V> GraphShift<V> {
    pub fn new(p: usize) -> Self {
        GraphShift { p, slots: BTreeMap::new() }
    }

    pub fn reset(&mut self) {
        self.slots.clear();
    }

    /// Rewrite every cached slice, e.g. to detach them from the graph when a
    /// stage trains without cross-frame backpropagation.
    pub fn detach_all(&mut self, mut f: impl FnMut(V) -> V)
    where
        V: Copy,
    {
        for v in self.slots.values_mut() {
            *v = f(*v);
        }
    }
}

impl<T: Scalar, E: Executor<T>> Shifter<T, E> for GraphShift<E::V> {
    fn apply(&mut self, ex: &mut E, layer: u32, x: E::V) -> TensorResult<E::V> {
        let d = ex.dims(x);
        if d.c % self.p != 0 {
            return Err(TensorError::Divisibility {
                context: "temporal shift channels",
                value: d.c,
                divisor: self.p,
            });
        }
        let seg = d.c / self.p;
        let incoming = match self.slots.get(&layer) {
            Some(v) => *v,
            None => ex.constant(Tensor::zeros(Dims::new(d.n, seg, d.h, d.w))),
        };
        let head = ex.slice_channels(x, 0, seg)?;
        let y = if seg == d.c {
            incoming
        } else {
            let rest = ex.slice_channels(x, seg, d.c)?;
            ex.concat_channels(incoming, rest)?
        };
        self.slots.insert(layer, head);
        Ok(y)
    }
}

/// Reconstructor parameters bound into an executor.
pub struct ReconstructorVars<V: Copy> {
    in_proj: Conv<V>,
    d0: Vec<[Conv<V>; 2]>,
    down: Conv<V>,
    d1: Vec<[Conv<V>; 2]>,
    u1: Vec<[Conv<V>; 2]>,
    up: Conv<V>,
    fuse: Conv<V>,
    u0: Vec<[Conv<V>; 2]>,
    out_proj: Conv<V>,
    head: [Conv<V>; 3],
}

impl<V: Copy> ReconstructorVars<V> {
    /// Total number of shift-carrying residual blocks.
    pub fn resblock_count(&self) -> usize {
        self.d0.len() + self.d1.len() + self.u1.len() + self.u0.len()
    }
}

/// Layer ids of every residual block, in forward order.
pub fn shift_layer_ids(cfg: &ModelConfig) -> Vec<u32> {
    (0..4 * cfg.unet.blocks_per_level as u32).collect()
}

pub fn init_weights(ws: &mut WeightStore, cfg: &ModelConfig, rng: &mut DetRng) {
    let base = cfg.unet.base;
    let wide = base * 2;
    let head = cfg.unet.head;
    init_conv(ws, "fr.in_proj", base, cfg.c_lat + cfg.c_ctx, 3, rng);
    for b in 0..cfg.unet.blocks_per_level {
        init_conv(ws, &format!("fr.d0.b{b}.c0"), base, base, 3, rng);
        init_conv(ws, &format!("fr.d0.b{b}.c1"), base, base, 3, rng);
        init_conv(ws, &format!("fr.d1.b{b}.c0"), wide, wide, 3, rng);
        init_conv(ws, &format!("fr.d1.b{b}.c1"), wide, wide, 3, rng);
        init_conv(ws, &format!("fr.u1.b{b}.c0"), wide, wide, 3, rng);
        init_conv(ws, &format!("fr.u1.b{b}.c1"), wide, wide, 3, rng);
        init_conv(ws, &format!("fr.u0.b{b}.c0"), base, base, 3, rng);
        init_conv(ws, &format!("fr.u0.b{b}.c1"), base, base, 3, rng);
    }
    init_conv(ws, "fr.down", wide, base, 3, rng);
    init_conv(ws, "fr.up", base, wide, 3, rng);
    init_conv(ws, "fr.fuse", base, base * 2, 3, rng);
    init_conv(ws, "fr.out_proj", cfg.c_lat, base, 3, rng);
    init_conv(ws, "fr.head.c0", 4 * head, cfg.c_lat, 3, rng);
    init_conv(ws, "fr.head.c1", 4 * (head / 2), head, 3, rng);
    init_conv(ws, "fr.head.c2", 12, head / 2, 3, rng);
    // start the rendered frames mid-gray so the output clamp does not pin
    // half the pixels at zero before any training
    ws.insert("fr.head.c2.b".to_string(), Tensor::filled(Dims::new(1, 12, 1, 1), 0.45));
}

pub fn bind<T: Scalar, E: Executor<T>>(
    ex: &mut E,
    ws: &WeightStore,
    cfg: &ModelConfig,
) -> Result<ReconstructorVars<E::V>> {
    let blocks = |ex: &mut E, level: &str| -> Result<Vec<[Conv<E::V>; 2]>> {
        (0..cfg.unet.blocks_per_level)
            .map(|b| {
                Ok([
                    Conv::bind(ex, ws, &format!("fr.{level}.b{b}.c0"))?,
                    Conv::bind(ex, ws, &format!("fr.{level}.b{b}.c1"))?,
                ])
            })
            .collect()
    };
    Ok(ReconstructorVars {
        in_proj: Conv::bind(ex, ws, "fr.in_proj")?,
        d0: blocks(ex, "d0")?,
        down: Conv::bind(ex, ws, "fr.down")?,
        d1: blocks(ex, "d1")?,
        u1: blocks(ex, "u1")?,
        up: Conv::bind(ex, ws, "fr.up")?,
        fuse: Conv::bind(ex, ws, "fr.fuse")?,
        u0: blocks(ex, "u0")?,
        out_proj: Conv::bind(ex, ws, "fr.out_proj")?,
        head: [
            Conv::bind(ex, ws, "fr.head.c0")?,
            Conv::bind(ex, ws, "fr.head.c1")?,
            Conv::bind(ex, ws, "fr.head.c2")?,
        ],
    })
}

/// Residual block: the exchange sits at the entry of the residual branch.
fn resblock<T: Scalar, E: Executor<T>, S: Shifter<T, E>>(
    ex: &mut E,
    convs: &[Conv<E::V>; 2],
    shifter: &mut S,
    layer: u32,
    x: E::V,
) -> Result<E::V> {
    let h = shifter.apply(ex, layer, x)?;
    let h = convs[0].apply(ex, h, 1, 1)?;
    let h = ex.silu(h);
    let h = convs[1].apply(ex, h, 1, 1)?;
    Ok(ex.add(x, h)?)
}

/// One U-Net pass over concat(reconstructed latent, reconstruction context).
/// No noise, text or time conditioning exists; the pass is deterministic.
pub fn enhance<T: Scalar, E: Executor<T>, S: Shifter<T, E>>(
    ex: &mut E,
    vars: &ReconstructorVars<E::V>,
    lbar: E::V,
    cm: E::V,
    shifter: &mut S,
) -> Result<E::V> {
    let mut layer = 0u32;
    let joint = ex.concat_channels(lbar, cm)?;
    let mut x0 = vars.in_proj.apply(ex, joint, 1, 1)?;
    for b in &vars.d0 {
        x0 = resblock(ex, b, shifter, layer, x0)?;
        layer += 1;
    }
    let pooled = ex.resample2x(x0, ResampleDir::Down)?;
    let mut x1 = vars.down.apply(ex, pooled, 1, 1)?;
    for b in &vars.d1 {
        x1 = resblock(ex, b, shifter, layer, x1)?;
        layer += 1;
    }
    for b in &vars.u1 {
        x1 = resblock(ex, b, shifter, layer, x1)?;
        layer += 1;
    }
    let upped = ex.resample2x(x1, ResampleDir::Up)?;
    let upped = vars.up.apply(ex, upped, 1, 1)?;
    let skip = ex.concat_channels(upped, x0)?;
    let mut u = vars.fuse.apply(ex, skip, 1, 1)?;
    for b in &vars.u0 {
        u = resblock(ex, b, shifter, layer, u)?;
        layer += 1;
    }
    vars.out_proj.apply(ex, u, 1, 1)
}

/// Decoder head: three conv + pixel-shuffle x2 stages back to RGB, clamped
/// to [0, 1].
pub fn reconstruct<T: Scalar, E: Executor<T>>(
    ex: &mut E,
    vars: &ReconstructorVars<E::V>,
    lhat: E::V,
) -> Result<E::V> {
    let h = vars.head[0].apply(ex, lhat, 1, 1)?;
    let h = ex.silu(h);
    let h = ex.pixel_shuffle(h, 2)?;
    let h = vars.head[1].apply(ex, h, 1, 1)?;
    let h = ex.silu(h);
    let h = ex.pixel_shuffle(h, 2)?;
    let h = vars.head[2].apply(ex, h, 1, 1)?;
    let h = ex.pixel_shuffle(h, 2)?;
    Ok(ex.clamp01(h))
}

/// Sequential inference: one frame through enhance + reconstruct at emulated
/// BF16, advancing the per-layer shift buffers.
pub fn reconstruct_frame(
    ws: &WeightStore,
    cfg: &ModelConfig,
    lbar: &Tensor32,
    cm: &Tensor32,
    state: &mut ShiftState<f32>,
) -> Result<Tensor32> {
    let mut ex = Eager::<f32>::new(PrecisionMode::Bf16Emu);
    let vars = bind(&mut ex, ws, cfg)?;
    let lv = ex.constant(lbar.clone());
    let cv = ex.constant(cm.clone());
    let mut shifter = SeqShift { state };
    let lhat = enhance(&mut ex, &vars, lv, cv, &mut shifter)?;
    let frame = reconstruct(&mut ex, &vars, lhat)?;
    Ok(ex.take(frame))
}

/// Batched inference over N temporally consecutive frames; bit-identical to
/// N sequential calls. Returns frames stacked along the batch dimension.
pub fn reconstruct_batch(
    ws: &WeightStore,
    cfg: &ModelConfig,
    lbar_batch: &Tensor32,
    cm_batch: &Tensor32,
    carry: &mut BatchCarry<f32>,
) -> Result<Tensor32> {
    let mut ex = Eager::<f32>::new(PrecisionMode::Bf16Emu);
    let vars = bind(&mut ex, ws, cfg)?;
    let lv = ex.constant(lbar_batch.clone());
    let cv = ex.constant(cm_batch.clone());
    let mut shifter = BatchShift { carry };
    let lhat = enhance(&mut ex, &vars, lv, cv, &mut shifter)?;
    let frames = reconstruct(&mut ex, &vars, lhat)?;
    Ok(ex.take(frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::uniform_tensor;
    use crate::shift::ShiftConfig;

    fn setup(seed: u64, p: usize) -> (WeightStore, ModelConfig) {
        let cfg = ModelConfig::tiny().with_shift(p);
        let mut ws = WeightStore::new();
        init_weights(&mut ws, &cfg, &mut DetRng::seeded(seed));
        (ws, cfg)
    }

    fn fresh_state(cfg: &ModelConfig) -> ShiftState<f32> {
        ShiftState::new(cfg.shift, shift_layer_ids(cfg))
    }

    fn fresh_carry(cfg: &ModelConfig) -> BatchCarry<f32> {
        BatchCarry::new(cfg.shift, shift_layer_ids(cfg))
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let (ws, cfg) = setup(1, 8);
        let mut zero = WeightStore::new();
        for (name, t) in ws.iter() {
            zero.insert(name.clone(), Tensor::zeros(t.dims()));
        }
        let lbar = Tensor::filled(Dims::new(1, cfg.c_lat, 8, 8), 0.37f32);
        let cm = Tensor::filled(Dims::new(1, cfg.c_ctx, 8, 8), -0.5f32);
        let mut state = fresh_state(&cfg);
        let mut ex = Eager::<f32>::new(PrecisionMode::Fp32);
        let vars = bind(&mut ex, &zero, &cfg).unwrap();
        let (lv, cv) = (ex.constant(lbar), ex.constant(cm));
        let mut shifter = SeqShift { state: &mut state };
        let lhat = enhance(&mut ex, &vars, lv, cv, &mut shifter).unwrap();
        assert!(ex.tensor(lhat).data().iter().all(|&v| v == 0.0));
        let frame = reconstruct(&mut ex, &vars, lhat).unwrap();
        assert!(ex.tensor(frame).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shapes_and_range() {
        let (ws, cfg) = setup(2, 8);
        let mut r = DetRng::seeded(5);
        let lbar = uniform_tensor::<f32>(Dims::new(1, cfg.c_lat, 8, 8), -2.0, 2.0, &mut r);
        let cm = uniform_tensor::<f32>(Dims::new(1, cfg.c_ctx, 8, 8), -2.0, 2.0, &mut r);
        let mut state = fresh_state(&cfg);
        let frame = reconstruct_frame(&ws, &cfg, &lbar, &cm, &mut state).unwrap();
        assert_eq!(frame.dims(), Dims::new(1, 3, 64, 64));
        assert!(frame.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn weights_invariant_under_shift_toggle() {
        // The temporal mechanism owns no parameters: the same weight set
        // drives the pass with or without any exchange.
        let (ws, cfg) = setup(3, 8);
        let mut r = DetRng::seeded(6);
        let lbar = uniform_tensor::<f32>(Dims::new(1, cfg.c_lat, 8, 8), -1.0, 1.0, &mut r);
        let cm = uniform_tensor::<f32>(Dims::new(1, cfg.c_ctx, 8, 8), -1.0, 1.0, &mut r);
        let mut ex = Eager::<f32>::new(PrecisionMode::Fp32);
        let vars = bind(&mut ex, &ws, &cfg).unwrap();
        assert_eq!(vars.resblock_count(), 4 * cfg.unet.blocks_per_level);
        let (lv, cv) = (ex.constant(lbar), ex.constant(cm));
        let out = enhance(&mut ex, &vars, lv, cv, &mut NoShift).unwrap();
        assert_eq!(ex.tensor(out).dims(), Dims::new(1, cfg.c_lat, 8, 8));
    }

    #[test]
    fn batch_matches_sequential_bit_exactly() {
        let (ws, cfg) = setup(7, 4);
        let mut r = DetRng::seeded(8);
        let frames = 8usize;
        let lbars: Vec<Tensor32> = (0..frames)
            .map(|_| uniform_tensor(Dims::new(1, cfg.c_lat, 8, 8), -1.5, 1.5, &mut r))
            .collect();
        let cms: Vec<Tensor32> = (0..frames)
            .map(|_| uniform_tensor(Dims::new(1, cfg.c_ctx, 8, 8), -1.5, 1.5, &mut r))
            .collect();

        let mut state = fresh_state(&cfg);
        let seq: Vec<Tensor32> = lbars
            .iter()
            .zip(&cms)
            .map(|(l, c)| reconstruct_frame(&ws, &cfg, l, c, &mut state).unwrap())
            .collect();

        let mut carry = fresh_carry(&cfg);
        let mut batched = Vec::new();
        for chunk in lbars.chunks(4).zip(cms.chunks(4)) {
            let lb = Tensor::stack(chunk.0).unwrap();
            let cb = Tensor::stack(chunk.1).unwrap();
            let out = reconstruct_batch(&ws, &cfg, &lb, &cb, &mut carry).unwrap();
            for i in 0..chunk.0.len() {
                batched.push(out.sample(i));
            }
        }
        assert_eq!(seq, batched);

        // two batches of 2 equal one batch of 4 given the same inputs
        let mut carry_a = fresh_carry(&cfg);
        let mut a = Vec::new();
        for chunk in lbars[..4].chunks(2).zip(cms[..4].chunks(2)) {
            let out = reconstruct_batch(
                &ws,
                &cfg,
                &Tensor::stack(chunk.0).unwrap(),
                &Tensor::stack(chunk.1).unwrap(),
                &mut carry_a,
            )
            .unwrap();
            for i in 0..chunk.0.len() {
                a.push(out.sample(i));
            }
        }
        assert_eq!(&a[..], &batched[..4]);
    }

    #[test]
    fn single_sample_batch_equals_sequential() {
        let (ws, cfg) = setup(9, 8);
        let mut r = DetRng::seeded(10);
        let lbar = uniform_tensor::<f32>(Dims::new(1, cfg.c_lat, 8, 8), -1.0, 1.0, &mut r);
        let cm = uniform_tensor::<f32>(Dims::new(1, cfg.c_ctx, 8, 8), -1.0, 1.0, &mut r);
        let mut state = fresh_state(&cfg);
        let mut carry = fresh_carry(&cfg);
        let a = reconstruct_frame(&ws, &cfg, &lbar, &cm, &mut state).unwrap();
        let b = reconstruct_batch(&ws, &cfg, &lbar, &cm, &mut carry).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn graph_shift_matches_seq_shift() {
        // The differentiable exchange used in training computes the same
        // forward values as the buffered inference exchange.
        let (ws, cfg) = setup(11, 4);
        let mut r = DetRng::seeded(12);
        let lbars: Vec<Tensor32> = (0..3)
            .map(|_| uniform_tensor(Dims::new(1, cfg.c_lat, 8, 8), -1.0, 1.0, &mut r))
            .collect();
        let cms: Vec<Tensor32> = (0..3)
            .map(|_| uniform_tensor(Dims::new(1, cfg.c_ctx, 8, 8), -1.0, 1.0, &mut r))
            .collect();

        let mut ex = Eager::<f32>::new(PrecisionMode::Fp32);
        let vars = bind(&mut ex, &ws, &cfg).unwrap();
        let mut graph_shift = GraphShift::new(cfg.shift.p);
        let mut state = fresh_state(&cfg);

        for (l, c) in lbars.iter().zip(&cms) {
            let lv = ex.constant(l.clone());
            let cv = ex.constant(c.clone());
            let g = enhance(&mut ex, &vars, lv, cv, &mut graph_shift).unwrap();

            let mut ex2 = Eager::<f32>::new(PrecisionMode::Fp32);
            let vars2 = bind(&mut ex2, &ws, &cfg).unwrap();
            let lv2 = ex2.constant(l.clone());
            let cv2 = ex2.constant(c.clone());
            let mut seq = SeqShift { state: &mut state };
            let s = enhance(&mut ex2, &vars2, lv2, cv2, &mut seq).unwrap();
            assert_eq!(ex.tensor(g).data(), ex2.tensor(s).data());
        }
    }

    #[test]
    fn shift_config_divisibility_enforced() {
        let cfg = ModelConfig::tiny(); // base 8
        assert!(ShiftConfig::new(3).unwrap().segment(cfg.unet.base).is_err());
    }
}
