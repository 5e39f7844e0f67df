//! Temporal shift: parameter-free channel-slice exchange between consecutive
//! frames inside residual blocks.
//!
//! Each registered layer partitions its features 1:(P-1) along the channel
//! axis. The first segment is replaced by the previous frame's cached
//! segment and the current segment is cached for the next frame. The batch
//! variant performs the same exchange inside a batch of consecutive frames
//! (sample i receives sample i-1's segment) with a carry slice crossing
//! batch boundaries, and composes bit-identically with the per-frame form.

use std::collections::BTreeMap;

use crate::error::{TensorError, TensorResult};
use crate::scalar::Scalar;
use crate::tensor::{concat_channels, slice_channels, Tensor};

/// Shift fraction denominator: 1/P of the channels move forward one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftConfig {
    pub p: usize,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig { p: 8 }
    }
}

impl ShiftConfig {
    pub fn new(p: usize) -> TensorResult<Self> {
        if p == 0 {
            return Err(TensorError::InvalidArgument("shift fraction P must be >= 1"));
        }
        Ok(ShiftConfig { p })
    }

    pub fn segment(&self, channels: usize) -> TensorResult<usize> {
        if channels % self.p != 0 {
            return Err(TensorError::Divisibility {
                context: "temporal shift channels",
                value: channels,
                divisor: self.p,
            });
        }
        Ok(channels / self.p)
    }
}

/// Per-layer cached slices for sequential (frame-by-frame) operation.
///
/// `None` means "zeros": the state at a sequence start, before any frame has
/// populated the buffer.
#[derive(Debug, Clone)]
pub struct ShiftState<T: Scalar> {
    config: ShiftConfig,
    slices: BTreeMap<u32, Option<Tensor<T>>>,
}

impl<T: Scalar> ShiftState<T> {
    pub fn new(config: ShiftConfig, layer_ids: impl IntoIterator<Item = u32>) -> Self {
        ShiftState { config, slices: layer_ids.into_iter().map(|id| (id, None)).collect() }
    }

    pub fn config(&self) -> ShiftConfig {
        self.config
    }

    /// Sequence restart: drop every cached slice back to zeros.
    pub fn reset(&mut self) {
        for v in self.slices.values_mut() {
            *v = None;
        }
    }
}

/// Carry slice between consecutive batches, one entry per layer.
#[derive(Debug, Clone)]
pub struct BatchCarry<T: Scalar> {
    config: ShiftConfig,
    slices: BTreeMap<u32, Option<Tensor<T>>>,
}

impl<T: Scalar> BatchCarry<T> {
    pub fn new(config: ShiftConfig, layer_ids: impl IntoIterator<Item = u32>) -> Self {
        BatchCarry { config, slices: layer_ids.into_iter().map(|id| (id, None)).collect() }
    }

    pub fn config(&self) -> ShiftConfig {
        self.config
    }

    pub fn reset(&mut self) {
        for v in self.slices.values_mut() {
            *v = None;
        }
    }
}

fn cached_or_zeros<T: Scalar>(slot: &Option<Tensor<T>>, like: &Tensor<T>, seg: usize) -> TensorResult<Tensor<T>> {
    match slot {
        Some(t) => {
            let mut want = like.dims();
            want.c = seg;
            if t.dims() != want {
                return Err(TensorError::ShapeMismatch {
                    context: "shift cached slice",
                    left: t.dims().as_array(),
                    right: want.as_array(),
                });
            }
            Ok(t.clone())
        }
        None => {
            let mut d = like.dims();
            d.c = seg;
            let mut z = Tensor::zeros(d);
            z.round_in_place(like.precision());
            Ok(z)
        }
    }
}

/// Sequential shift for one layer: returns the shifted features and caches
/// the current frame's first segment. Pure memory movement; the output is a
/// selection of input and state elements.
pub fn online_shift<T: Scalar>(
    x: &Tensor<T>,
    state: &mut ShiftState<T>,
    layer_id: u32,
) -> TensorResult<Tensor<T>> {
    let seg = state.config.segment(x.dims().c)?;
    let slot = state
        .slices
        .get_mut(&layer_id)
        .ok_or(TensorError::InvalidArgument("shift layer_id not registered"))?;
    let incoming = cached_or_zeros(slot, x, seg)?;
    let head = slice_channels(x, 0, seg)?;
    let y = if seg == x.dims().c {
        incoming // P=1: the whole feature comes from the previous frame
    } else {
        let rest = slice_channels(x, seg, x.dims().c)?;
        concat_channels(&incoming, &rest)?
    };
    *slot = Some(head);
    Ok(y)
}

/// Batch shift for one layer over N temporally consecutive frames.
///
/// Sample 0 receives the carry slice; sample i >= 1 receives sample i-1's
/// first segment; the new carry is the last sample's first segment.
pub fn batch_shift<T: Scalar>(
    x: &Tensor<T>,
    carry: &mut BatchCarry<T>,
    layer_id: u32,
) -> TensorResult<Tensor<T>> {
    let d = x.dims();
    let seg = carry.config.segment(d.c)?;
    let slot = carry
        .slices
        .get_mut(&layer_id)
        .ok_or(TensorError::InvalidArgument("shift layer_id not registered"))?;

    let mut out = Vec::with_capacity(d.n);
    let mut prev_head: Option<Tensor<T>> = None;
    for i in 0..d.n {
        let sample = x.sample(i);
        let incoming = match prev_head.take() {
            Some(h) => h,
            None => cached_or_zeros(slot, &sample, seg)?,
        };
        let head = slice_channels(&sample, 0, seg)?;
        let shifted = if seg == d.c {
            incoming
        } else {
            let rest = slice_channels(&sample, seg, d.c)?;
            concat_channels(&incoming, &rest)?
        };
        out.push(shifted);
        prev_head = Some(head);
    }
    *slot = prev_head; // last sample's segment crosses to the next batch
    Ok(Tensor::stack(&out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{uniform_tensor, DetRng};
    use crate::tensor::Dims;
    use proptest::prelude::*;

    fn layer0<T: Scalar>(p: usize) -> (ShiftState<T>, BatchCarry<T>) {
        let cfg = ShiftConfig::new(p).unwrap();
        (ShiftState::new(cfg, [0]), BatchCarry::new(cfg, [0]))
    }

    #[test]
    fn first_frame_head_is_zero() {
        let (mut st, _) = layer0::<f32>(4);
        let mut r = DetRng::seeded(1);
        let x = uniform_tensor(Dims::new(1, 8, 2, 2), 1.0, 2.0, &mut r);
        let y = online_shift(&x, &mut st, 0).unwrap();
        for c in 0..2 {
            for i in 0..4 {
                assert_eq!(y.at(0, c, i / 2, i % 2), 0.0);
            }
        }
        // remainder untouched
        for c in 2..8 {
            assert_eq!(y.at(0, c, 1, 1), x.at(0, c, 1, 1));
        }
    }

    #[test]
    fn p1_full_shift_returns_previous_frame() {
        let (mut st, _) = layer0::<f32>(1);
        let mut r = DetRng::seeded(2);
        let x0 = uniform_tensor(Dims::new(1, 3, 2, 2), -1.0, 1.0, &mut r);
        let x1 = uniform_tensor(Dims::new(1, 3, 2, 2), -1.0, 1.0, &mut r);
        let y0 = online_shift(&x0, &mut st, 0).unwrap();
        assert!(y0.data().iter().all(|&v| v == 0.0));
        let y1 = online_shift(&x1, &mut st, 0).unwrap();
        assert_eq!(y1, x0);
    }

    #[test]
    fn divisibility_and_registration_errors() {
        let (mut st, mut carry) = layer0::<f32>(4);
        let x = Tensor::<f32>::zeros(Dims::new(1, 6, 2, 2));
        assert!(online_shift(&x, &mut st, 0).is_err()); // 6 % 4 != 0
        let ok = Tensor::<f32>::zeros(Dims::new(1, 8, 2, 2));
        assert!(online_shift(&ok, &mut st, 7).is_err()); // unregistered layer
        assert!(batch_shift(&ok, &mut carry, 9).is_err());
    }

    /// Stacked-array oracle: shift channels [0, c/P) by +1 frame over the
    /// whole sequence with zero pre-padding.
    fn stacked_oracle(frames: &[Tensor<f32>], p: usize) -> Vec<Tensor<f32>> {
        let seg = frames[0].dims().c / p;
        let mut out = Vec::new();
        for (t, x) in frames.iter().enumerate() {
            let mut y = x.clone();
            let d = x.dims();
            for c in 0..seg {
                for yy in 0..d.h {
                    for xx in 0..d.w {
                        let v = if t == 0 { 0.0 } else { frames[t - 1].at(0, c, yy, xx) };
                        y.set(0, c, yy, xx, v);
                    }
                }
            }
            out.push(y);
        }
        out
    }

    #[test]
    fn online_matches_stacked_oracle() {
        let mut r = DetRng::seeded(3);
        let frames: Vec<_> =
            (0..3).map(|_| uniform_tensor(Dims::new(1, 8, 2, 3), -2.0, 2.0, &mut r)).collect();
        let want = stacked_oracle(&frames, 4);
        let (mut st, _) = layer0::<f32>(4);
        for (x, w) in frames.iter().zip(&want) {
            let y = online_shift(x, &mut st, 0).unwrap();
            assert_eq!(&y, w);
        }
    }

    #[test]
    fn single_sample_batch_equals_online() {
        let mut r = DetRng::seeded(4);
        let (mut st, mut carry) = layer0::<f32>(2);
        for _ in 0..4 {
            let x = uniform_tensor(Dims::new(1, 4, 2, 2), -1.0, 1.0, &mut r);
            let a = online_shift(&x, &mut st, 0).unwrap();
            let b = batch_shift(&x, &mut carry, 0).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn identical_frames_batch_zeroes_only_first_head() {
        let x1 = Tensor::filled(Dims::new(1, 4, 2, 2), 1.0f32);
        let batch = Tensor::stack(&[x1.clone(), x1.clone(), x1.clone()]).unwrap();
        let (_, mut carry) = layer0::<f32>(4);
        let y = batch_shift(&batch, &mut carry, 0).unwrap();
        // sample 0's head came from the zero carry
        assert_eq!(y.at(0, 0, 0, 0), 0.0);
        // later samples received an identical head from their predecessor
        assert_eq!(y.at(1, 0, 0, 0), 1.0);
        assert_eq!(y.at(2, 0, 0, 0), 1.0);
    }

    #[test]
    fn output_is_selection_of_inputs() {
        // Zero arithmetic: with all-distinct inputs, every output element must
        // literally be one of the input/state elements.
        let mut vals = std::collections::HashSet::new();
        let mut x = Tensor::<f32>::zeros(Dims::new(3, 4, 2, 2));
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = (i + 1) as f32;
            vals.insert((i + 1) as u32);
        }
        vals.insert(0); // zero-initialized carry
        let (_, mut carry) = layer0::<f32>(4);
        let y = batch_shift(&x, &mut carry, 0).unwrap();
        for &v in y.data() {
            assert!(vals.contains(&(v as u32)), "{v} not an input element");
        }
    }

    proptest! {
        /// Composing batch_shift over any partition of the sequence is
        /// bit-identical to online_shift frame by frame.
        #[test]
        fn batch_partitioning_equivalence(seed in 0u64..300, t_len in 1usize..12,
                                          p in prop::sample::select(vec![1usize, 2, 4, 8]),
                                          n in prop::sample::select(vec![1usize, 2, 3, 4, 8])) {
            let mut r = DetRng::seeded(seed);
            let frames: Vec<Tensor<f32>> =
                (0..t_len).map(|_| uniform_tensor(Dims::new(1, 8, 2, 2), -3.0, 3.0, &mut r)).collect();

            let (mut st, mut carry) = layer0::<f32>(p);
            let mut seq_out = Vec::new();
            for x in &frames {
                seq_out.push(online_shift(x, &mut st, 0).unwrap());
            }

            let mut batch_out: Vec<Tensor<f32>> = Vec::new();
            for chunk in frames.chunks(n) {
                let stacked = Tensor::stack(chunk).unwrap();
                let y = batch_shift(&stacked, &mut carry, 0).unwrap();
                for i in 0..chunk.len() {
                    batch_out.push(y.sample(i));
                }
            }
            prop_assert_eq!(seq_out, batch_out);
        }
    }
}
