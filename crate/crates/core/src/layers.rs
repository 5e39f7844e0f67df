//! Conv layer binding: weight-store tensors entered into an executor.

use crate::error::Result;
use crate::exec::Executor;
use crate::rng::{conv_init, DetRng};
use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor};
use crate::weights::WeightStore;

/// A conv's parameters bound into some executor.
#[derive(Debug, Clone, Copy)]
pub struct Conv<V: Copy> {
    pub w: V,
    pub b: V,
}

impl<V: Copy + std::fmt::Debug> Conv<V> {
    pub fn bind<T: Scalar, E: Executor<T, V = V>>(
        ex: &mut E,
        ws: &WeightStore,
        name: &str,
    ) -> Result<Self> {
        let wname = format!("{name}.w");
        let bname = format!("{name}.b");
        let w = ex.param(&wname, ws.get(&wname)?.cast::<T>());
        let b = ex.param(&bname, ws.get(&bname)?.cast::<T>());
        Ok(Conv { w, b })
    }

    pub fn apply<T: Scalar, E: Executor<T, V = V>>(
        &self,
        ex: &mut E,
        x: V,
        stride: usize,
        padding: usize,
    ) -> Result<V> {
        Ok(ex.conv2d(x, self.w, self.b, stride, padding)?)
    }
}

/// Insert freshly initialized conv parameters (fan-in uniform w, zero bias).
pub fn init_conv(ws: &mut WeightStore, name: &str, out_c: usize, in_c: usize, k: usize, rng: &mut DetRng) {
    ws.insert(format!("{name}.w"), conv_init(out_c, in_c, k, rng));
    ws.insert(format!("{name}.b"), Tensor::zeros(Dims::new(1, out_c, 1, 1)));
}
