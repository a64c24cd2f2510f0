//! Uniform access to every trainable array of a model component.

use alloc::string::String;
use alloc::vec::Vec;

use crate::Scalar;

/// A named view of one parameter array.
#[derive(Debug)]
pub struct ParamRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

/// Implemented by every component that owns trainable arrays.
///
/// `visit` and `visit_mut` must walk the arrays in the same order; gradient
/// buffers are values of the same type, so the order pairs parameters with
/// their gradients.
pub trait Params<T: Scalar>: Clone {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamRef<'a, T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |p| n += p.data.len());
        n
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |s| s.iter_mut().for_each(|v| *v = T::zero()));
        z
    }

    fn squared_norm(&self) -> T {
        let mut acc = T::zero();
        self.visit("", &mut |p| {
            for &v in p.data {
                acc += v * v;
            }
        });
        acc
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |p| ok &= p.data.iter().all(|v| v.is_finite()));
        ok
    }

    /// Calls `f(param, grad)` for every array pair, in visit order.
    #[allow(clippy::type_complexity)]
    fn zip_mut(&mut self, grads: &Self, f: &mut dyn FnMut(usize, &mut [T], &[T])) {
        let mut gs: Vec<&[T]> = Vec::new();
        grads.visit("", &mut |p| gs.push(p.data));
        let mut i = 0;
        self.visit_mut(&mut |p| {
            f(i, p, gs[i]);
            i += 1;
        });
    }

    /// Flattened copy of all parameters in visit order.
    fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit("", &mut |p| out.extend_from_slice(p.data));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        alloc::format!("{prefix}.{name}")
    }
}
