//! Stateful layers: parameters with their gradients and momentum buffers,
//! and the forward/backward maps the network is assembled from.
//!
//! Forward passes that need to be differentiated return an explicit cache
//! value; backward passes consume it and accumulate parameter gradients.

mod conv;
mod dropout;
mod lrn;
mod residual;
mod softmax;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use conv::{Conv, ConvCache};
pub use dropout::{Dropout, DropoutMask};
pub use lrn::{lrn_backward, lrn_forward, LrnParams};
pub use residual::{Residual, ResidualCache};
pub use softmax::{softmax, softmax_xent};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A learnable tensor with its gradient accumulator and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub velocity: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        Param {
            value,
            grad,
            velocity,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` where `x > 0`; the subgradient at exactly zero is 0.
pub fn relu_backward<T: Real>(grad_out: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    if !grad_out.same_shape(x) {
        return Err(Error::shape(format!(
            "relu grad {:?} vs input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(x.data())
        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite differences in 64-bit.

    pub const STEP: f64 = 1e-4;

    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
    }

    /// Numeric gradient of `f` with respect to every entry of `x`.
    pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                probe[i] = x[i] + STEP;
                let up = f(&probe);
                probe[i] = x[i] - STEP;
                let down = f(&probe);
                probe[i] = x[i];
                (up - down) / (2.0 * STEP)
            })
            .collect()
    }

    pub fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64) {
        assert_eq!(analytic.len(), numeric.len());
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            let e = rel_err(a, n, 1e-3);
            assert!(e <= tol, "entry {i}: analytic {a} numeric {n} rel {e}");
        }
    }
}
