use super::{relu_backward, relu_forward, Conv, ConvCache, Param};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Two stacked 1×1 convolutions with a shortcut:
/// `y = ReLU(conv_b(ReLU(conv_a(x))) + x)`.
///
/// With `shortcut` off the module degenerates to two plain conv+ReLU
/// layers, `y = ReLU(conv_b(ReLU(conv_a(x))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual<T> {
    pub conv_a: Conv<T>,
    pub conv_b: Conv<T>,
    pub shortcut: bool,
}

#[derive(Clone, Debug)]
pub struct ResidualCache<T> {
    a: ConvCache<T>,
    hidden: Tensor<T>,
    b: ConvCache<T>,
    out: Tensor<T>,
}

impl<T: Real> ResidualCache<T> {
    /// Which units of the two ReLUs were active.
    pub fn activity(&self) -> impl Iterator<Item = bool> + '_ {
        self.hidden
            .data()
            .iter()
            .chain(self.out.data())
            .map(|&v| v > T::zero())
    }
}

impl<T: Real> Residual<T> {
    pub fn new(conv_a: Conv<T>, conv_b: Conv<T>, shortcut: bool) -> Result<Self> {
        if conv_a.kernels() != conv_b.in_channels() || conv_b.kernels() != conv_a.in_channels() {
            return Err(Error::shape(format!(
                "residual branch maps {} -> {} -> {} channels",
                conv_a.in_channels(),
                conv_a.kernels(),
                conv_b.kernels()
            )));
        }
        Ok(Residual {
            conv_a,
            conv_b,
            shortcut,
        })
    }

    fn merge(&self, branch: Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if !branch.same_shape(x) {
            return Err(Error::shape(format!(
                "residual branch {:?} vs input {:?}",
                branch.shape(),
                x.shape()
            )));
        }
        let mut sum = branch;
        if self.shortcut {
            sum.add_assign(x)?;
        }
        Ok(relu_forward(&sum))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let hidden = relu_forward(&self.conv_a.forward(x)?);
        let branch = self.conv_b.forward(&hidden)?;
        self.merge(branch, x)
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ResidualCache<T>)> {
        let (pre, a) = self.conv_a.forward_cached(x)?;
        let hidden = relu_forward(&pre);
        let (branch, b) = self.conv_b.forward_cached(&hidden)?;
        let out = self.merge(branch, x)?;
        Ok((
            out.clone(),
            ResidualCache {
                a,
                hidden,
                b,
                out,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ResidualCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        // ReLU output is positive exactly where its input was
        let g_sum = relu_backward(grad_out, &cache.out)?;
        let g_hidden = self
            .conv_b
            .backward(&cache.b, &g_sum, true)?
            .expect("input gradient requested");
        let g_pre = relu_backward(&g_hidden, &cache.hidden)?;
        let mut g_in = self
            .conv_a
            .backward(&cache.a, &g_pre, true)?
            .expect("input gradient requested");
        if self.shortcut {
            g_in.add_assign(&g_sum)?;
        }
        Ok(g_in)
    }

    pub fn params(&self) -> [&Param<T>; 4] {
        let [a, b] = self.conv_a.params();
        let [c, d] = self.conv_b.params();
        [a, b, c, d]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 4] {
        let [a, b] = self.conv_a.params_mut();
        let [c, d] = self.conv_b.params_mut();
        [a, b, c, d]
    }
}
