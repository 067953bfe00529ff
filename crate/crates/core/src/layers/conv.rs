use super::Param;
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_backward_cols, conv2d_forward, conv2d_forward_cols, im2col, ConvGeometry, Real, Tensor,
};

/// Stride-1 convolution layer with `K × kh × kw × C` filters.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub pad: usize,
}

#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    geometry: ConvGeometry,
    cols: Vec<T>,
}

impl<T: Real> Conv<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, pad: usize) -> Result<Self> {
        let [k, kh, kw, _] = weight.shape()[..] else {
            return Err(Error::shape(format!(
                "conv weight must be K×kh×kw×C, got {:?}",
                weight.shape()
            )));
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(format!("kernel {kh}×{kw} must be odd")));
        }
        if bias.shape() != [k] {
            return Err(Error::shape(format!(
                "bias shape {:?} for {k} kernels",
                bias.shape()
            )));
        }
        Ok(Conv {
            weight: Param::new(weight),
            bias: Param::new(bias),
            pad,
        })
    }

    pub fn kernels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[3]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(x, &self.weight.value, &self.bias.value, self.pad)
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let geometry = ConvGeometry::new(x.shape(), self.weight.value.shape(), self.pad)?;
        let cols = if geometry.is_pointwise() {
            x.data().to_vec()
        } else {
            im2col(x, &geometry)
        };
        let y = conv2d_forward_cols(&cols, &geometry, &self.weight.value, &self.bias.value)?;
        Ok((y, ConvCache { geometry, cols }))
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `need_input` is set.
    pub fn backward(
        &mut self,
        cache: &ConvCache<T>,
        grad_out: &Tensor<T>,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        conv2d_backward_cols(
            &cache.cols,
            &cache.geometry,
            &self.weight.value,
            grad_out,
            need_input,
            self.weight.grad.data_mut(),
            self.bias.grad.data_mut(),
        )
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }
}
