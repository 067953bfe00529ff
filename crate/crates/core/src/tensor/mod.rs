//! Dense row-major tensors and the raw kernels the layers are built on.
//!
//! Feature maps are `H × W × C`; filter banks are `K × kh × kw × C`. Every
//! kernel allocates its output and leaves its inputs untouched.

mod conv;
pub mod gemm;
mod pool;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use conv::{
    conv2d_backward, conv2d_backward_cols, conv2d_forward, conv2d_forward_cols, im2col,
    ConvGeometry, ConvGrads,
};
pub use pool::{maxpool2d_backward, maxpool2d_forward, PoolIndex};

/// Scalar type of a tensor: `f32` for training and inference, `f64` for
/// gradient checking.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::shape(format!(
            "tensor rank must be 1..=4, got {}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::shape(format!("zero extent in {shape:?}")));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::shape(format!("extent overflow in {shape:?}")))
}

impl<T: Real> Tensor<T> {
    /// All-zero tensor.
    ///
    /// Panics on an invalid shape (rank outside 1..=4 or a zero extent); use
    /// [`Tensor::from_vec`] for untrusted shapes.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = check_shape(shape).expect("valid tensor shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = check_shape(shape).expect("valid tensor shape");
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `(H, W, C)` of a rank-3 feature map.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::shape(format!(
                "expected an H×W×C feature map, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn at3(&self, y: usize, x: usize, c: usize) -> T {
        let (_, w, ch) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(y * w + x) * ch + c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors with [`Error::NonFinite`] naming `op` if any value is NaN/Inf.
    pub fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(format!(
                "cannot add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Zero-pads an `H × W × C` map by `pad` on every side.
    pub fn pad_spatial(&self, pad: usize) -> Result<Self> {
        let (h, w, c) = self.dims3()?;
        if pad == 0 {
            return Ok(self.clone());
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let mut out = Tensor::zeros(&[ph, pw, c]);
        for y in 0..h {
            let src = &self.data[y * w * c..(y + 1) * w * c];
            let start = ((y + pad) * pw + pad) * c;
            out.data[start..start + w * c].copy_from_slice(src);
        }
        Ok(out)
    }

    /// Copies the `rows × cols` spatial window starting at `(y0, x0)`;
    /// cells outside the map are zero.
    pub fn window(&self, y0: isize, x0: isize, rows: usize, cols: usize) -> Result<Self> {
        let (h, w, c) = self.dims3()?;
        let mut out = Tensor::zeros(&[rows, cols, c]);
        for r in 0..rows {
            let y = y0 + r as isize;
            if y < 0 || y >= h as isize {
                continue;
            }
            for q in 0..cols {
                let x = x0 + q as isize;
                if x < 0 || x >= w as isize {
                    continue;
                }
                let src = (y as usize * w + x as usize) * c;
                let dst = (r * cols + q) * c;
                out.data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        Ok(out)
    }
}

/// Stacks `H × W × C_i` maps along the channel axis, in argument order.
pub fn concat_channels<T: Real>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels needs at least one part"))?;
    let (h, w, _) = first.dims3()?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (ph, pw, pc) = p.dims3()?;
        if (ph, pw) != (h, w) {
            return Err(Error::shape(format!(
                "concat_channels spatial mismatch: {h}×{w} vs {ph}×{pw}"
            )));
        }
        widths.push(pc);
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(h * w * total);
    for pos in 0..h * w {
        for (p, &c) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data[pos * c..(pos + 1) * c]);
        }
    }
    Tensor::from_vec(&[h, w, total], data)
}

/// Inverse of [`concat_channels`]: splits the channel axis into consecutive
/// groups of the given widths.
pub fn split_channels<T: Real>(x: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (h, w, c) = x.dims3()?;
    if widths.iter().sum::<usize>() != c || widths.contains(&0) {
        return Err(Error::shape(format!(
            "cannot split {c} channels into {widths:?}"
        )));
    }
    let mut parts: Vec<Vec<T>> = widths
        .iter()
        .map(|&pc| Vec::with_capacity(h * w * pc))
        .collect();
    for pos in 0..h * w {
        let mut off = pos * c;
        for (part, &pc) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&x.data[off..off + pc]);
            off += pc;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(d, &pc)| Tensor::from_vec(&[h, w, pc], d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_invariants() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::from_vec(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.len(), 6);
    }

    #[test]
    fn non_finite_is_reported() {
        let t = Tensor::from_vec(&[2], vec![1.0f32, f32::NAN]).unwrap();
        assert!(matches!(t.ensure_finite("test"), Err(Error::NonFinite("test"))));
    }

    #[test]
    fn concat_single_part_is_identity() {
        let t = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        assert_eq!(concat_channels(std::slice::from_ref(&t)).unwrap(), t);
    }

    #[test]
    fn concat_stacks_in_argument_order() {
        let width = 5;
        let parts: Vec<_> = (0..3)
            .map(|k| Tensor::<f32>::full(&[2, 2, width], k as f32))
            .collect();
        let joined = concat_channels(&parts).unwrap();
        assert_eq!(joined.shape(), &[2, 2, 3 * width]);
        for c in 0..3 * width {
            assert_eq!(joined.at3(1, 0, c), (c / width) as f32);
        }
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 2, 1]);
        let b = Tensor::<f32>::zeros(&[2, 3, 1]);
        assert!(concat_channels(&[a, b]).is_err());
    }

    #[test]
    fn split_then_concat_is_bitwise_identity() {
        let t = Tensor::<f32>::from_fn(&[3, 4, 7], |i| (i as f32).sin() * 1e3);
        let parts = split_channels(&t, &[2, 4, 1]).unwrap();
        let back = concat_channels(&parts).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn pad_and_window_agree() {
        let t = Tensor::<f32>::from_fn(&[3, 4, 2], |i| i as f32 + 1.0);
        let padded = t.pad_spatial(2).unwrap();
        assert_eq!(padded.shape(), &[7, 8, 2]);
        let win = t.window(-2, -2, 7, 8).unwrap();
        assert_eq!(win, padded);
    }
}
