use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Flat input offset of the maximum for each pooled output element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndex {
    pub window: usize,
    pub input_shape: [usize; 3],
    pub argmax: Vec<usize>,
}

/// Stride-1 `window × window` max pooling without implicit padding.
///
/// Ties go to the first cell of the window in row-major order.
pub fn maxpool2d_forward<T: Real>(input: &Tensor<T>, window: usize) -> Result<(Tensor<T>, PoolIndex)> {
    let (h, w, c) = input.dims3()?;
    if window == 0 || window > h || window > w {
        return Err(Error::shape(format!(
            "pool window {window} does not fit {h}×{w} input"
        )));
    }
    let (oh, ow) = (h - window + 1, w - window + 1);
    let src = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    let mut best = vec![T::zero(); c];
    let mut best_at = vec![0usize; c];
    for oy in 0..oh {
        for ox in 0..ow {
            let first = (oy * w + ox) * c;
            best.copy_from_slice(&src[first..first + c]);
            for (ch, slot) in best_at.iter_mut().enumerate() {
                *slot = first + ch;
            }
            for dy in 0..window {
                for dx in 0..window {
                    let base = ((oy + dy) * w + ox + dx) * c;
                    for ch in 0..c {
                        let v = src[base + ch];
                        if v > best[ch] {
                            best[ch] = v;
                            best_at[ch] = base + ch;
                        }
                    }
                }
            }
            out.extend_from_slice(&best);
            argmax.extend_from_slice(&best_at);
        }
    }
    Ok((
        Tensor::from_vec(&[oh, ow, c], out)?,
        PoolIndex {
            window,
            input_shape: [h, w, c],
            argmax,
        },
    ))
}

/// Routes each output gradient to the cell that produced the max,
/// accumulating where stride-1 windows overlap.
pub fn maxpool2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    index: &PoolIndex,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if input_shape != index.input_shape {
        return Err(Error::shape(format!(
            "pool index was built for {:?}, not {input_shape:?}",
            index.input_shape
        )));
    }
    if grad_out.len() != index.argmax.len() {
        return Err(Error::shape(format!(
            "grad_out has {} values, pool index {}",
            grad_out.len(),
            index.argmax.len()
        )));
    }
    let mut gin = Tensor::zeros(input_shape);
    let len = gin.len();
    let dst = gin.data_mut();
    for (&at, &g) in index.argmax.iter().zip(grad_out.data()) {
        if at >= len {
            return Err(Error::shape(format!(
                "pool index {at} outside input of {len} values"
            )));
        }
        dst[at] += g;
    }
    Ok(gin)
}
