use super::gemm::{gemm_nn_acc, gemm_nt, gemm_tn_acc};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Extents of one stride-1 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kernels: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input_shape: &[usize], filter_shape: &[usize], pad: usize) -> Result<Self> {
        let [in_h, in_w, channels] = input_shape[..] else {
            return Err(Error::shape(format!(
                "conv input must be H×W×C, got {input_shape:?}"
            )));
        };
        let [kernels, kh, kw, fc] = filter_shape[..] else {
            return Err(Error::shape(format!(
                "filters must be K×kh×kw×C, got {filter_shape:?}"
            )));
        };
        if fc != channels {
            return Err(Error::shape(format!(
                "filter channels {fc} != input channels {channels}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(format!("kernel {kh}×{kw} must be odd")));
        }
        let (ph, pw) = (in_h + 2 * pad, in_w + 2 * pad);
        if kh > ph || kw > pw {
            return Err(Error::shape(format!(
                "kernel {kh}×{kw} larger than padded input {ph}×{pw}"
            )));
        }
        Ok(ConvGeometry {
            in_h,
            in_w,
            channels,
            kernels,
            kh,
            kw,
            pad,
            out_h: ph - kh + 1,
            out_w: pw - kw + 1,
        })
    }

    /// Number of output positions (rows of the patch matrix).
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Length of one flattened receptive field (columns of the patch matrix).
    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.channels
    }

    /// 1×1 without padding: the input already is the patch matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0
    }

    pub fn out_shape(&self) -> [usize; 3] {
        [self.out_h, self.out_w, self.kernels]
    }
}

/// Lowers an `H × W × C` map into the `positions × (kh·kw·C)` patch matrix,
/// column order `(dy, dx, c)` to match the filter layout. Out-of-range
/// cells read as zero.
pub fn im2col<T: Real>(input: &Tensor<T>, g: &ConvGeometry) -> Vec<T> {
    let (h, w, c) = (g.in_h, g.in_w, g.channels);
    let q = g.patch_len();
    let src = input.data();
    let mut cols = vec![T::zero(); g.positions() * q];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * q..][..q];
            for dy in 0..g.kh {
                let iy = (oy + dy) as isize - g.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for dx in 0..g.kw {
                    let ix = (ox + dx) as isize - g.pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let s = (iy as usize * w + ix as usize) * c;
                    let d = (dy * g.kw + dx) * c;
                    row[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(gcols: &[T], g: &ConvGeometry) -> Tensor<T> {
    let (h, w, c) = (g.in_h, g.in_w, g.channels);
    let q = g.patch_len();
    let mut out = Tensor::zeros(&[h, w, c]);
    let dst = out.data_mut();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &gcols[(oy * g.out_w + ox) * q..][..q];
            for dy in 0..g.kh {
                let iy = (oy + dy) as isize - g.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for dx in 0..g.kw {
                    let ix = (ox + dx) as isize - g.pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let d = (iy as usize * w + ix as usize) * c;
                    let s = (dy * g.kw + dx) * c;
                    for (o, &v) in dst[d..d + c].iter_mut().zip(&row[s..s + c]) {
                        *o += v;
                    }
                }
            }
        }
    }
    out
}

fn check_bias<T: Real>(bias: &Tensor<T>, kernels: usize) -> Result<()> {
    if bias.len() != kernels {
        return Err(Error::shape(format!(
            "bias has {} entries for {kernels} kernels",
            bias.len()
        )));
    }
    Ok(())
}

/// Stride-1 convolution of an `H × W × C` map with `K × kh × kw × C` filters
/// over a zero-padded input.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &Tensor<T>,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), filters.shape(), pad)?;
    if g.is_pointwise() {
        conv2d_forward_cols(input.data(), &g, filters, bias)
    } else {
        conv2d_forward_cols(&im2col(input, &g), &g, filters, bias)
    }
}

/// Convolution from an already-lowered patch matrix.
pub fn conv2d_forward_cols<T: Real>(
    cols: &[T],
    g: &ConvGeometry,
    filters: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_bias(bias, g.kernels)?;
    if cols.len() != g.positions() * g.patch_len() {
        return Err(Error::shape("patch matrix does not match geometry"));
    }
    let mut out = Tensor::zeros(&g.out_shape());
    gemm_nt(
        cols,
        filters.data(),
        Some(bias.data()),
        out.data_mut(),
        g.positions(),
        g.kernels,
        g.patch_len(),
    );
    out.ensure_finite("conv2d_forward")
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub filters: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Analytic gradients of [`conv2d_forward`] with respect to its input,
/// filters and bias.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    grad_out: &Tensor<T>,
    pad: usize,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(input.shape(), filters.shape(), pad)?;
    let mut gf = Tensor::zeros(filters.shape());
    let mut gb = Tensor::zeros(&[g.kernels]);
    let gin = if g.is_pointwise() {
        conv2d_backward_cols(input.data(), &g, filters, grad_out, true, gf.data_mut(), gb.data_mut())?
    } else {
        let cols = im2col(input, &g);
        conv2d_backward_cols(&cols, &g, filters, grad_out, true, gf.data_mut(), gb.data_mut())?
    };
    Ok(ConvGrads {
        input: gin.expect("input gradient requested"),
        filters: gf,
        bias: gb,
    })
}

/// Backward pass from a lowered patch matrix. Filter and bias gradients are
/// accumulated into `grad_filters` / `grad_bias`; the input gradient is
/// returned only when `need_input` is set.
pub fn conv2d_backward_cols<T: Real>(
    cols: &[T],
    g: &ConvGeometry,
    filters: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
    grad_filters: &mut [T],
    grad_bias: &mut [T],
) -> Result<Option<Tensor<T>>> {
    if grad_out.shape() != g.out_shape() {
        return Err(Error::shape(format!(
            "grad_out {:?} does not match forward output {:?}",
            grad_out.shape(),
            g.out_shape()
        )));
    }
    if filters.shape() != [g.kernels, g.kh, g.kw, g.channels]
        || grad_filters.len() != filters.len()
        || grad_bias.len() != g.kernels
    {
        return Err(Error::shape("gradient buffers do not match filters"));
    }
    let (p, k, q) = (g.positions(), g.kernels, g.patch_len());
    let go = grad_out.data();
    for row in go.chunks_exact(k) {
        for (b, &v) in grad_bias.iter_mut().zip(row) {
            *b += v;
        }
    }
    // grad_filters (k × q) += grad_outᵀ (k × p) · cols (p × q)
    gemm_tn_acc(go, cols, grad_filters, k, q, p);
    if !need_input {
        return Ok(None);
    }
    let mut gcols = vec![T::zero(); p * q];
    gemm_nn_acc(go, filters.data(), &mut gcols, p, q, k);
    let gin = if g.is_pointwise() {
        Tensor::from_vec(&[g.in_h, g.in_w, g.channels], gcols)?
    } else {
        col2im(&gcols, g)
    };
    Ok(Some(gin.ensure_finite("conv2d_backward")?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop evaluation of the padded convolution.
    fn conv_oracle(x: &Tensor<f64>, f: &Tensor<f64>, b: &Tensor<f64>, pad: usize) -> Tensor<f64> {
        let (h, w, c) = x.dims3().unwrap();
        let [k, kh, kw, _] = f.shape()[..] else { unreachable!() };
        let (oh, ow) = (h + 2 * pad - kh + 1, w + 2 * pad - kw + 1);
        let mut out = Tensor::zeros(&[oh, ow, k]);
        for oy in 0..oh {
            for ox in 0..ow {
                for kk in 0..k {
                    let mut s = b.data()[kk];
                    for dy in 0..kh {
                        for dx in 0..kw {
                            for cc in 0..c {
                                let iy = (oy + dy) as isize - pad as isize;
                                let ix = (ox + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += f.data()[((kk * kh + dy) * kw + dx) * c + cc]
                                    * x.at3(iy as usize, ix as usize, cc);
                            }
                        }
                    }
                    out.data_mut()[(oy * ow + ox) * k + kk] = s;
                }
            }
        }
        out
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_input_passes_only_bias() {
        let x = Tensor::<f32>::zeros(&[3, 3, 1]);
        let f = Tensor::full(&[1, 1, 1, 1], 7.0f32);
        let b = Tensor::full(&[1], 2.0f32);
        let y = conv2d_forward(&x, &f, &b, 0).unwrap();
        assert_eq!(y.shape(), &[3, 3, 1]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn pointwise_conv_is_dense_product() {
        // integer-valued operands make every summation order exact
        let (d, l) = (13, 6);
        let x = Tensor::<f32>::from_fn(&[1, 1, d], |i| (i as f32) - 6.0);
        let wfc = Tensor::<f32>::from_fn(&[l, 1, 1, d], |i| ((i * 7) % 5) as f32 - 2.0);
        let zero = Tensor::zeros(&[l]);
        let y = conv2d_forward(&x, &wfc, &zero, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, l]);
        for j in 0..l {
            let want: f32 = (0..d).map(|i| wfc.data()[j * d + i] * x.data()[i]).sum();
            assert_eq!(y.data()[j], want);
        }
    }

    #[test]
    fn matches_loop_oracle_5x5x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, &[5, 5, 3]);
        let f = rand_tensor(&mut rng, &[2, 3, 3, 3]);
        let b = rand_tensor(&mut rng, &[2]);
        let got = conv2d_forward(&x, &f, &b, 1).unwrap();
        let want = conv_oracle(&x, &f, &b, 1);
        assert_eq!(got.shape(), &[5, 5, 2]);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() <= 1e-6 * w.abs().max(1.0), "{g} vs {w}");
        }
    }

    #[test]
    fn errors_on_bad_geometry() {
        let x = Tensor::<f32>::zeros(&[3, 3, 2]);
        let b = Tensor::zeros(&[1]);
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 1, 1, 3]), &b, 0).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 5, 5, 2]), &b, 0).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 5, 5, 2]), &b, 1).is_ok());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 2, 2, 2]), &b, 0).is_err());
    }

    #[test]
    fn backward_zero_grad_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[4, 4, 2]);
        let f = rand_tensor(&mut rng, &[3, 3, 3, 2]);
        let g = conv2d_backward(&x, &f, &Tensor::zeros(&[4, 4, 3]), 1).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.filters.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_backward_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[2, 3, 4]);
        let f = rand_tensor(&mut rng, &[5, 1, 1, 4]);
        let go = rand_tensor(&mut rng, &[2, 3, 5]);
        let g = conv2d_backward(&x, &f, &go, 0).unwrap();
        for k in 0..5 {
            for c in 0..4 {
                let want: f64 = (0..6)
                    .map(|p| go.data()[p * 5 + k] * x.data()[p * 4 + c])
                    .sum();
                assert!((g.filters.data()[k * 4 + c] - want).abs() < 1e-12);
            }
            let bsum: f64 = (0..6).map(|p| go.data()[p * 5 + k]).sum();
            assert!((g.bias.data()[k] - bsum).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_wrong_grad_shape() {
        let x = Tensor::<f64>::zeros(&[4, 4, 2]);
        let f = Tensor::zeros(&[3, 3, 3, 2]);
        assert!(conv2d_backward(&x, &f, &Tensor::zeros(&[2, 2, 3]), 0).is_ok());
        assert!(conv2d_backward(&x, &f, &Tensor::zeros(&[4, 4, 3]), 0).is_err());
    }
}
