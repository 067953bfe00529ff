use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Cross-channel local response normalization:
/// `b_i = a_i / (k + α · Σ_{|j-i| ≤ n/2} a_j²)^β`, with the channel window
/// clipped at the first and last channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrnParams {
    pub n: usize,
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams {
            n: 5,
            k: 1.0,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n.is_multiple_of(2) {
            return Err(Error::config(format!("LRN size n={} must be odd", self.n)));
        }
        if !(self.k >= 0.0 && self.alpha >= 0.0 && self.beta > 0.0) {
            return Err(Error::config(format!(
                "LRN needs k >= 0, alpha >= 0, beta > 0 (got k={}, alpha={}, beta={})",
                self.k, self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Per-channel denominators `k + α Σ a_j²` of one position.
fn denominators<T: Real>(a: &[T], p: &LrnParams, out: &mut [T]) {
    let half = p.n / 2;
    let (k, alpha) = (T::lit(p.k), T::lit(p.alpha));
    let c = a.len();
    for (i, o) in out.iter_mut().enumerate().take(c) {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(c - 1);
        let mut s = T::zero();
        for &v in &a[lo..=hi] {
            s += v * v;
        }
        *o = k + alpha * s;
    }
}

pub fn lrn_forward<T: Real>(x: &Tensor<T>, p: &LrnParams) -> Result<Tensor<T>> {
    p.validate()?;
    let c = *x.shape().last().expect("non-empty shape");
    let beta = T::lit(p.beta);
    let mut out = x.clone();
    let mut den = vec![T::zero(); c];
    for pos in out.data_mut().chunks_exact_mut(c) {
        denominators(pos, p, &mut den);
        for (v, &d) in pos.iter_mut().zip(&den) {
            *v = *v / d.powf(beta);
        }
    }
    out.ensure_finite("lrn_forward")
}

/// Vector-Jacobian product of [`lrn_forward`]:
/// `g_in_j = g_j d_j^{-β} - 2αβ a_j Σ_{i ∋ j} g_i a_i d_i^{-β-1}`.
pub fn lrn_backward<T: Real>(grad_out: &Tensor<T>, x: &Tensor<T>, p: &LrnParams) -> Result<Tensor<T>> {
    p.validate()?;
    if !grad_out.same_shape(x) {
        return Err(Error::shape(format!(
            "lrn grad {:?} vs input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let c = *x.shape().last().expect("non-empty shape");
    let half = p.n / 2;
    let beta = T::lit(p.beta);
    let coef = T::lit(2.0 * p.alpha * p.beta);
    let mut gin = Tensor::zeros(x.shape());
    let mut den = vec![T::zero(); c];
    let mut scaled = vec![T::zero(); c];
    for ((a, g), out) in x
        .data()
        .chunks_exact(c)
        .zip(grad_out.data().chunks_exact(c))
        .zip(gin.data_mut().chunks_exact_mut(c))
    {
        denominators(a, p, &mut den);
        for i in 0..c {
            scaled[i] = g[i] * a[i] * den[i].powf(-beta - T::one());
        }
        for j in 0..c {
            let lo = j.saturating_sub(half);
            let hi = (j + half).min(c - 1);
            let mut s = T::zero();
            for &v in &scaled[lo..=hi] {
                s += v;
            }
            out[j] = g[j] * den[j].powf(-beta) - coef * a[j] * s;
        }
    }
    gin.ensure_finite("lrn_backward")
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight evaluation of the normalization formula, one scalar at a time.
    fn lrn_oracle(x: &Tensor<f64>, p: &LrnParams) -> Vec<f64> {
        let c = x.shape()[2];
        let half = (p.n / 2) as isize;
        let mut out = vec![0.0; x.len()];
        for pos in 0..x.len() / c {
            for i in 0..c as isize {
                let mut s = 0.0;
                for j in i - half..=i + half {
                    if j >= 0 && j < c as isize {
                        let v = x.data()[pos * c + j as usize];
                        s += v * v;
                    }
                }
                let a = x.data()[pos * c + i as usize];
                out[pos * c + i as usize] = a / (p.k + p.alpha * s).powf(p.beta);
            }
        }
        out
    }

    #[test]
    fn alpha_zero_k_one_is_identity() {
        let p = LrnParams { n: 5, k: 1.0, alpha: 0.0, beta: 0.75 };
        let x = Tensor::<f32>::from_fn(&[2, 2, 6], |i| i as f32 - 10.0);
        assert_eq!(lrn_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn single_channel_scalar() {
        let p = LrnParams { n: 1, k: 1.0, alpha: 1.0, beta: 1.0 };
        let x = Tensor::from_vec(&[1, 1, 1], vec![3.0f64]).unwrap();
        let y = lrn_forward(&x, &p).unwrap();
        assert!((y.data()[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn matches_scalar_loop_with_clipped_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = LrnParams { n: 5, k: 2.0, alpha: 0.3, beta: 0.75 };
        let x = Tensor::<f64>::from_fn(&[2, 2, 8], |_| rng.random_range(-2.0..2.0));
        let got = lrn_forward(&x, &p).unwrap();
        for (g, w) in got.data().iter().zip(lrn_oracle(&x, &p)) {
            assert!((g - w).abs() <= 1e-6 * w.abs().max(1.0));
        }
    }

    #[test]
    fn alpha_zero_backward_scales_by_k() {
        let p = LrnParams { n: 3, k: 2.0, alpha: 0.0, beta: 0.75 };
        let x = Tensor::<f64>::from_fn(&[1, 2, 4], |i| i as f64);
        let g = Tensor::<f64>::from_fn(&[1, 2, 4], |i| 1.0 - i as f64);
        let gin = lrn_backward(&g, &x, &p).unwrap();
        for (a, b) in gin.data().iter().zip(g.data()) {
            assert!((a - b * 2f64.powf(-0.75)).abs() < 1e-15);
        }
    }

    #[test]
    fn single_channel_derivative_by_hand() {
        // d/da [a (k + αa²)^-β] = (k + αa²)^-β - 2αβa² (k + αa²)^(-β-1)
        let (k, alpha, beta, a) = (1.5, 0.2, 0.75, 1.3);
        let p = LrnParams { n: 1, k, alpha, beta };
        let x = Tensor::from_vec(&[1, 1, 1], vec![a]).unwrap();
        let gin = lrn_backward(&Tensor::full(&[1, 1, 1], 1.0), &x, &p).unwrap();
        let d: f64 = k + alpha * a * a;
        let want = d.powf(-beta) - 2.0 * alpha * beta * a * a * d.powf(-beta - 1.0);
        assert!((gin.data()[0] - want).abs() < 1e-14);
    }

    #[test]
    fn backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = LrnParams { n: 5, k: 1.0, alpha: 0.5, beta: 0.75 };
        let shape = [2, 2, 8];
        let x: Vec<f64> = (0..32).map(|_| rng.random_range(-1.5..1.5)).collect();
        let w: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gout = Tensor::from_vec(&shape, w.clone()).unwrap();
        let xt = Tensor::from_vec(&shape, x.clone()).unwrap();
        let analytic = lrn_backward(&gout, &xt, &p).unwrap();
        let numeric = numeric_grad(&x, |v| {
            let y = lrn_forward(&Tensor::from_vec(&shape, v.to_vec()).unwrap(), &p).unwrap();
            y.data().iter().zip(&w).map(|(a, b)| a * b).sum()
        });
        assert_close(analytic.data(), &numeric, 1e-5);
    }

    #[test]
    fn rejects_invalid_params() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2]);
        for p in [
            LrnParams { n: 4, ..Default::default() },
            LrnParams { n: 0, ..Default::default() },
            LrnParams { beta: 0.0, ..Default::default() },
            LrnParams { alpha: -1.0, ..Default::default() },
        ] {
            assert!(lrn_forward(&x, &p).is_err());
        }
    }
}
