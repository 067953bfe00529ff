use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Inverted dropout: in training, entries are zeroed with probability
/// `rate` and survivors scaled by `1 / (1 - rate)`; evaluation is the
/// identity. Each instance owns its own seeded random stream.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    stream: u64,
    rng: ChaCha8Rng,
}

/// Mask sampled by one training forward pass; entries are `0` or
/// `1 / (1 - rate)`.
#[derive(Clone, Debug)]
pub struct DropoutMask<T>(pub Tensor<T>);

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Dropout {
    pub fn new(rate: f64, seed: u64, stream: u64) -> Result<Self> {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(Error::config(format!("dropout rate {rate} outside (0, 1)")));
        }
        Ok(Dropout {
            rate,
            stream,
            rng: stream_rng(seed, stream),
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Restarts this instance's stream from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = stream_rng(seed, self.stream);
    }

    pub fn forward<T: Real>(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
    ) -> (Tensor<T>, Option<DropoutMask<T>>) {
        if mode == Mode::Eval {
            return (x.clone(), None);
        }
        let keep = T::lit(1.0 / (1.0 - self.rate));
        let rate = self.rate;
        let rng = &mut self.rng;
        let mask = Tensor::from_fn(x.shape(), |_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        });
        let y = Tensor::from_vec(
            x.shape(),
            x.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect(),
        )
        .expect("mask matches input");
        (y, Some(DropoutMask(mask)))
    }

    pub fn backward<T: Real>(grad_out: &Tensor<T>, mask: Option<&DropoutMask<T>>) -> Result<Tensor<T>> {
        let Some(DropoutMask(mask)) = mask else {
            return Ok(grad_out.clone());
        };
        if !mask.same_shape(grad_out) {
            return Err(Error::shape("dropout mask does not match gradient"));
        }
        Tensor::from_vec(
            grad_out.shape(),
            grad_out
                .data()
                .iter()
                .zip(mask.data())
                .map(|(&g, &m)| g * m)
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_is_bitwise_identity() {
        let mut d = Dropout::new(0.5, 1, 0).unwrap();
        let x = Tensor::<f32>::from_fn(&[3, 3, 4], |i| (i as f32).cos());
        let (y, mask) = d.forward(&x, Mode::Eval);
        assert!(mask.is_none());
        assert_eq!(y, x);
    }

    #[test]
    fn eval_does_not_advance_stream() {
        let mut a = Dropout::new(0.5, 3, 1).unwrap();
        let mut b = a.clone();
        let x = Tensor::<f32>::full(&[4, 4, 4], 1.0);
        a.forward(&x, Mode::Eval);
        let (ya, _) = a.forward(&x, Mode::Train);
        let (yb, _) = b.forward(&x, Mode::Train);
        assert_eq!(ya, yb);
    }

    #[test]
    fn masks_reproducible_per_seed() {
        let x = Tensor::<f32>::full(&[8, 8, 8], 1.0);
        let (a, _) = Dropout::new(0.5, 42, 7).unwrap().forward(&x, Mode::Train);
        let (b, _) = Dropout::new(0.5, 42, 7).unwrap().forward(&x, Mode::Train);
        let (c, _) = Dropout::new(0.5, 42, 8).unwrap().forward(&x, Mode::Train);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn mean_preserved_in_expectation() {
        let x = Tensor::<f64>::full(&[100_000], 1.0);
        let (y, _) = Dropout::new(0.5, 2024, 0).unwrap().forward(&x, Mode::Train);
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn backward_applies_same_mask() {
        let mut d = Dropout::new(0.3, 5, 0).unwrap();
        let x = Tensor::<f64>::from_fn(&[2, 5, 3], |i| i as f64 + 1.0);
        let (y, mask) = d.forward(&x, Mode::Train);
        let g = Tensor::full(&[2, 5, 3], 1.0);
        let gin = Dropout::backward(&g, mask.as_ref()).unwrap();
        for ((yv, xv), gv) in y.data().iter().zip(x.data()).zip(gin.data()) {
            assert!((yv - xv * gv).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_must_be_open_unit_interval() {
        assert!(Dropout::new(0.0, 0, 0).is_err());
        assert!(Dropout::new(1.0, 0, 0).is_err());
        assert!(Dropout::new(f64::NAN, 0, 0).is_err());
    }
}
