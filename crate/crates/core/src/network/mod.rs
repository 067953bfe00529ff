//! The contextual fully-convolutional network: a multi-scale filter bank,
//! a 1×1 fusion layer, residual modules and a three-layer 1×1 classifier.
//!
//! The same parameters serve two execution modes. Patch mode evaluates a
//! `p × p` neighbourhood (p = largest bank kernel) without padding and
//! yields the logits of its center pixel. Image mode zero-pads the cube by
//! the network radius and yields a logit for every pixel. Both modes feed
//! identical operands to every dot product, so they agree bitwise.

mod config;
mod weights;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::layers::{
    lrn_backward, lrn_forward, relu_backward, relu_forward, softmax_xent, Conv, ConvCache,
    Dropout, DropoutMask, Mode, Param, Residual, ResidualCache,
};
use crate::tensor::{
    concat_channels, maxpool2d_backward, maxpool2d_forward, split_channels, PoolIndex, Real,
    Tensor,
};

pub use config::{param_count, NetworkConfig};
pub use weights::{load_weights, read_weights, save_weights, write_weights};

const STD_WIDE: f64 = 0.01;
const STD_NARROW: f64 = 0.005;
const DROPOUT_STREAMS: [u64; 2] = [7, 8];

#[derive(Clone, Debug)]
pub struct ContextualNet<T> {
    config: NetworkConfig,
    bank: Vec<Conv<T>>,
    fuse: Conv<T>,
    modules: Vec<Residual<T>>,
    fc: [Conv<T>; 2],
    classifier: Conv<T>,
    dropout: [Dropout; 2],
}

struct BranchCache<T> {
    conv: ConvCache<T>,
    conv_shape: [usize; 3],
    pool: Option<PoolIndex>,
}

/// One hidden classifier layer: conv input, pre-activation, dropout mask.
type FcCache<T> = (ConvCache<T>, Tensor<T>, Option<DropoutMask<T>>);

/// Everything a training forward pass over a batch of patches keeps for
/// the backward pass.
pub struct Tape<T> {
    batch: usize,
    bank: Vec<Vec<BranchCache<T>>>,
    bank_pre: Tensor<T>,
    bank_act: Tensor<T>,
    fuse: ConvCache<T>,
    fuse_pre: Tensor<T>,
    fuse_act: Tensor<T>,
    modules: Vec<ResidualCache<T>>,
    fc: Vec<FcCache<T>>,
    classifier: ConvCache<T>,
}

impl<T: Real> Tape<T> {
    /// Sign pattern of every ReLU input and the argmax of every pool
    /// window. Two evaluations with the same signature lie on the same
    /// smooth piece of the network function.
    pub fn signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for sample in &self.bank {
            for branch in sample {
                if let Some(pool) = &branch.pool {
                    sig.extend_from_slice(&pool.argmax);
                }
            }
        }
        let signs = |t: &Tensor<T>, sig: &mut Vec<usize>| {
            sig.extend(t.data().iter().map(|&v| (v > T::zero()) as usize));
        };
        signs(&self.bank_pre, &mut sig);
        signs(&self.fuse_pre, &mut sig);
        for m in &self.modules {
            sig.extend(m.activity().map(usize::from));
        }
        for (_, pre, _) in &self.fc {
            signs(pre, &mut sig);
        }
        sig
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn gaussian<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
}

fn init_conv<T: Real>(
    rng: &mut ChaCha8Rng,
    kernels: usize,
    size: usize,
    cin: usize,
    std: f64,
    bias: f64,
    pad: usize,
) -> Result<Conv<T>> {
    let w = gaussian(rng, &[kernels, size, size, cin], std);
    Conv::new(w, Tensor::full(&[kernels], T::lit(bias)), pad)
}

/// Weight initialization scheme. Both draw from zero-mean Gaussians in the
/// same order; the classifier is N(0, 0.01²) with zero bias in both.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Init {
    /// Bank and fusion weights N(0, 0.01²), all other hidden weights
    /// N(0, 0.005²), hidden biases 1.
    #[default]
    Paper,
    /// Hidden weights N(0, 2 / fan_in), hidden biases 0. Keeps the
    /// activation scale roughly constant with depth, so the logits depend
    /// on the input from the first iteration.
    Scaled,
}

impl Init {
    /// Weight std and bias of a hidden layer.
    fn hidden(self, paper_std: f64, fan_in: usize) -> (f64, f64) {
        match self {
            Init::Paper => (paper_std, 1.0),
            Init::Scaled => ((2.0 / fan_in as f64).sqrt(), 0.0),
        }
    }
}

impl std::str::FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Init::Paper),
            "scaled" => Ok(Init::Scaled),
            other => Err(Error::config(format!("unknown init {other:?} (paper or scaled)"))),
        }
    }
}

impl<T: Real> ContextualNet<T> {
    /// Builds a freshly initialized network with [`Init::Paper`]: bank,
    /// fusion and classifier weights are drawn from N(0, 0.01²), all other
    /// weights from N(0, 0.005²); biases are 1 except the classifier's,
    /// which are 0.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        Self::build_with(config, seed, Init::Paper)
    }

    pub fn build_with(config: &NetworkConfig, seed: u64, init: Init) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, w, c) = (config.bands, config.width, config.classes);
        let hidden = |rng: &mut ChaCha8Rng, size: usize, cin: usize, paper_std: f64| {
            let (std, bias) = init.hidden(paper_std, size * size * cin);
            init_conv(rng, w, size, cin, std, bias, 0)
        };
        let bank = config
            .bank_scales
            .iter()
            .map(|&s| hidden(&mut rng, s, b, STD_WIDE))
            .collect::<Result<Vec<_>>>()?;
        let fuse = hidden(&mut rng, 1, config.bank_scales.len() * w, STD_WIDE)?;
        let mut modules = Vec::with_capacity(config.residual_modules);
        for m in 0..config.residual_modules {
            let a = hidden(&mut rng, 1, w, STD_NARROW)?;
            let bconv = hidden(&mut rng, 1, w, STD_NARROW)?;
            modules.push(Residual::new(a, bconv, m >= config.plain_modules)?);
        }
        let fc = [
            hidden(&mut rng, 1, w, STD_NARROW)?,
            hidden(&mut rng, 1, w, STD_NARROW)?,
        ];
        let classifier = init_conv(&mut rng, c, 1, w, STD_WIDE, 0.0, 0)?;
        let dropout = [
            Dropout::new(config.dropout_rate, seed, DROPOUT_STREAMS[0])?,
            Dropout::new(config.dropout_rate, seed, DROPOUT_STREAMS[1])?,
        ];
        Ok(ContextualNet {
            config: config.clone(),
            bank,
            fuse,
            modules,
            fc,
            classifier,
            dropout,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Parameters in file order (each layer's weight, then its bias).
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for conv in &self.bank {
            out.extend(conv.params());
        }
        out.extend(self.fuse.params());
        for m in &self.modules {
            out.extend(m.params());
        }
        for conv in &self.fc {
            out.extend(conv.params());
        }
        out.extend(self.classifier.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for conv in &mut self.bank {
            out.extend(conv.params_mut());
        }
        out.extend(self.fuse.params_mut());
        for m in &mut self.modules {
            out.extend(m.params_mut());
        }
        for conv in &mut self.fc {
            out.extend(conv.params_mut());
        }
        out.extend(self.classifier.params_mut());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Number of weighted layers, counting the filter bank as one.
    pub fn weighted_layers(&self) -> usize {
        2 + 2 * self.modules.len() + self.fc.len() + 1
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Restarts the dropout streams from `seed`.
    pub fn reseed_dropout(&mut self, seed: u64) {
        for d in &mut self.dropout {
            d.reseed(seed);
        }
    }

    fn check_bands(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let (h, w, b) = x.dims3()?;
        if b != self.config.bands {
            return Err(Error::shape(format!(
                "network expects {} bands, input has {b}",
                self.config.bands
            )));
        }
        Ok((h, w))
    }

    /// Filter-bank pre-activation (before ReLU) of an input that already
    /// carries its `radius`-wide border: `(H + 2r) × (W + 2r) × B` in,
    /// `H × W × (|scales| · width)` out.
    fn bank_pre(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let parts = self
            .config
            .bank_scales
            .iter()
            .zip(&self.bank)
            .map(|(&s, conv)| {
                let y = conv.forward(x)?;
                match self.config.pool_window(s) {
                    1 => Ok(y),
                    win => Ok(maxpool2d_forward(&y, win)?.0),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        concat_channels(&parts)
    }

    fn bank_pre_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<BranchCache<T>>)> {
        let mut parts = Vec::with_capacity(self.bank.len());
        let mut caches = Vec::with_capacity(self.bank.len());
        for (&s, conv) in self.config.bank_scales.iter().zip(&self.bank) {
            let (y, cache) = conv.forward_cached(x)?;
            let conv_shape = y.dims3().map(|(h, w, c)| [h, w, c])?;
            let (y, pool) = match self.config.pool_window(s) {
                1 => (y, None),
                win => {
                    let (p, idx) = maxpool2d_forward(&y, win)?;
                    (p, Some(idx))
                }
            };
            parts.push(y);
            caches.push(BranchCache {
                conv: cache,
                conv_shape,
                pool,
            });
        }
        Ok((concat_channels(&parts)?, caches))
    }

    /// Everything after the filter bank, evaluation mode. Every layer here
    /// acts on each spatial position independently.
    fn trunk_eval(&self, bank_pre: &Tensor<T>) -> Result<Tensor<T>> {
        let x = lrn_forward(&relu_forward(bank_pre), &self.config.lrn)?;
        let mut x = lrn_forward(&relu_forward(&self.fuse.forward(&x)?), &self.config.lrn)?;
        for m in &self.modules {
            x = m.forward(&x)?;
        }
        for conv in &self.fc {
            x = relu_forward(&conv.forward(&x)?);
        }
        self.classifier.forward(&x)
    }

    /// Logits of the center pixel of a `p × p × B` patch.
    pub fn forward_patch(&self, patch: &Tensor<T>) -> Result<Vec<T>> {
        let (h, w) = self.check_bands(patch)?;
        let p = self.config.patch_size();
        if (h, w) != (p, p) {
            return Err(Error::shape(format!("expected a {p}×{p} patch, got {h}×{w}")));
        }
        Ok(self.trunk_eval(&self.bank_pre(patch)?)?.into_data())
    }

    /// Logit map `H × W × C` of a whole cube in evaluation mode.
    ///
    /// With `tile = Some(t)` the image is processed in `t × t` blocks, each
    /// read with a border of the network radius; the result is bitwise
    /// identical to the untiled evaluation.
    pub fn forward_image(&self, cube: &Tensor<T>, tile: Option<usize>) -> Result<Tensor<T>> {
        let (h, w) = self.check_bands(cube)?;
        let r = self.config.radius();
        let t = match tile {
            None => return self.trunk_eval(&self.bank_pre(&cube.pad_spatial(r)?)?),
            Some(0) => return Err(Error::Argument("tile size must be >= 1".into())),
            Some(t) => t,
        };
        let c = self.config.classes;
        let mut out = Tensor::zeros(&[h, w, c]);
        for y0 in (0..h).step_by(t) {
            let th = t.min(h - y0);
            for x0 in (0..w).step_by(t) {
                let tw = t.min(w - x0);
                let window = cube.window(
                    y0 as isize - r as isize,
                    x0 as isize - r as isize,
                    th + 2 * r,
                    tw + 2 * r,
                )?;
                let logits = self.trunk_eval(&self.bank_pre(&window)?)?;
                let dst = out.data_mut();
                for row in 0..th {
                    let s = row * tw * c;
                    let d = ((y0 + row) * w + x0) * c;
                    dst[d..d + tw * c].copy_from_slice(&logits.data()[s..s + tw * c]);
                }
            }
        }
        Ok(out)
    }

    /// Per-pixel argmax of [`forward_image`](Self::forward_image), as 1-based
    /// class labels. Ties go to the lowest class.
    pub fn predict(&self, cube: &Tensor<T>, tile: Option<usize>) -> Result<LabelMap> {
        let logits = self.forward_image(cube, tile)?;
        let (h, w, c) = logits.dims3()?;
        let labels = logits
            .data()
            .chunks_exact(c)
            .map(|l| argmax(l) as u16 + 1)
            .collect();
        LabelMap::new(h, w, c, labels)
    }

    /// Training-mode forward pass over a batch of patches. Returns the
    /// `N × 1 × C` center logits and the tape for [`backward`](Self::backward).
    pub fn forward_batch(&mut self, patches: &[Tensor<T>], mode: Mode) -> Result<(Tensor<T>, Tape<T>)> {
        if patches.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let p = self.config.patch_size();
        let mut rows = Vec::with_capacity(patches.len());
        let mut bank = Vec::with_capacity(patches.len());
        for patch in patches {
            let (h, w) = self.check_bands(patch)?;
            if (h, w) != (p, p) {
                return Err(Error::shape(format!("expected a {p}×{p} patch, got {h}×{w}")));
            }
            let (pre, caches) = self.bank_pre_cached(patch)?;
            rows.push(pre);
            bank.push(caches);
        }
        let n = patches.len();
        let feat = self.config.bank_scales.len() * self.config.width;
        // stack the 1×1 bank outputs into an N×1 column; the trunk is pointwise
        let bank_pre = Tensor::from_vec(
            &[n, 1, feat],
            rows.into_iter().flat_map(Tensor::into_data).collect(),
        )?;
        let bank_act = relu_forward(&bank_pre);
        let x = lrn_forward(&bank_act, &self.config.lrn)?;
        let (fuse_pre, fuse) = self.fuse.forward_cached(&x)?;
        let fuse_act = relu_forward(&fuse_pre);
        let mut x = lrn_forward(&fuse_act, &self.config.lrn)?;
        let mut modules = Vec::with_capacity(self.modules.len());
        for m in &self.modules {
            let (y, cache) = m.forward_cached(&x)?;
            modules.push(cache);
            x = y;
        }
        let mut fc = Vec::with_capacity(2);
        for (conv, drop) in self.fc.iter().zip(self.dropout.iter_mut()) {
            let (pre, cache) = conv.forward_cached(&x)?;
            let (y, mask) = drop.forward(&relu_forward(&pre), mode);
            fc.push((cache, pre, mask));
            x = y;
        }
        let (logits, classifier) = self.classifier.forward_cached(&x)?;
        Ok((
            logits,
            Tape {
                batch: n,
                bank,
                bank_pre,
                bank_act,
                fuse,
                fuse_pre,
                fuse_act,
                modules,
                fc,
                classifier,
            },
        ))
    }

    /// Back-propagates `grad_logits` (`N × 1 × C`) through the tape,
    /// accumulating into every parameter gradient.
    pub fn backward(&mut self, tape: &Tape<T>, grad_logits: &Tensor<T>) -> Result<()> {
        let need = |g: Option<Tensor<T>>| g.expect("input gradient requested");
        let mut g = need(self.classifier.backward(&tape.classifier, grad_logits, true)?);
        for (i, (cache, pre, mask)) in tape.fc.iter().enumerate().rev() {
            let gd = Dropout::backward(&g, mask.as_ref())?;
            let gp = relu_backward(&gd, pre)?;
            g = need(self.fc[i].backward(cache, &gp, true)?);
        }
        for (m, cache) in self.modules.iter_mut().zip(&tape.modules).rev() {
            g = m.backward(cache, &g)?;
        }
        let g = lrn_backward(&g, &tape.fuse_act, &self.config.lrn)?;
        let g = relu_backward(&g, &tape.fuse_pre)?;
        let g = need(self.fuse.backward(&tape.fuse, &g, true)?);
        let g = lrn_backward(&g, &tape.bank_act, &self.config.lrn)?;
        let g = relu_backward(&g, &tape.bank_pre)?;

        let w = self.config.width;
        let feat = self.config.bank_scales.len() * w;
        let widths = vec![w; self.bank.len()];
        for (row, caches) in g.data().chunks_exact(feat).zip(&tape.bank) {
            let row = Tensor::from_vec(&[1, 1, feat], row.to_vec())?;
            for ((part, cache), conv) in split_channels(&row, &widths)?
                .into_iter()
                .zip(caches)
                .zip(self.bank.iter_mut())
            {
                let g_conv = match &cache.pool {
                    Some(idx) => maxpool2d_backward(&part, idx, &cache.conv_shape)?,
                    None => part,
                };
                conv.backward(&cache.conv, &g_conv, false)?;
            }
        }
        Ok(())
    }

    /// Forward and backward over one batch with the mean center-pixel
    /// cross-entropy; returns the mean loss. Gradients accumulate, so call
    /// [`zero_grad`](Self::zero_grad) first. A non-finite loss is returned
    /// without back-propagating.
    pub fn accumulate_gradients(
        &mut self,
        patches: &[Tensor<T>],
        labels: &[usize],
        mode: Mode,
    ) -> Result<f64> {
        if patches.len() != labels.len() {
            return Err(Error::Argument(format!(
                "{} patches but {} labels",
                patches.len(),
                labels.len()
            )));
        }
        let (logits, tape) = self.forward_batch(patches, mode)?;
        let c = self.config.classes;
        let n = labels.len();
        let scale = T::lit(1.0 / n as f64);
        let mut grad = Vec::with_capacity(n * c);
        let mut total = 0.0;
        for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
            let (loss, g) = softmax_xent(row, label)?;
            total += loss.as_f64();
            grad.extend(g.into_iter().map(|v| v * scale));
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Ok(mean);
        }
        self.backward(&tape, &Tensor::from_vec(&[n, 1, c], grad)?)?;
        Ok(mean)
    }

    /// Mean center-pixel loss of a batch without touching gradients or
    /// dropout state.
    pub fn batch_loss(&self, patches: &[Tensor<T>], labels: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for (patch, &label) in patches.iter().zip(labels) {
            total += softmax_xent(&self.forward_patch(patch)?, label)?.0.as_f64();
        }
        Ok(total / patches.len().max(1) as f64)
    }

    pub(crate) fn from_parts(config: NetworkConfig, mut tensors: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::config(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (i, (t, s)) in tensors.iter().zip(&shapes).enumerate() {
            if t.shape() != &s[..] {
                return Err(Error::config(format!(
                    "parameter {i} has shape {:?}, config implies {s:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.drain(..);
        let mut next = || -> Result<Conv<T>> {
            let w = it.next().expect("count checked");
            let b = it.next().expect("count checked");
            Conv::new(w, b, 0)
        };
        let bank = config
            .bank_scales
            .iter()
            .map(|_| next())
            .collect::<Result<Vec<_>>>()?;
        let fuse = next()?;
        let mut modules = Vec::new();
        for m in 0..config.residual_modules {
            let (a, b) = (next()?, next()?);
            modules.push(Residual::new(a, b, m >= config.plain_modules)?);
        }
        let fc = [next()?, next()?];
        let classifier = next()?;
        let dropout = [
            Dropout::new(config.dropout_rate, 0, DROPOUT_STREAMS[0])?,
            Dropout::new(config.dropout_rate, 0, DROPOUT_STREAMS[1])?,
        ];
        Ok(ContextualNet {
            config,
            bank,
            fuse,
            modules,
            fc,
            classifier,
            dropout,
        })
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Real>(&self) -> ContextualNet<U> {
        let tensors = self.params().iter().map(|p| p.value.cast()).collect();
        ContextualNet::from_parts(self.config.clone(), tensors).expect("shapes preserved")
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_config() -> NetworkConfig {
        NetworkConfig {
            width: 4,
            ..NetworkConfig::new(6, 3)
        }
    }

    fn random_cube<T: Real>(seed: u64, h: usize, w: usize, b: usize) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[h, w, b], |_| T::lit(rng.random_range(-1.0..1.0)))
    }

    /// Larger weights than the default init so the logits depend visibly on
    /// the input.
    fn perturbed<T: Real>(config: &NetworkConfig, seed: u64) -> ContextualNet<T> {
        let mut net = ContextualNet::<T>::build(config, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for p in net.params_mut() {
            for v in p.value.data_mut() {
                *v = T::lit(rng.random_range(-0.5..0.5));
            }
        }
        net
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = small_config();
        let a = ContextualNet::<f32>::build(&cfg, 9).unwrap();
        let b = ContextualNet::<f32>::build(&cfg, 9).unwrap();
        let c = ContextualNet::<f32>::build(&cfg, 10).unwrap();
        let bits = |n: &ContextualNet<f32>| {
            n.params()
                .iter()
                .flat_map(|p| p.value.data().iter().map(|v| v.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn layer_counts() {
        let cfg = NetworkConfig::indian_pines();
        let net = ContextualNet::<f32>::build(&NetworkConfig { width: 8, ..cfg.clone() }, 0).unwrap();
        assert_eq!(net.weighted_layers(), 9);
        let one = NetworkConfig {
            width: 8,
            residual_modules: 1,
            ..cfg
        };
        assert_eq!(ContextualNet::<f32>::build(&one, 0).unwrap().weighted_layers(), 7);
    }

    #[test]
    fn init_statistics() {
        let cfg = NetworkConfig {
            width: 64,
            ..NetworkConfig::new(40, 5)
        };
        let net = ContextualNet::<f64>::build(&cfg, 1).unwrap();
        let std = |t: &Tensor<f64>| {
            let n = t.len() as f64;
            (t.data().iter().map(|v| v * v).sum::<f64>() / n).sqrt()
        };
        let params = net.params();
        // bank 1x1 weights, module weights, classifier weights
        assert!((std(&params[0].value) - 0.01).abs() < 0.001);
        assert!((std(&net.modules[0].conv_a.weight.value) - 0.005).abs() < 0.0005);
        assert!((std(&net.classifier.weight.value) - 0.01).abs() < 0.002);
        assert!(net.fc[1].bias.value.data().iter().all(|&b| b == 1.0));
        assert!(net.classifier.bias.value.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn scaled_init_statistics() {
        let cfg = NetworkConfig {
            width: 64,
            ..NetworkConfig::new(40, 5)
        };
        let net = ContextualNet::<f64>::build_with(&cfg, 1, Init::Scaled).unwrap();
        let std = |t: &Tensor<f64>| (t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
        let fuse_target = (2.0f64 / (3.0 * 64.0)).sqrt();
        assert!((std(&net.fuse.weight.value) / fuse_target - 1.0).abs() < 0.05);
        let bank5 = (2.0f64 / (25.0 * 40.0)).sqrt();
        assert!((std(&net.bank[2].weight.value) / bank5 - 1.0).abs() < 0.05);
        assert!((std(&net.classifier.weight.value) - 0.01).abs() < 0.002);
        for p in net.params() {
            if p.value.shape().len() == 1 {
                assert!(p.value.data().iter().all(|&b| b == 0.0));
            }
        }
        assert!("scaled".parse::<Init>().unwrap() == Init::Scaled);
        assert!("he".parse::<Init>().is_err());
    }

    #[test]
    fn fresh_net_is_near_uniform() {
        let cfg = NetworkConfig {
            width: 16,
            ..NetworkConfig::new(10, 4)
        };
        let net = ContextualNet::<f32>::build(&cfg, 3).unwrap();
        let patch = random_cube::<f32>(1, 5, 5, 10);
        let probs = crate::layers::softmax(&net.forward_patch(&patch).unwrap());
        for p in probs {
            assert!((p - 0.25).abs() < 0.02, "{p}");
        }
    }

    #[test]
    fn patch_mode_is_pure() {
        let net = perturbed::<f32>(&small_config(), 2);
        let zeros = Tensor::zeros(&[5, 5, 6]);
        assert_eq!(
            net.forward_patch(&zeros).unwrap(),
            net.forward_patch(&zeros.clone()).unwrap()
        );
    }

    #[test]
    fn image_center_equals_patch() {
        let net = perturbed::<f64>(&small_config(), 4);
        let cube = random_cube::<f64>(5, 5, 5, 6);
        let map = net.forward_image(&cube, None).unwrap();
        assert_eq!(map.shape(), &[5, 5, 3]);
        let center = net.forward_patch(&cube).unwrap();
        for (k, v) in center.iter().enumerate() {
            assert_eq!(map.at3(2, 2, k).to_bits(), v.to_bits());
        }
    }

    #[test]
    fn tiled_equals_untiled() {
        let net = perturbed::<f32>(&small_config(), 6);
        let cube = random_cube::<f32>(7, 13, 9, 6);
        let whole = net.forward_image(&cube, None).unwrap();
        for t in [1, 4, 5, 64] {
            assert_eq!(net.forward_image(&cube, Some(t)).unwrap(), whole, "tile {t}");
        }
    }

    #[test]
    fn band_mismatch_rejected() {
        let net = ContextualNet::<f32>::build(&small_config(), 0).unwrap();
        assert!(net.forward_image(&Tensor::zeros(&[4, 4, 5]), None).is_err());
        assert!(net.forward_patch(&Tensor::zeros(&[3, 3, 6])).is_err());
    }

    #[test]
    fn predict_ties_to_first_class() {
        assert_eq!(argmax(&[1.0f32, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.0f32, 2.0, 2.0]), 1);
        // zero classifier weights and biases give all-equal logits
        let mut net = ContextualNet::<f32>::build(&small_config(), 0).unwrap();
        net.classifier.weight.value.fill(0.0);
        let pred = net.predict(&random_cube(1, 3, 4, 6), None).unwrap();
        assert!(pred.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn cast_round_trip() {
        let net = ContextualNet::<f32>::build(&small_config(), 8).unwrap();
        let back: ContextualNet<f32> = net.cast::<f64>().cast();
        for (a, b) in net.params().iter().zip(back.params()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn batch_forward_matches_patch_mode() {
        let mut net = perturbed::<f64>(&small_config(), 12);
        let patches: Vec<_> = (0..3).map(|s| random_cube::<f64>(s, 5, 5, 6)).collect();
        let (logits, _) = net.forward_batch(&patches, Mode::Eval).unwrap();
        for (i, p) in patches.iter().enumerate() {
            let single = net.forward_patch(p).unwrap();
            assert_eq!(&logits.data()[i * 3..(i + 1) * 3], &single[..]);
        }
    }

    fn batch_loss_and_signature(
        net: &mut ContextualNet<f64>,
        patches: &[Tensor<f64>],
        labels: &[usize],
        mode: Mode,
    ) -> (f64, Vec<usize>) {
        net.reseed_dropout(77);
        let (logits, tape) = net.forward_batch(patches, mode).unwrap();
        let loss = logits
            .data()
            .chunks_exact(net.config.classes)
            .zip(labels)
            .map(|(row, &l)| softmax_xent(row, l).unwrap().0)
            .sum::<f64>()
            / labels.len() as f64;
        (loss, tape.signature())
    }

    fn end_to_end_gradcheck(mode: Mode, shortcut_free: usize) {
        use crate::layers::gradcheck::{rel_err, STEP};
        let cfg = NetworkConfig {
            plain_modules: shortcut_free,
            ..small_config()
        };
        let mut net = perturbed::<f64>(&cfg, 21);
        let patches: Vec<_> = (0..3).map(|s| random_cube::<f64>(s + 40, 5, 5, 6)).collect();
        let labels = [0, 2, 1];
        net.zero_grad();
        net.reseed_dropout(77);
        net.accumulate_gradients(&patches, &labels, mode).unwrap();
        let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.data().to_vec()).collect();
        let (_, base_sig) = batch_loss_and_signature(&mut net, &patches, &labels, mode);
        let (mut checked, mut skipped) = (0, 0);
        for (pi, grads) in analytic.iter().enumerate() {
            for (j, &a) in grads.iter().enumerate() {
                let orig = net.params()[pi].value.data()[j];
                let mut eval = |v: f64| {
                    net.params_mut()[pi].value.data_mut()[j] = v;
                    batch_loss_and_signature(&mut net, &patches, &labels, mode)
                };
                let (up, sig_up) = eval(orig + STEP);
                let (down, sig_down) = eval(orig - STEP);
                net.params_mut()[pi].value.data_mut()[j] = orig;
                if sig_up != base_sig || sig_down != base_sig {
                    skipped += 1;
                    continue;
                }
                let n = (up - down) / (2.0 * STEP);
                let e = rel_err(a, n, 1e-3);
                assert!(e <= 1e-4, "param {pi}[{j}]: analytic {a} numeric {n} rel {e}");
                checked += 1;
            }
        }
        assert!(checked > 10 * skipped.max(1), "checked {checked}, skipped {skipped}");
    }

    #[test]
    fn end_to_end_gradient_eval_mode() {
        end_to_end_gradcheck(Mode::Eval, 0);
    }

    #[test]
    fn end_to_end_gradient_with_fixed_dropout_masks() {
        end_to_end_gradcheck(Mode::Train, 0);
    }

    #[test]
    fn end_to_end_gradient_plain_module() {
        end_to_end_gradcheck(Mode::Eval, 1);
    }
}
