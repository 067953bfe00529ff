use crate::error::{Error, Result};
use crate::layers::LrnParams;

/// Architecture hyperparameters of the contextual network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Spectral bands of the input cube.
    pub bands: usize,
    pub classes: usize,
    /// Kernels per convolutional layer.
    pub width: usize,
    pub residual_modules: usize,
    /// Odd, strictly increasing kernel sizes of the first-layer filter bank.
    pub bank_scales: Vec<usize>,
    pub lrn: LrnParams,
    pub dropout_rate: f64,
    /// Number of leading residual modules built without their shortcut
    /// (two plain conv+ReLU layers instead). Only used for ablations; such
    /// networks cannot be written to a weight file.
    pub plain_modules: usize,
}

impl NetworkConfig {
    pub fn new(bands: usize, classes: usize) -> Self {
        NetworkConfig {
            bands,
            classes,
            width: 128,
            residual_modules: 2,
            bank_scales: vec![1, 3, 5],
            lrn: LrnParams::default(),
            dropout_rate: 0.5,
            plain_modules: 0,
        }
    }

    pub fn indian_pines() -> Self {
        Self::new(220, 8)
    }

    pub fn salinas() -> Self {
        NetworkConfig {
            width: 192,
            ..Self::new(224, 16)
        }
    }

    pub fn pavia() -> Self {
        Self::new(103, 9)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 {
            return Err(Error::config("bands must be >= 1"));
        }
        if self.classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.width == 0 {
            return Err(Error::config("width must be >= 1"));
        }
        if self.bank_scales.is_empty() {
            return Err(Error::config("bank_scales must not be empty"));
        }
        if self.bank_scales.iter().any(|&s| s % 2 == 0) {
            return Err(Error::config(format!(
                "bank scales must be odd: {:?}",
                self.bank_scales
            )));
        }
        if self.bank_scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "bank scales must be strictly increasing: {:?}",
                self.bank_scales
            )));
        }
        if self.plain_modules > self.residual_modules {
            return Err(Error::config(format!(
                "{} plain modules but only {} residual modules",
                self.plain_modules, self.residual_modules
            )));
        }
        if !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0) {
            return Err(Error::config(format!(
                "dropout rate {} outside (0, 1)",
                self.dropout_rate
            )));
        }
        self.lrn.validate()
    }

    /// Largest bank kernel; also the side of a training patch.
    pub fn patch_size(&self) -> usize {
        *self.bank_scales.last().expect("validated config")
    }

    /// Receptive-field radius of the whole network.
    pub fn radius(&self) -> usize {
        self.patch_size() / 2
    }

    /// Max-pool window that brings branch `scale` back to the common extent.
    pub fn pool_window(&self, scale: usize) -> usize {
        self.patch_size() + 1 - scale
    }

    /// Weighted layers counting the whole filter bank as one.
    pub fn weighted_layers(&self) -> usize {
        2 + 2 * self.residual_modules + 3
    }

    /// Shapes of every parameter tensor in file order: per layer the
    /// `K × kh × kw × C` weight then the `K` bias.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let (b, w, c) = (self.bands, self.width, self.classes);
        let mut shapes = Vec::new();
        let mut layer = |k: usize, size: usize, cin: usize| {
            shapes.push(vec![k, size, size, cin]);
            shapes.push(vec![k]);
        };
        for &s in &self.bank_scales {
            layer(w, s, b);
        }
        layer(w, 1, self.bank_scales.len() * w);
        for _ in 0..2 * self.residual_modules + 2 {
            layer(w, 1, w);
        }
        layer(c, 1, w);
        shapes
    }
}

/// Total learnable parameters (weights and biases) of a network built from
/// `config`.
pub fn param_count(config: &NetworkConfig) -> usize {
    let (b, w, c) = (config.bands, config.width, config.classes);
    let bank_area: usize = config.bank_scales.iter().map(|s| s * s).sum();
    let scales = config.bank_scales.len();
    let bank = b * bank_area * w + scales * w;
    let fuse = scales * w * w + w;
    let square = (2 * config.residual_modules + 2) * (w * w + w);
    let classifier = w * c + c;
    bank + fuse + square + classifier
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [
            NetworkConfig::indian_pines(),
            NetworkConfig::salinas(),
            NetworkConfig::pavia(),
        ] {
            cfg.validate().unwrap();
            assert_eq!(cfg.weighted_layers(), 9);
            assert_eq!(cfg.patch_size(), 5);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = NetworkConfig::new(4, 3);
        let bad = [
            NetworkConfig { bands: 0, ..base.clone() },
            NetworkConfig { classes: 1, ..base.clone() },
            NetworkConfig { width: 0, ..base.clone() },
            NetworkConfig { bank_scales: vec![], ..base.clone() },
            NetworkConfig { bank_scales: vec![1, 4], ..base.clone() },
            NetworkConfig { bank_scales: vec![3, 1], ..base.clone() },
            NetworkConfig { plain_modules: 3, ..base.clone() },
            NetworkConfig { dropout_rate: 1.0, ..base.clone() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn tiny_count_by_hand() {
        let cfg = NetworkConfig {
            width: 1,
            residual_modules: 0,
            bank_scales: vec![1],
            ..NetworkConfig::new(1, 2)
        };
        // bank 1+1, fuse 1+1, fc7 1+1, fc8 1+1, classifier 2+2
        assert_eq!(param_count(&cfg), 12);
        let total: usize = cfg
            .param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum();
        assert_eq!(total, 12);
    }

    #[test]
    fn pool_windows_align_branches() {
        let cfg = NetworkConfig {
            bank_scales: vec![1, 3, 5, 7],
            ..NetworkConfig::new(3, 2)
        };
        let windows: Vec<_> = cfg.bank_scales.iter().map(|&s| cfg.pool_window(s)).collect();
        assert_eq!(windows, vec![7, 5, 3, 1]);
        assert_eq!(cfg.radius(), 3);
    }
}
