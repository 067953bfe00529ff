//! Seeded synthetic scenes for tests and demonstrations: rectangular class
//! regions whose pixels are a per-class mean spectrum plus Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{HsiCube, LabelMap};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub classes: usize,
    pub bands: usize,
    /// Edge of each square class block.
    pub block: usize,
    /// Blocks per row; rows follow from the class count.
    pub blocks_per_row: usize,
    /// Standard deviation of the per-pixel noise; class means are drawn
    /// from a unit normal per band.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn new(classes: usize, bands: usize) -> Self {
        SyntheticScene {
            classes,
            bands,
            block: 12,
            blocks_per_row: 4,
            noise: 0.5,
            seed: 0,
        }
    }

    pub fn height(&self) -> usize {
        self.classes.div_ceil(self.blocks_per_row) * self.block
    }

    pub fn width(&self) -> usize {
        self.blocks_per_row.min(self.classes) * self.block
    }

    /// Cube and labels. Block `i` in row-major order holds class `i + 1`;
    /// cells of a trailing partial row are unlabeled noise.
    pub fn build(&self) -> Result<(HsiCube, LabelMap)> {
        if self.classes < 2 || self.bands == 0 || self.block == 0 || self.blocks_per_row == 0 {
            return Err(Error::Argument(format!("degenerate synthetic scene {self:?}")));
        }
        let unit = Normal::new(0.0, 1.0).expect("valid");
        let noise = Normal::new(0.0, self.noise)
            .map_err(|e| Error::Argument(format!("noise {}: {e}", self.noise)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let means: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| (0..self.bands).map(|_| unit.sample(&mut rng)).collect())
            .collect();
        let (h, w) = (self.height(), self.width());
        let mut labels = Vec::with_capacity(h * w);
        let mut values = Vec::with_capacity(h * w * self.bands);
        let background = vec![0.0; self.bands];
        for y in 0..h {
            for x in 0..w {
                let block = (y / self.block) * self.blocks_per_row + x / self.block;
                let label = if block < self.classes { block as u16 + 1 } else { 0 };
                labels.push(label);
                let mean = if label > 0 { &means[block] } else { &background };
                for &m in mean {
                    values.push((m + noise.sample(&mut rng)) as f32);
                }
            }
        }
        Ok((HsiCube::new(h, w, self.bands, values)?, LabelMap::new(h, w, self.classes, labels)?))
    }
}
