//! Hyperspectral cubes, label rasters and everything between the files on
//! disk and the training pool: readers and writers, per-class splits,
//! band standardization, patch extraction and mirror augmentation, plus
//! seeded synthetic scenes.

mod envi;
mod format;
mod patch;
mod presets;
mod split;
mod synthetic;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use envi::{read_envi_cube, read_envi_labels, DataType, EnviHeader, Interleave};
pub use format::{
    decode_hsic, decode_hsil, encode_hsic, encode_hsil, read_hsic, read_hsil, write_hsic,
    write_hsil, HEADER_BYTES,
};
pub use patch::{augment, extract_patch, PatchSample, PoolEntry, TrainingPool, Variant};
pub use presets::DatasetPreset;
pub use split::{sample_split, standardize, BandStats, SplitSpec};
pub use synthetic::SyntheticScene;

/// `H × W × B` reflectance cube.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    data: Tensor<f32>,
    pub wavelengths: Option<Vec<f64>>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f32>) -> Result<Self> {
        let data = Tensor::from_vec(&[height, width, bands], values)?;
        Self::from_tensor(data)
    }

    pub fn from_tensor(data: Tensor<f32>) -> Result<Self> {
        data.dims3()?;
        if !data.is_finite() {
            return Err(Error::NonFinite("cube values"));
        }
        Ok(HsiCube {
            data,
            wavelengths: None,
        })
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn bands(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.data
    }

    /// Spectral vector of flat pixel index `pixel`.
    pub fn spectrum(&self, pixel: usize) -> &[f32] {
        let b = self.bands();
        &self.data.data()[pixel * b..(pixel + 1) * b]
    }
}

/// Ground-truth or predicted class raster: 0 is unlabeled, `1..=classes`
/// are classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub labels: Vec<u16>,
    pub class_names: Vec<String>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("label map extents must be >= 1"));
        }
        if height.checked_mul(width) != Some(labels.len()) {
            return Err(Error::shape(format!(
                "{height}×{width} label map with {} labels",
                labels.len()
            )));
        }
        if let Some(&max) = labels.iter().max() {
            if max as usize > classes {
                return Err(Error::Argument(format!(
                    "label {max} exceeds declared class count {classes}"
                )));
            }
        }
        Ok(LabelMap {
            height,
            width,
            classes,
            labels,
            class_names: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    /// Pixels per label value `0..=classes`.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes + 1];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Keeps only the listed source classes, renumbered `1..=ids.len()` in
    /// list order; every other pixel becomes unlabeled.
    pub fn select(&self, ids: &[u16]) -> Result<LabelMap> {
        let mut lut = vec![0u16; self.classes + 1];
        for (i, &id) in ids.iter().enumerate() {
            if id == 0 || id as usize > self.classes {
                return Err(Error::Argument(format!(
                    "class id {id} not in 1..={}",
                    self.classes
                )));
            }
            lut[id as usize] = i as u16 + 1;
        }
        let labels = self.labels.iter().map(|&l| lut[l as usize]).collect();
        let mut out = LabelMap::new(self.height, self.width, ids.len(), labels)?;
        if !self.class_names.is_empty() {
            out.class_names = ids
                .iter()
                .map(|&id| self.class_names.get(id as usize - 1).cloned().unwrap_or_default())
                .collect();
        }
        Ok(out)
    }

    /// Checks that the raster covers the same pixels as `cube`.
    pub fn check_matches(&self, cube: &HsiCube) -> Result<()> {
        if (self.height, self.width) != (cube.height(), cube.width()) {
            return Err(Error::shape(format!(
                "label map {}×{} vs cube {}×{}",
                self.height,
                self.width,
                cube.height(),
                cube.width()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_above_class_count_rejected() {
        assert!(LabelMap::new(1, 3, 2, vec![0, 1, 3]).is_err());
        assert!(LabelMap::new(1, 3, 3, vec![0, 1, 3]).is_ok());
        assert!(LabelMap::new(2, 2, 3, vec![0; 3]).is_err());
    }

    #[test]
    fn select_renumbers_in_list_order() {
        let map = LabelMap::new(1, 6, 5, vec![0, 1, 2, 3, 4, 5]).unwrap();
        let sel = map.select(&[4, 2]).unwrap();
        assert_eq!(sel.labels, vec![0, 0, 2, 0, 1, 0]);
        assert_eq!(sel.classes, 2);
        assert!(map.select(&[6]).is_err());
    }

    #[test]
    fn cube_rejects_non_finite() {
        assert!(HsiCube::new(1, 1, 2, vec![0.0, f32::INFINITY]).is_err());
        let c = HsiCube::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(c.spectrum(1), &[3.0, 4.0]);
    }
}
