//! Square neighbourhood patches and their mirror augmentation.

use super::split::SplitSpec;
use super::HsiCube;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Mirror applied to a patch. Only the two spatial axes move; spectra stay
/// intact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Orig,
    /// Mirror across the horizontal axis: row `y` becomes row `s - 1 - y`.
    H,
    /// Mirror across the vertical axis: column `x` becomes `s - 1 - x`.
    V,
    /// Mirror across the main diagonal (transpose).
    D,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Orig, Variant::H, Variant::V, Variant::D];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Orig => "orig",
            Variant::H => "h",
            Variant::V => "v",
            Variant::D => "d",
        }
    }

    /// Source cell read for output cell `(y, x)` of an `s × s` patch.
    fn source(self, y: usize, x: usize, s: usize) -> (usize, usize) {
        match self {
            Variant::Orig => (y, x),
            Variant::H => (s - 1 - y, x),
            Variant::V => (y, s - 1 - x),
            Variant::D => (x, y),
        }
    }

    pub fn apply<T: Real>(self, patch: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w, b) = patch.dims3()?;
        if h != w {
            return Err(Error::shape(format!("mirroring needs a square patch, got {h}×{w}")));
        }
        if self == Variant::Orig {
            return Ok(patch.clone());
        }
        let src = patch.data();
        let mut out = Vec::with_capacity(src.len());
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = self.source(y, x, h);
                let at = (sy * w + sx) * b;
                out.extend_from_slice(&src[at..at + b]);
            }
        }
        Tensor::from_vec(patch.shape(), out)
    }
}

/// `size × size × B` neighbourhood centred on flat pixel index `pixel`;
/// cells outside the image are zero, matching the network's zero padding.
pub fn extract_patch(cube: &HsiCube, pixel: usize, size: usize) -> Result<Tensor<f32>> {
    if size.is_multiple_of(2) {
        return Err(Error::Argument(format!("patch size {size} is not odd")));
    }
    let (h, w) = (cube.height(), cube.width());
    if pixel >= h * w {
        return Err(Error::Argument(format!("pixel {pixel} outside {h}×{w} image")));
    }
    let r = (size / 2) as isize;
    let (y, x) = ((pixel / w) as isize, (pixel % w) as isize);
    cube.tensor().window(y - r, x - r, size, size)
}

/// The four training views of one patch, in [`Variant::ALL`] order.
pub fn augment<T: Real>(patch: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
    Ok([
        patch.clone(),
        Variant::H.apply(patch)?,
        Variant::V.apply(patch)?,
        Variant::D.apply(patch)?,
    ])
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    pub patch: Tensor<f32>,
    /// 0-based class index.
    pub label: usize,
    pub variant: Variant,
    pub pixel: usize,
}

/// One augmented pool member: which source patch and which mirror of it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolEntry {
    pub source: usize,
    pub variant: Variant,
}

/// Training patches of a split. Original patches are stored once; mirrors
/// are produced on demand.
#[derive(Clone, Debug)]
pub struct TrainingPool {
    patches: Vec<Tensor<f32>>,
    labels: Vec<usize>,
    pixels: Vec<usize>,
    entries: Vec<PoolEntry>,
    classes: usize,
}

impl TrainingPool {
    /// Builds the pool from the training half of `split`. With augmentation
    /// every pixel contributes four entries, otherwise one.
    pub fn new(cube: &HsiCube, split: &SplitSpec, size: usize, augmentation: bool) -> Result<Self> {
        let pairs = split.train_pairs();
        let mut patches = Vec::with_capacity(pairs.len());
        let mut labels = Vec::with_capacity(pairs.len());
        let mut pixels = Vec::with_capacity(pairs.len());
        for &(p, c) in &pairs {
            patches.push(extract_patch(cube, p, size)?);
            labels.push(c);
            pixels.push(p);
        }
        let variants: &[Variant] = if augmentation { &Variant::ALL } else { &Variant::ALL[..1] };
        let entries = (0..pairs.len())
            .flat_map(|source| variants.iter().map(move |&variant| PoolEntry { source, variant }))
            .collect();
        Ok(TrainingPool {
            patches,
            labels,
            pixels,
            entries,
            classes: split.classes(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Number of distinct source pixels.
    pub fn sources(&self) -> usize {
        self.patches.len()
    }

    pub fn entry(&self, i: usize) -> PoolEntry {
        self.entries[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[self.entries[i].source]
    }

    /// Patch of entry `i`, mirrored and converted to the working precision.
    pub fn patch<T: Real>(&self, i: usize) -> Tensor<T> {
        let e = self.entries[i];
        let src = &self.patches[e.source];
        e.variant.apply(src).expect("pool patches are square").cast()
    }

    pub fn sample(&self, i: usize) -> PatchSample {
        let e = self.entries[i];
        PatchSample {
            patch: self.patch(i),
            label: self.labels[e.source],
            variant: e.variant,
            pixel: self.pixels[e.source],
        }
    }

    /// Un-mirrored patches and labels, one per source pixel.
    pub fn originals(&self) -> (&[Tensor<f32>], &[usize]) {
        (&self.patches, &self.labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_split, LabelMap};

    fn ramp(h: usize, w: usize, b: usize) -> HsiCube {
        let values = (0..h * w * b).map(|i| i as f32 + 1.0).collect();
        HsiCube::new(h, w, b, values).unwrap()
    }

    #[test]
    fn interior_patch_is_a_sub_block() {
        let cube = ramp(7, 6, 2);
        let p = extract_patch(&cube, 3 * 6 + 2, 5).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                for b in 0..2 {
                    assert_eq!(p.at3(y, x, b), cube.tensor().at3(y + 1, x, b));
                }
            }
        }
    }

    #[test]
    fn corner_patch_zero_count() {
        let cube = ramp(6, 6, 1);
        let p = extract_patch(&cube, 0, 5).unwrap();
        let zeros = p.data().iter().filter(|&&v| v == 0.0).count();
        let expected = (0..25).filter(|i| i / 5 < 2 || i % 5 < 2).count();
        assert_eq!(expected, 16);
        assert_eq!(zeros, expected);
    }

    #[test]
    fn patch_center_is_source_pixel() {
        let cube = ramp(4, 3, 3);
        for pixel in 0..12 {
            let p = extract_patch(&cube, pixel, 5).unwrap();
            let centre: Vec<f32> = (0..3).map(|b| p.at3(2, 2, b)).collect();
            assert_eq!(centre, cube.spectrum(pixel));
        }
        assert!(extract_patch(&cube, 12, 5).is_err());
        assert!(extract_patch(&cube, 0, 4).is_err());
    }

    #[test]
    fn mirrors_are_involutions_and_d_is_transpose() {
        let cube = ramp(5, 5, 2);
        let p = extract_patch(&cube, 12, 5).unwrap();
        for v in Variant::ALL {
            assert_eq!(v.apply(&v.apply(&p).unwrap()).unwrap(), p, "{}", v.tag());
        }
        let d = Variant::D.apply(&p).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(d.at3(y, x, 1), p.at3(x, y, 1));
            }
        }
        let h = Variant::H.apply(&p).unwrap();
        assert_eq!(h.at3(0, 3, 0), p.at3(4, 3, 0));
    }

    #[test]
    fn symmetric_patch_has_identical_views() {
        let p = Tensor::<f64>::from_fn(&[5, 5, 1], |i| {
            let (y, x) = ((i / 5) as f64 - 2.0, (i % 5) as f64 - 2.0);
            y * y + x * x
        });
        for view in augment(&p).unwrap() {
            assert_eq!(view, p);
        }
    }

    #[test]
    fn augmentation_preserves_spectra_multiset() {
        let cube = ramp(6, 5, 3);
        let p = extract_patch(&cube, 7, 5).unwrap();
        let key = |t: &Tensor<f32>| {
            let mut v: Vec<Vec<u32>> = t.data().chunks(3).map(|c| c.iter().map(|f| f.to_bits()).collect()).collect();
            v.sort();
            v
        };
        for view in augment(&p).unwrap() {
            assert_eq!(key(&view), key(&p));
        }
    }

    #[test]
    fn pool_is_four_times_training_set() {
        let cube = ramp(4, 4, 2);
        let labels = LabelMap::new(4, 4, 2, (0..16).map(|i| (i % 3) as u16).collect()).unwrap();
        let split = sample_split(&labels, 3, 5).unwrap();
        let pool = TrainingPool::new(&cube, &split, 5, true).unwrap();
        assert_eq!(pool.len(), 4 * split.train_len());
        assert_eq!(TrainingPool::new(&cube, &split, 5, false).unwrap().len(), split.train_len());
        for i in 0..pool.len() {
            let s = pool.sample(i);
            assert_eq!(labels.labels[s.pixel] as usize, s.label + 1);
            assert_eq!(s.patch.at3(2, 2, 0), cube.spectrum(s.pixel)[0]);
        }
    }
}
