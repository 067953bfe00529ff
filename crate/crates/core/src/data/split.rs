//! Seeded per-class train/test partitioning and band standardization.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HsiCube, LabelMap};
use crate::error::{Error, Result};

/// Per-class train/test pixel lists. Class `i` (0-based) is label `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub seed: u64,
    pub n_train_per_class: usize,
    /// Flat pixel indices per class, ascending.
    pub train: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

impl SplitSpec {
    pub fn classes(&self) -> usize {
        self.train.len()
    }

    /// `(pixel, class)` pairs of the training split, grouped by class.
    pub fn train_pairs(&self) -> Vec<(usize, usize)> {
        pairs(&self.train)
    }

    pub fn test_pairs(&self) -> Vec<(usize, usize)> {
        pairs(&self.test)
    }

    pub fn train_pixels(&self) -> Vec<usize> {
        self.train.iter().flatten().copied().collect()
    }

    pub fn test_pixels(&self) -> Vec<usize> {
        self.test.iter().flatten().copied().collect()
    }

    pub fn train_len(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    pub fn test_len(&self) -> usize {
        self.test.iter().map(Vec::len).sum()
    }
}

fn pairs(lists: &[Vec<usize>]) -> Vec<(usize, usize)> {
    lists
        .iter()
        .enumerate()
        .flat_map(|(c, px)| px.iter().map(move |&p| (p, c)))
        .collect()
}

/// Draws `min(n_per_class, class size)` training pixels uniformly without
/// replacement from every class `1..=labels.classes`; the rest become test.
/// Each class gets its own shuffle of its ascending pixel list, all from one
/// generator seeded with `seed`, so the result depends only on the seed and
/// the raster.
pub fn sample_split(labels: &LabelMap, n_per_class: usize, seed: u64) -> Result<SplitSpec> {
    let c = labels.classes;
    if c == 0 {
        return Err(Error::Argument("label map declares no classes".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (p, &l) in labels.labels.iter().enumerate() {
        if l > 0 {
            members[l as usize - 1].push(p);
        }
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(Error::Argument(format!("class {} has no labeled pixels", empty + 1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(c);
    let mut test = Vec::with_capacity(c);
    for mut px in members {
        px.shuffle(&mut rng);
        let n = n_per_class.min(px.len());
        let mut rest = px.split_off(n);
        px.sort_unstable();
        rest.sort_unstable();
        train.push(px);
        test.push(rest);
    }
    Ok(SplitSpec {
        seed,
        n_train_per_class: n_per_class,
        train,
        test,
    })
}

/// Per-band affine map `(v - mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandStats {
    pub mean: Vec<f64>,
    /// Divisor actually applied: 1 for bands whose spread is below 1e-12.
    pub std: Vec<f64>,
}

const MIN_STD: f64 = 1e-12;

impl BandStats {
    /// Population mean and standard deviation of each band over `pixels`.
    pub fn fit(cube: &HsiCube, pixels: &[usize]) -> Result<Self> {
        if pixels.len() < 2 {
            return Err(Error::Argument(format!(
                "standardization needs at least 2 training pixels, got {}",
                pixels.len()
            )));
        }
        let n_px = cube.height() * cube.width();
        if let Some(&p) = pixels.iter().find(|&&p| p >= n_px) {
            return Err(Error::Argument(format!("pixel {p} outside {n_px}-pixel cube")));
        }
        let b = cube.bands();
        let n = pixels.len() as f64;
        let mut mean = vec![0f64; b];
        for &p in pixels {
            for (m, &v) in mean.iter_mut().zip(cube.spectrum(p)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0f64; b];
        for &p in pixels {
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(cube.spectrum(p)) {
                let d = v as f64 - m;
                *s += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(BandStats { mean, std })
    }

    pub fn apply(&self, cube: &HsiCube) -> Result<HsiCube> {
        let b = cube.bands();
        if self.mean.len() != b {
            return Err(Error::shape(format!(
                "band statistics for {} bands applied to {b}-band cube",
                self.mean.len()
            )));
        }
        let mut data = cube.tensor().clone();
        for px in data.data_mut().chunks_exact_mut(b) {
            for ((v, &m), &s) in px.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        let mut out = HsiCube::from_tensor(data)?;
        out.wavelengths = cube.wavelengths.clone();
        Ok(out)
    }
}

/// Standardizes every pixel with statistics of `train_pixels` only.
pub fn standardize(cube: &HsiCube, train_pixels: &[usize]) -> Result<(HsiCube, BandStats)> {
    let stats = BandStats::fit(cube, train_pixels)?;
    Ok((stats.apply(cube)?, stats))
}
