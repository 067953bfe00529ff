//! Named dataset configurations: which source classes are used, what they
//! are called and how many labeled pixels each published class holds.

use super::LabelMap;
use crate::error::{Error, Result};
use crate::network::NetworkConfig;

#[derive(Clone, Debug)]
pub struct DatasetPreset {
    pub name: &'static str,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Source label ids kept, in output class order.
    pub class_ids: &'static [u16],
    pub class_names: &'static [&'static str],
    /// Published training and test counts per class at 200 training pixels.
    pub train_counts: &'static [usize],
    pub test_counts: &'static [usize],
    pub network: fn() -> NetworkConfig,
}

impl DatasetPreset {
    pub const ALL: [DatasetPreset; 3] = [Self::INDIAN_PINES, Self::SALINAS, Self::PAVIA];

    /// Eight of the sixteen Indian Pines classes; the others are too small.
    pub const INDIAN_PINES: DatasetPreset = DatasetPreset {
        name: "indian_pines",
        height: 145,
        width: 145,
        bands: 220,
        class_ids: &[2, 3, 5, 8, 10, 11, 12, 14],
        class_names: &[
            "Corn-notill",
            "Corn-mintill",
            "Grass-pasture",
            "Hay-windrowed",
            "Soybean-notill",
            "Soybean-mintill",
            "Soybean-clean",
            "Woods",
        ],
        train_counts: &[200; 8],
        test_counts: &[1228, 630, 283, 278, 772, 2255, 393, 1065],
        network: NetworkConfig::indian_pines,
    };

    pub const SALINAS: DatasetPreset = DatasetPreset {
        name: "salinas",
        height: 512,
        width: 217,
        bands: 224,
        class_ids: &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16],
        class_names: &[
            "Broccoli green weeds 1",
            "Broccoli green weeds 2",
            "Fallow",
            "Fallow rough plow",
            "Fallow smooth",
            "Stubble",
            "Celery",
            "Grapes untrained",
            "Soil vineyard develop",
            "Corn senesced green weeds",
            "Lettuce romaines, 4 wk",
            "Lettuce romaines, 5 wk",
            "Lettuce romaines, 6 wk",
            "Lettuce romaines, 7 wk",
            "Vineyard untrained",
            "Vineyard vertical trellis",
        ],
        train_counts: &[200; 16],
        test_counts: &[
            1809, 3526, 1776, 1194, 2478, 3759, 3379, 11071, 6003, 3078, 868, 1727, 716, 870, 7068,
            1607,
        ],
        network: NetworkConfig::salinas,
    };

    pub const PAVIA: DatasetPreset = DatasetPreset {
        name: "pavia",
        height: 610,
        width: 340,
        bands: 103,
        class_ids: &[1, 2, 3, 4, 5, 6, 7, 8, 9],
        class_names: &[
            "Asphalt",
            "Meadows",
            "Gravel",
            "Trees",
            "Sheets",
            "Bare soils",
            "Bitumen",
            "Bricks",
            "Shadows",
        ],
        train_counts: &[200; 9],
        // Bricks holds 3682 labeled pixels; the per-class table misprints
        // its test count as 2482 while the total (40976) uses 3482.
        test_counts: &[6431, 18449, 1899, 2864, 1145, 4829, 1130, 3482, 747],
        network: NetworkConfig::pavia,
    };

    pub fn by_name(name: &str) -> Result<DatasetPreset> {
        let key = name.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|p| p.name == key)
            .ok_or_else(|| {
                let known: Vec<_> = Self::ALL.iter().map(|p| p.name).collect();
                Error::Argument(format!("unknown dataset preset {name:?} (known: {})", known.join(", ")))
            })
    }

    pub fn classes(&self) -> usize {
        self.class_ids.len()
    }

    /// Labeled pixels per selected class.
    pub fn class_sizes(&self) -> Vec<usize> {
        self.train_counts.iter().zip(self.test_counts).map(|(a, b)| a + b).collect()
    }

    /// Restricts a full-dataset label raster to this preset's classes and
    /// attaches their names.
    pub fn select(&self, labels: &LabelMap) -> Result<LabelMap> {
        let mut out = labels.select(self.class_ids)?;
        out.class_names = self.class_names.iter().map(|s| s.to_string()).collect();
        Ok(out)
    }
}
