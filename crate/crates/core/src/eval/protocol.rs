//! Repeated random partitions: split, standardize, train, predict, score.

use std::fmt;

use super::{fp_by_category, BoundaryReport, EvalReport};
use crate::data::{sample_split, standardize, HsiCube, LabelMap, SplitSpec, TrainingPool};
use crate::error::{Error, Result};
use crate::network::{ContextualNet, Init, NetworkConfig};
use crate::optim::{train, TrainLog, TrainPlan};

#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    pub network: NetworkConfig,
    pub init: Init,
    /// Template plan; its seed is replaced per partition.
    pub plan: TrainPlan,
    pub n_per_class: usize,
    pub partitions: usize,
    /// Partition `i` uses seed `seed + i` for its split, initial weights,
    /// batch sampling and dropout.
    pub seed: u64,
    /// Tile edge for whole-image prediction.
    pub tile: Option<usize>,
}

impl Protocol {
    pub fn new(network: NetworkConfig, plan: TrainPlan) -> Self {
        Protocol {
            network,
            init: Init::Paper,
            plan,
            n_per_class: 200,
            partitions: 20,
            seed: 0,
            tile: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PartitionResult {
    pub seed: u64,
    pub split: SplitSpec,
    pub report: EvalReport,
    pub boundary: BoundaryReport,
    pub log: TrainLog,
    pub prediction: LabelMap,
    pub net: ContextualNet<f32>,
}

#[derive(Clone, Debug)]
pub struct ProtocolSummary {
    pub partitions: Vec<PartitionResult>,
    pub mean: f64,
    /// Sample (n − 1) standard deviation; 0 for a single partition.
    pub std: f64,
    pub best: f64,
}

impl ProtocolSummary {
    pub fn from_results(partitions: Vec<PartitionResult>) -> Result<Self> {
        if partitions.is_empty() {
            return Err(Error::Argument("no partitions".into()));
        }
        let oa: Vec<f64> = partitions.iter().map(|p| p.report.overall_accuracy).collect();
        let (mean, std) = mean_std(&oa);
        let best = oa.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(ProtocolSummary {
            partitions,
            mean,
            std,
            best,
        })
    }

    /// Boundary counts pooled over all partitions.
    pub fn boundary(&self) -> BoundaryReport {
        let mut total = BoundaryReport::default();
        for p in &self.partitions {
            total.merge(&p.boundary);
        }
        total
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl fmt::Display for ProtocolSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2} ({:.2})", self.mean, self.std, self.best)
    }
}

/// Runs `protocol.partitions` independent partitions in seed order and
/// calls `on_partition` after each one.
pub fn run_protocol(
    cube: &HsiCube,
    labels: &LabelMap,
    protocol: &Protocol,
    mut on_partition: impl FnMut(&PartitionResult),
) -> Result<ProtocolSummary> {
    if protocol.partitions == 0 {
        return Err(Error::Argument("need at least one partition".into()));
    }
    labels.check_matches(cube)?;
    if labels.classes != protocol.network.classes || cube.bands() != protocol.network.bands {
        return Err(Error::config(format!(
            "network expects {} bands / {} classes, data has {} / {}",
            protocol.network.bands,
            protocol.network.classes,
            cube.bands(),
            labels.classes
        )));
    }
    let mut results = Vec::with_capacity(protocol.partitions);
    for i in 0..protocol.partitions {
        let seed = protocol.seed.wrapping_add(i as u64);
        let split = sample_split(labels, protocol.n_per_class, seed)?;
        let (std_cube, _) = standardize(cube, &split.train_pixels())?;
        let pool = TrainingPool::new(
            &std_cube,
            &split,
            protocol.network.patch_size(),
            protocol.plan.augmentation,
        )?;
        let mut net = ContextualNet::<f32>::build_with(&protocol.network, seed, protocol.init)?;
        let plan = TrainPlan {
            seed,
            ..protocol.plan.clone()
        };
        let log = train(&mut net, &pool, &plan)?;
        let mut prediction = net.predict(std_cube.tensor(), protocol.tile)?;
        prediction.class_names = labels.class_names.clone();
        let test = split.test_pixels();
        let report = EvalReport::new(&prediction, labels, &test)?;
        let boundary = fp_by_category(&prediction, labels, &test)?;
        let result = PartitionResult {
            seed,
            split,
            report,
            boundary,
            log,
            prediction,
            net,
        };
        on_partition(&result);
        results.push(result);
    }
    ProtocolSummary::from_results(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_value_has_zero_std() {
        assert_eq!(mean_std(&[93.0]), (93.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    fn toy() -> (HsiCube, LabelMap) {
        let (h, w, b) = (12, 10, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<u16> = (0..h * w)
            .map(|p| match (p / w < h / 2, p % w < w / 2) {
                (true, true) => 1,
                (true, false) => 2,
                (false, true) => 3,
                (false, false) => 0,
            })
            .collect();
        let values = (0..h * w * b)
            .map(|i| labels[i / b] as f32 * ((i % b) as f32 - 1.5) + rng.random_range(-0.3..0.3))
            .collect();
        (
            HsiCube::new(h, w, b, values).unwrap(),
            LabelMap::new(h, w, 3, labels).unwrap(),
        )
    }

    #[test]
    fn three_partition_smoke_run() {
        let (cube, labels) = toy();
        let network = NetworkConfig {
            width: 6,
            ..NetworkConfig::new(4, 3)
        };
        let plan = TrainPlan {
            base_lr: 0.01,
            ..TrainPlan::scaled(30)
        };
        let protocol = Protocol {
            n_per_class: 5,
            partitions: 3,
            seed: 40,
            tile: Some(4),
            ..Protocol::new(network, plan)
        };
        let mut seen = Vec::new();
        let summary = run_protocol(&cube, &labels, &protocol, |r| seen.push(r.seed)).unwrap();
        assert_eq!(seen, vec![40, 41, 42]);
        assert_eq!(summary.partitions.len(), 3);
        for p in &summary.partitions {
            assert_eq!(p.split.train_len(), 15);
            assert_eq!(p.boundary.total_tests(), p.split.test_len());
            assert_eq!(p.log.entries.len(), 30);
        }
        assert!(summary.best >= summary.mean);
        let text = summary.to_string();
        assert!(text.contains(" ± "), "{text}");
    }
}
