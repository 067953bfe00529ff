//! Error rates grouped by distance to the nearest class boundary.

use std::fmt;

use super::check_pair;
use crate::data::LabelMap;
use crate::error::Result;

/// Largest category; it also stands for every larger distance.
const CAP: u8 = 2;

/// Category of every pixel, `None` for unlabeled ones.
///
/// A labeled pixel whose nearest differently-labeled pixel lies at
/// Chebyshev distance `d` gets category `min(d - 1, 2)`: 0 next to a
/// boundary, 1 one pixel further in, 2 when its whole 5×5 neighbourhood is
/// one class (or it has no differently-labeled neighbour at all). Unlabeled
/// pixels never form boundaries.
pub fn boundary_distance(labels: &LabelMap) -> Vec<Option<u8>> {
    let (h, w) = (labels.height as isize, labels.width as isize);
    let reach = CAP as isize + 1;
    let mut out = vec![None; labels.len()];
    for y in 0..h {
        for x in 0..w {
            let own = labels.labels[(y * w + x) as usize];
            if own == 0 {
                continue;
            }
            let mut nearest = reach;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy < 0 || yy >= h || xx < 0 || xx >= w {
                        continue;
                    }
                    let other = labels.labels[(yy * w + xx) as usize];
                    if other != 0 && other != own {
                        nearest = nearest.min(dy.abs().max(dx.abs()));
                    }
                }
            }
            out[(y * w + x) as usize] = Some((nearest - 1).min(CAP as isize) as u8);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CategoryCount {
    pub false_positives: usize,
    pub tests: usize,
}

impl CategoryCount {
    pub fn percent(&self) -> Option<f64> {
        (self.tests > 0).then(|| 100.0 * self.false_positives as f64 / self.tests as f64)
    }
}

/// Misclassified test pixels per boundary category `0`, `1` and `≥2`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BoundaryReport {
    pub categories: [CategoryCount; 3],
}

impl BoundaryReport {
    pub fn total_tests(&self) -> usize {
        self.categories.iter().map(|c| c.tests).sum()
    }

    /// Adds another report's counts (for pooling partitions).
    pub fn merge(&mut self, other: &BoundaryReport) {
        for (a, b) in self.categories.iter_mut().zip(&other.categories) {
            a.false_positives += b.false_positives;
            a.tests += b.tests;
        }
    }
}

impl fmt::Display for BoundaryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "distance  false positives / test pixels")?;
        for (i, c) in self.categories.iter().enumerate() {
            let name = if i as u8 == CAP { ">=2".to_string() } else { i.to_string() };
            let pct = c.percent().map_or_else(|| "n/a".to_string(), |p| format!("{p:.2}%"));
            writeln!(f, "{name:>8}  {} / {} ({pct})", c.false_positives, c.tests)?;
        }
        Ok(())
    }
}

pub fn fp_by_category(pred: &LabelMap, labels: &LabelMap, test: &[usize]) -> Result<BoundaryReport> {
    check_pair(pred, labels, test)?;
    let cats = boundary_distance(labels);
    let mut report = BoundaryReport::default();
    for &p in test {
        let cat = cats[p].expect("test pixels are labeled") as usize;
        let slot = &mut report.categories[cat];
        slot.tests += 1;
        if pred.labels[p] != labels.labels[p] {
            slot.false_positives += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Columns 0..4 class 1, columns 4..8 class 2.
    fn halves() -> LabelMap {
        let labels = (0..64).map(|p| if p % 8 < 4 { 1 } else { 2 }).collect();
        LabelMap::new(8, 8, 2, labels).unwrap()
    }

    #[test]
    fn half_plane_fixture() {
        // hand-computed category of each column
        let by_column = [2, 2, 1, 0, 0, 1, 2, 2];
        let cats = boundary_distance(&halves());
        for p in 0..64 {
            assert_eq!(cats[p], Some(by_column[p % 8]), "pixel {p}");
        }
    }

    #[test]
    fn uniform_and_isolated_maps() {
        let one = LabelMap::new(3, 4, 1, vec![1; 12]).unwrap();
        assert!(boundary_distance(&one).iter().all(|c| *c == Some(2)));
        let mut lone = vec![0u16; 25];
        lone[12] = 3;
        let lone = LabelMap::new(5, 5, 3, lone).unwrap();
        let cats = boundary_distance(&lone);
        assert_eq!(cats[12], Some(2));
        assert_eq!(cats.iter().filter(|c| c.is_some()).count(), 1);
    }

    #[test]
    fn unlabeled_gap_is_not_a_boundary_but_distance_counts_across_it() {
        // 1 0 2 in one row: the two classes are 2 apart
        let map = LabelMap::new(1, 3, 2, vec![1, 0, 2]).unwrap();
        assert_eq!(boundary_distance(&map), vec![Some(1), None, Some(1)]);
    }

    #[test]
    fn planted_boundary_errors() {
        let truth = halves();
        let mut pred = truth.clone();
        for p in [3, 12, 60] {
            pred.labels[p] = 3 - pred.labels[p];
        }
        let test: Vec<usize> = (0..64).collect();
        let r = fp_by_category(&pred, &truth, &test).unwrap();
        assert_eq!(r.categories[0], CategoryCount { false_positives: 3, tests: 16 });
        assert_eq!(r.categories[1].false_positives, 0);
        assert_eq!(r.categories[2].false_positives, 0);
        assert_eq!(r.total_tests(), 64);
        assert_eq!(fp_by_category(&truth, &truth, &test).unwrap().categories.iter().map(|c| c.false_positives).sum::<usize>(), 0);
    }

    proptest! {
        #[test]
        fn categories_invariant_under_class_permutation(
            labels in prop::collection::vec(0u16..4, 36),
        ) {
            let map = LabelMap::new(6, 6, 3, labels.clone()).unwrap();
            let perm = [0u16, 3, 1, 2];
            let permuted = LabelMap::new(6, 6, 3, labels.iter().map(|&l| perm[l as usize]).collect()).unwrap();
            prop_assert_eq!(boundary_distance(&map), boundary_distance(&permuted));
        }

        #[test]
        fn test_counts_cover_test_set(labels in prop::collection::vec(1u16..4, 36), keep in prop::collection::vec(any::<bool>(), 36)) {
            let map = LabelMap::new(6, 6, 3, labels).unwrap();
            let test: Vec<usize> = (0..36).filter(|&p| keep[p]).collect();
            let r = fp_by_category(&map, &map, &test).unwrap();
            prop_assert_eq!(r.total_tests(), test.len());
        }

        #[test]
        fn category_two_means_pure_neighbourhood(labels in prop::collection::vec(0u16..3, 49)) {
            let map = LabelMap::new(7, 7, 2, labels.clone()).unwrap();
            let cats = boundary_distance(&map);
            for p in 0..49usize {
                let Some(cat) = cats[p] else { continue };
                let (y, x) = ((p / 7) as isize, (p % 7) as isize);
                let pure = (-2..=2isize).all(|dy| (-2..=2isize).all(|dx| {
                    let (yy, xx) = (y + dy, x + dx);
                    if !(0..7).contains(&yy) || !(0..7).contains(&xx) { return true; }
                    let o = labels[(yy * 7 + xx) as usize];
                    o == 0 || o == labels[p]
                }));
                prop_assert_eq!(cat == 2, pure);
            }
        }
    }
}
