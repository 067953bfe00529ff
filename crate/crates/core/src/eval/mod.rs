//! Accuracy, confusion matrices, boundary-distance error analysis, map
//! rendering and the repeated-partition protocol.

mod boundary;
mod protocol;
mod render;

use std::fmt;
use std::io::Write;

use crate::data::LabelMap;
use crate::error::{Error, Result};

pub use boundary::{boundary_distance, fp_by_category, BoundaryReport, CategoryCount};
pub use protocol::{run_protocol, PartitionResult, Protocol, ProtocolSummary};
pub use render::{encode_ppm, render_map, write_ppm, PALETTE};

fn check_pair(pred: &LabelMap, labels: &LabelMap, test: &[usize]) -> Result<()> {
    if (pred.height, pred.width) != (labels.height, labels.width) {
        return Err(Error::shape(format!(
            "prediction {}×{} vs ground truth {}×{}",
            pred.height, pred.width, labels.height, labels.width
        )));
    }
    if let Some(&p) = test.iter().find(|&&p| p >= labels.len()) {
        return Err(Error::Argument(format!("test pixel {p} outside the map")));
    }
    if let Some(&p) = test.iter().find(|&&p| labels.labels[p] == 0) {
        return Err(Error::Argument(format!("test pixel {p} is unlabeled")));
    }
    Ok(())
}

/// Percentage of `test` pixels whose predicted label equals the ground
/// truth.
pub fn overall_accuracy(pred: &LabelMap, labels: &LabelMap, test: &[usize]) -> Result<f64> {
    check_pair(pred, labels, test)?;
    if test.is_empty() {
        return Err(Error::Argument("empty test set".into()));
    }
    let correct = test.iter().filter(|&&p| pred.labels[p] == labels.labels[p]).count();
    Ok(100.0 * correct as f64 / test.len() as f64)
}

/// Counts of predicted class per true class over the test pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    /// `counts[t][p]`: test pixels of class `t + 1` predicted as `p + 1`.
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn row_total(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    /// Row `class` in percent, or `None` when the class has no test pixels.
    pub fn row_percent(&self, class: usize) -> Option<Vec<f64>> {
        let n = self.row_total(class);
        (n > 0).then(|| self.counts[class].iter().map(|&c| 100.0 * c as f64 / n as f64).collect())
    }

    /// Class-count-weighted diagonal, in percent.
    pub fn overall_accuracy(&self) -> f64 {
        let total: usize = (0..self.classes()).map(|c| self.row_total(c)).sum();
        let diag: usize = (0..self.classes()).map(|c| self.counts[c][c]).sum();
        100.0 * diag as f64 / total.max(1) as f64
    }
}

pub fn confusion(pred: &LabelMap, labels: &LabelMap, test: &[usize], classes: usize) -> Result<Confusion> {
    check_pair(pred, labels, test)?;
    if classes < 2 {
        return Err(Error::Argument(format!("confusion needs >= 2 classes, got {classes}")));
    }
    let mut counts = vec![vec![0; classes]; classes];
    for &p in test {
        let (t, y) = (labels.labels[p] as usize, pred.labels[p] as usize);
        if t > classes || y == 0 || y > classes {
            return Err(Error::Argument(format!(
                "pixel {p}: label {t} or prediction {y} outside 1..={classes}"
            )));
        }
        counts[t - 1][y - 1] += 1;
    }
    Ok(Confusion { counts })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    /// `None` for classes without test pixels.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub confusion: Confusion,
    pub n_test: Vec<usize>,
    pub class_names: Vec<String>,
}

impl EvalReport {
    pub fn new(pred: &LabelMap, labels: &LabelMap, test: &[usize]) -> Result<Self> {
        let overall_accuracy = overall_accuracy(pred, labels, test)?;
        let confusion = confusion(pred, labels, test, labels.classes)?;
        let c = confusion.classes();
        let n_test: Vec<usize> = (0..c).map(|i| confusion.row_total(i)).collect();
        let per_class_accuracy = (0..c)
            .map(|i| confusion.row_percent(i).map(|r| r[i]))
            .collect();
        Ok(EvalReport {
            overall_accuracy,
            per_class_accuracy,
            confusion,
            n_test,
            class_names: labels.class_names.clone(),
        })
    }

    fn name(&self, class: usize) -> String {
        self.class_names
            .get(class)
            .cloned()
            .unwrap_or_else(|| format!("class {}", class + 1))
    }

    /// One row per true class: name, test count, accuracy, then the
    /// row-normalized confusion percentages (empty for undefined rows).
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let c = self.confusion.classes();
        let header: Vec<String> = (1..=c).map(|j| format!("pred_{j}")).collect();
        writeln!(out, "class,name,n_test,accuracy,{}", header.join(","))?;
        for i in 0..c {
            let (acc, row) = match self.confusion.row_percent(i) {
                Some(r) => (
                    format!("{:.2}", r[i]),
                    r.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>(),
                ),
                None => (String::new(), vec![String::new(); c]),
            };
            writeln!(out, "{},\"{}\",{},{acc},{}", i + 1, self.name(i), self.n_test[i], row.join(","))?;
        }
        writeln!(out, "all,overall,{},{:.2}", self.n_test.iter().sum::<usize>(), self.overall_accuracy)?;
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "overall accuracy {:.2}%", self.overall_accuracy)?;
        let width = (0..self.n_test.len()).map(|i| self.name(i).len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:>3}  {:<width$}  {:>7}  {:>8}", "#", "class", "n_test", "accuracy")?;
        for (i, acc) in self.per_class_accuracy.iter().enumerate() {
            let acc = acc.map_or_else(|| "undef".to_string(), |a| format!("{a:.2}%"));
            writeln!(f, "{:>3}  {:<width$}  {:>7}  {:>8}", i + 1, self.name(i), self.n_test[i], acc)?;
        }
        writeln!(f, "confusion (rows: truth, columns: prediction, %)")?;
        for i in 0..self.confusion.classes() {
            let row = match self.confusion.row_percent(i) {
                Some(r) => r.iter().map(|v| format!("{v:6.1}")).collect::<Vec<_>>().join(" "),
                None => "undefined (no test pixels)".to_string(),
            };
            writeln!(f, "{:>3}  {row}", i + 1)?;
        }
        Ok(())
    }
}
