//! Confusion-matrix evaluation and the per-class accuracy table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::commands::ClassMode;
use super::train::{load_model, LabeledSet};
use crate::data::{to_two_class, DatasetManifest, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub split: Split,
    pub class_mode: ClassMode,
    pub batch_size: usize,
    /// Directory for `report.csv` and `confusion.csv`; nothing is written
    /// when empty.
    pub out: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            checkpoint: PathBuf::new(),
            manifest: PathBuf::new(),
            split: Split::Test,
            class_mode: ClassMode::Four,
            batch_size: 16,
            out: None,
        }
    }
}

/// Confusion matrix (rows are true classes, columns predictions) with the
/// accuracies derived from it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalReport {
    pub model: String,
    pub class_names: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
}

fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |a| format!("{:.2}%", 100.0 * a))
}

impl EvalReport {
    pub fn from_predictions(
        model: impl Into<String>,
        class_names: Vec<String>,
        labels: &[usize],
        predictions: &[usize],
    ) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::dim(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let k = class_names.len();
        let mut confusion = vec![vec![0u64; k]; k];
        for (&t, &p) in labels.iter().zip(predictions) {
            if t >= k || p >= k {
                return Err(Error::Label(format!("class pair ({t}, {p}) outside 0..{k}")));
            }
            confusion[t][p] += 1;
        }
        Ok(EvalReport {
            model: model.into(),
            class_names,
            confusion,
        })
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.confusion[class].iter().sum()
    }

    /// Recall of each class; `None` for classes absent from the labels.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.classes())
            .map(|c| {
                let n = self.support(c);
                (n > 0).then(|| self.confusion[c][c] as f64 / n as f64)
            })
            .collect()
    }

    /// Trace over total; `None` for an empty report.
    pub fn overall_accuracy(&self) -> Option<f64> {
        let total = self.total();
        let trace: u64 = (0..self.classes()).map(|c| self.confusion[c][c]).sum();
        (total > 0).then(|| trace as f64 / total as f64)
    }

    /// Four-class report regrouped into scattered/dense by collapsing both
    /// labels and predictions.
    pub fn collapse_two_class(&self) -> Result<Self> {
        if self.classes() != 4 {
            return Err(Error::Usage("only a four-class report can be collapsed".into()));
        }
        let mut confusion = vec![vec![0u64; 2]; 2];
        for (t, row) in self.confusion.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                confusion[to_two_class(t)?][to_two_class(p)?] += n;
            }
        }
        Ok(EvalReport {
            model: self.model.clone(),
            class_names: ClassMode::Two.class_names(),
            confusion,
        })
    }

    /// Accuracy table with one column per model: a row per class and a
    /// final `ALL(accuracy)` row.
    pub fn render_table(reports: &[&EvalReport]) -> String {
        let names = reports.first().map(|r| r.class_names.clone()).unwrap_or_default();
        let label_w = names.iter().map(String::len).chain(["ALL(accuracy)".len()]).max().unwrap_or(0) + 2;
        let col_w = reports.iter().map(|r| r.model.len()).max().unwrap_or(0).max(8) + 2;
        let mut out = format!("{:<label_w$}", "Models");
        for r in reports {
            let _ = write!(out, "{:>col_w$}", r.model);
        }
        out.push('\n');
        for (c, name) in names.iter().enumerate() {
            let _ = write!(out, "{name:<label_w$}");
            for r in reports {
                let _ = write!(out, "{:>col_w$}", percent(r.per_class_accuracy().get(c).copied().flatten()));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<label_w$}", "ALL(accuracy)");
        for r in reports {
            let _ = write!(out, "{:>col_w$}", percent(r.overall_accuracy()));
        }
        out.push('\n');
        out
    }

    pub fn table(&self) -> String {
        Self::render_table(&[self])
    }

    pub fn confusion_text(&self) -> String {
        let w = self.total().to_string().len().max(4) + 2;
        let mut out = format!("{:<24}", "true \\ predicted");
        for c in 0..self.classes() {
            let _ = write!(out, "{c:>w$}");
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            let _ = write!(out, "{name:<24}");
            for n in row {
                let _ = write!(out, "{n:>w$}");
            }
            out.push('\n');
        }
        out
    }

    /// `class,support,correct,accuracy` rows plus a final `ALL(accuracy)`
    /// row; absent classes get an empty accuracy.
    pub fn report_csv(&self) -> String {
        let mut out = String::from("class,support,correct,accuracy\n");
        let acc = self.per_class_accuracy();
        for (c, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(
                out,
                "{name},{},{},{}",
                self.support(c),
                self.confusion[c][c],
                acc[c].map(|a| a.to_string()).unwrap_or_default()
            );
        }
        let trace: u64 = (0..self.classes()).map(|c| self.confusion[c][c]).sum();
        let _ = writeln!(
            out,
            "ALL(accuracy),{},{trace},{}",
            self.total(),
            self.overall_accuracy().map(|a| a.to_string()).unwrap_or_default()
        );
        out
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true");
        for name in &self.class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            out.push_str(name);
            for n in row {
                let _ = write!(out, ",{n}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (file, body) in [("report.csv", self.report_csv()), ("confusion.csv", self.confusion_csv())] {
            let path = dir.join(file);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Eval-mode predictions of a checkpointed model on one manifest split.
///
/// A four-class model evaluated in two-class mode has both labels and
/// predictions collapsed; a two-class model can only be evaluated in
/// two-class mode.
pub fn cmd_evaluate(cfg: &EvalConfig) -> Result<EvalReport> {
    let ck = Checkpoint::load(&cfg.checkpoint)?;
    let (network, params) = load_model(&ck)?;
    let manifest = DatasetManifest::load(&cfg.manifest)?;
    if manifest.count(cfg.split) == 0 {
        return Err(Error::config(format!(
            "split {} is absent from {}",
            cfg.split,
            cfg.manifest.display()
        )));
    }
    let trained = match network.classes() {
        4 => ClassMode::Four,
        _ => ClassMode::Two,
    };
    if trained == ClassMode::Two && cfg.class_mode == ClassMode::Four {
        return Err(Error::config("a two-class model cannot be evaluated in four-class mode"));
    }
    let base = cfg.manifest.parent().unwrap_or(Path::new(""));
    let set = LabeledSet::from_manifest(&manifest, base, cfg.split, trained, network.config().input_size)?;
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut predictions = Vec::with_capacity(set.len());
    for chunk in indices.chunks(cfg.batch_size.max(1)) {
        let (x, _) = set.batch(chunk)?;
        predictions.extend(network.predict(&params, &x)?);
    }
    let report = EvalReport::from_predictions(
        network.config().name.clone(),
        trained.class_names(),
        &set.labels,
        &predictions,
    )?;
    let report = if trained == ClassMode::Four && cfg.class_mode == ClassMode::Two {
        report.collapse_two_class()?
    } else {
        report
    };
    if let Some(dir) = &cfg.out {
        report.write(dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four(labels: &[usize], preds: &[usize]) -> EvalReport {
        EvalReport::from_predictions("m", ClassMode::Four.class_names(), labels, preds).unwrap()
    }

    #[test]
    fn perfect_predictions_give_identity() {
        let r = four(&[0, 1, 2, 3], &[0, 1, 2, 3]);
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                assert_eq!(n, u64::from(i == j));
            }
        }
        assert_eq!(r.overall_accuracy(), Some(1.0));
        assert!(r.per_class_accuracy().iter().all(|a| *a == Some(1.0)));
    }

    #[test]
    fn absent_class_is_not_applicable() {
        let r = four(&[0, 0, 1], &[0, 1, 1]);
        assert_eq!(r.per_class_accuracy()[3], None);
        assert!(r.table().contains("N/A"));
        assert_eq!(r.report_csv().lines().nth(4).unwrap(), "BI-RADS IV,0,0,");
    }

    #[test]
    fn table_rows_follow_the_class_names() {
        let r = four(&[0, 1, 2, 3], &[0, 1, 2, 2]);
        let table = r.table();
        let rows: Vec<&str> = table.lines().map(|l| l.split("  ").next().unwrap()).collect();
        assert_eq!(
            rows,
            ["Models", "BI-RADS I", "BI-RADS II", "BI-RADS III", "BI-RADS IV", "ALL(accuracy)"]
        );
        let two = r.collapse_two_class().unwrap();
        assert_eq!(two.confusion, vec![vec![2, 0], vec![0, 2]]);
        assert!(two.table().contains("Heterogeneously dense"));
    }
}
