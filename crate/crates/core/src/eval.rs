//! Confusion matrices, accuracy and averaged precision/recall, and the
//! `id<TAB>value` prediction/label files they are computed from.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::class_index;
use crate::error::{Error, Result};

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&p, &t) in preds.iter().zip(labels) {
        if let Some(&label) = [p, t].iter().find(|&&v| v >= classes) {
            return Err(Error::Label { label, classes });
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Unweighted mean of per-class values.
    Macro,
    /// Pooled counts; equals accuracy for single-label predictions.
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsOptions {
    pub averaging: Averaging,
    /// Per-class precision/recall when the class has no predictions/examples.
    pub empty_value: f64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            averaging: Averaging::Macro,
            empty_value: 0.0,
        }
    }
}

/// Percentages in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

impl Metrics {
    /// Each value rounded to two decimals, as reported.
    pub fn rounded(&self) -> Self {
        let r = |v: f64| (v * 100.0).round() / 100.0;
        Self {
            accuracy: r(self.accuracy),
            precision: r(self.precision),
            recall: r(self.recall),
        }
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    metrics_with(cm, MetricsOptions::default())
}

pub fn metrics_with(cm: &ConfusionMatrix, opts: MetricsOptions) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("metrics of an empty confusion matrix".into()));
    }
    let accuracy = 100.0 * cm.trace() as f64 / total as f64;
    let (precision, recall) = match opts.averaging {
        Averaging::Micro => (accuracy, accuracy),
        Averaging::Macro => {
            let k = cm.classes() as f64;
            let ratio = |num: u64, den: u64| {
                if den == 0 {
                    opts.empty_value
                } else {
                    num as f64 / den as f64
                }
            };
            let p: f64 = (0..cm.classes()).map(|i| ratio(cm.counts[i][i], cm.col_sum(i))).sum();
            let r: f64 = (0..cm.classes()).map(|i| ratio(cm.counts[i][i], cm.row_sum(i))).sum();
            (100.0 * p / k, 100.0 * r / k)
        }
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
    })
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: Vec<Vec<u64>>,
}

impl Report {
    pub fn new(cm: &ConfusionMatrix, m: &Metrics) -> Self {
        let m = m.rounded();
        Self {
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            confusion: cm.counts.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// `Method  Acc  Prec  Recall` table followed by the confusion matrix.
    pub fn to_table(&self, method: &str, class_names: &[&str]) -> String {
        let mut out = String::new();
        let w = method.len().max(6);
        let _ = writeln!(out, "{:<w$}  {:>6}  {:>6}  {:>6}", "Method", "Acc", "Prec", "Recall");
        let _ = writeln!(
            out,
            "{method:<w$}  {:>6.2}  {:>6.2}  {:>6.2}",
            self.accuracy, self.precision, self.recall
        );
        let _ = writeln!(out, "\nconfusion (rows = true, cols = predicted)");
        let name_w = class_names.iter().map(|n| n.len()).max().unwrap_or(0);
        for (i, row) in self.confusion.iter().enumerate() {
            let name = class_names.get(i).copied().unwrap_or("");
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
            let _ = writeln!(out, "{name:<name_w$} {}", cells.join(""));
        }
        out
    }
}

/// Parse `id<TAB>value` lines (an optional `id\t…` header is skipped).
/// Values are class indices or class names.
pub fn parse_id_values(text: &str) -> Result<BTreeMap<String, usize>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (n == 0 && line.starts_with("id\t")) {
            continue;
        }
        let (id, value) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("line {}: expected id<TAB>value", n + 1)))?;
        let value = value.trim();
        let v = value
            .parse::<usize>()
            .ok()
            .or_else(|| class_index(value))
            .ok_or_else(|| Error::Format(format!("line {}: bad class value {value:?}", n + 1)))?;
        if out.insert(id.to_string(), v).is_some() {
            return Err(Error::Format(format!("duplicate id {id:?}")));
        }
    }
    Ok(out)
}

pub fn format_id_values<'a>(rows: impl IntoIterator<Item = (&'a str, usize)>) -> String {
    let mut out = String::from("id\tvalue\n");
    for (id, v) in rows {
        let _ = writeln!(out, "{id}\t{v}");
    }
    out
}

pub fn read_id_values(path: &Path) -> Result<BTreeMap<String, usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_id_values(&text)
}

/// Pair predictions with labels by id; every labeled id needs a prediction.
pub fn align(
    preds: &BTreeMap<String, usize>,
    labels: &BTreeMap<String, usize>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut p = Vec::with_capacity(labels.len());
    let mut t = Vec::with_capacity(labels.len());
    for (id, &label) in labels {
        let pred = preds
            .get(id)
            .ok_or_else(|| Error::Data(format!("no prediction for {id:?}")))?;
        p.push(*pred);
        t.push(label);
    }
    if preds.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok((p, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
        assert_eq!(confusion(&[], &[], 3).unwrap(), ConfusionMatrix::zeros(3));
        let diag = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(diag.trace(), diag.total());
    }

    #[test]
    fn confusion_errors() {
        assert!(confusion(&[0], &[0, 1], 2).is_err());
        assert!(matches!(confusion(&[2], &[0], 2), Err(Error::Label { label: 2, .. })));
    }

    #[test]
    fn metric_examples() {
        let diag = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        let m = metrics(&diag).unwrap().rounded();
        assert_eq!((m.accuracy, m.precision, m.recall), (100.0, 100.0, 100.0));

        let all_zero = confusion(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        let m = metrics(&all_zero).unwrap().rounded();
        assert_eq!((m.accuracy, m.precision, m.recall), (50.0, 25.0, 50.0));

        let cm = ConfusionMatrix { counts: vec![vec![1, 1], vec![0, 1]] };
        let m = metrics(&cm).unwrap().rounded();
        assert_eq!((m.accuracy, m.precision, m.recall), (66.67, 75.0, 75.0));
    }

    #[test]
    fn empty_matrix_is_error() {
        assert!(metrics(&ConfusionMatrix::zeros(2)).is_err());
    }

    #[test]
    fn micro_equals_accuracy() {
        let cm = ConfusionMatrix { counts: vec![vec![3, 1], vec![2, 4]] };
        let m = metrics_with(&cm, MetricsOptions { averaging: Averaging::Micro, empty_value: 0.0 }).unwrap();
        assert_eq!(m.precision, m.accuracy);
        assert_eq!(m.recall, m.accuracy);
    }

    #[test]
    fn id_value_round_trip() {
        let text = format_id_values([("a", 1), ("b", 7)]);
        let parsed = parse_id_values(&text).unwrap();
        assert_eq!(parsed["a"], 1);
        assert_eq!(parsed["b"], 7);
        assert_eq!(parse_id_values("x\tscratch\n").unwrap()["x"], 5);
        assert!(parse_id_values("x\t1\nx\t2\n").is_err());
    }

    #[test]
    fn report_formats() {
        let cm = ConfusionMatrix { counts: vec![vec![1, 1], vec![0, 1]] };
        let r = Report::new(&cm, &metrics(&cm).unwrap());
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["accuracy"], 66.67);
        assert_eq!(json["confusion"][0][1], 1);
        assert!(r.to_table("CNN", &["a", "b"]).contains(" 66.67   75.00   75.00"));
    }

    #[test]
    fn argmax_takes_first_max() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }
}
