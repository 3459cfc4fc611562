//! Confusion matrix and per-class precision / recall / F1 (percent).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{data_err, Result};

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], class_names: &[String]) -> Result<ConfusionMatrix> {
    let k = class_names.len();
    if y_true.len() != y_pred.len() {
        return Err(data_err!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        ));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if t >= k || p >= k {
            return Err(data_err!("sample {i}: label ({t}, {p}) outside {k} classes"));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: class_names.to_vec(),
    })
}

/// A metric value; `undefined` marks a zero denominator (value then 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub undefined: bool,
}

impl Score {
    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Self {
                value: 0.0,
                undefined: true,
            }
        } else {
            Self {
                value: 100.0 * num as f64 / den as f64,
                undefined: false,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: Score,
    pub recall: Score,
    pub f1: Score,
}

impl ClassScores {
    pub fn any_undefined(&self) -> bool {
        self.precision.undefined || self.recall.undefined || self.f1.undefined
    }
}

impl ConfusionMatrix {
    pub fn class_count(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum::<u64>() - self.counts[c][c]
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        self.counts[c].iter().sum::<u64>() - self.counts[c][c]
    }

    pub fn precision_recall_f1(&self, c: usize) -> ClassScores {
        let (tp, fp, fn_) = (self.true_positives(c), self.false_positives(c), self.false_negatives(c));
        ClassScores {
            precision: Score::ratio(tp, tp + fp),
            recall: Score::ratio(tp, tp + fn_),
            f1: Score::ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }

    /// Unweighted mean over classes; a class with an undefined score
    /// contributes 0 and flags the average.
    pub fn macro_average(&self) -> ClassScores {
        let k = self.class_count().max(1) as f64;
        let per: Vec<ClassScores> = (0..self.class_count()).map(|c| self.precision_recall_f1(c)).collect();
        let avg = |f: fn(&ClassScores) -> Score| Score {
            value: per.iter().map(|s| f(s).value).sum::<f64>() / k,
            undefined: per.iter().any(|s| f(s).undefined),
        };
        ClassScores {
            precision: avg(|s| s.precision),
            recall: avg(|s| s.recall),
            f1: avg(|s| s.f1),
        }
    }

    /// trace / total, in percent.
    pub fn accuracy(&self) -> Score {
        let trace = (0..self.class_count()).map(|c| self.counts[c][c]).sum();
        Score::ratio(trace, self.total())
    }

    /// Row-normalised (true-class conditioned); empty rows stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let sum: u64 = row.iter().sum();
                row.iter()
                    .map(|&v| if sum == 0 { 0.0 } else { v as f64 / sum as f64 })
                    .collect()
            })
            .collect()
    }

    /// `class,precision,recall,f1` plus `macro` and `accuracy` rows.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1\n");
        let mut row = |name: &str, s: ClassScores| {
            let _ = writeln!(out, "{name},{:.4},{:.4},{:.4}", s.precision.value, s.recall.value, s.f1.value);
        };
        for (c, name) in self.class_names.iter().enumerate() {
            row(name, self.precision_recall_f1(c));
        }
        row("macro", self.macro_average());
        let acc = self.accuracy();
        row(
            "accuracy",
            ClassScores {
                precision: acc,
                recall: acc,
                f1: acc,
            },
        );
        out
    }

    /// Count grid with a `true\pred` corner cell.
    pub fn counts_csv(&self) -> String {
        grid_csv(&self.class_names, |r, c| self.counts[r][c].to_string())
    }

    pub fn normalized_csv(&self) -> String {
        let n = self.normalized();
        grid_csv(&self.class_names, |r, c| format!("{:.6}", n[r][c]))
    }

    pub fn from_counts_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| data_err!("empty confusion CSV"))?;
        let class_names: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let mut counts = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != class_names.len() + 1 {
                return Err(data_err!("confusion CSV line {}: wrong column count", i + 2));
            }
            counts.push(
                cells[1..]
                    .iter()
                    .map(|c| c.parse::<u64>().map_err(|_| data_err!("confusion CSV line {}: bad count {c:?}", i + 2)))
                    .collect::<Result<Vec<u64>>>()?,
            );
        }
        if counts.len() != class_names.len() {
            return Err(data_err!("confusion CSV is not square"));
        }
        Ok(Self { counts, class_names })
    }
}

/// `2PR / (P + R)`; 0 when both are 0.
pub fn harmonic_f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn grid_csv(names: &[String], cell: impl Fn(usize, usize) -> String) -> String {
    let mut out = String::from("true\\pred");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (r, name) in names.iter().enumerate() {
        out.push_str(name);
        for c in 0..names.len() {
            out.push(',');
            out.push_str(&cell(r, c));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn hand_tally() {
        let cm = confusion(&[0, 0, 1], &[0, 1, 1], &names(2)).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
        assert!(confusion(&[0, 2], &[0, 0], &names(2)).is_err());
        assert!(confusion(&[0], &[0, 0], &names(2)).is_err());
        let perfect = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], &names(3)).unwrap();
        assert_eq!(perfect.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
        let s = perfect.precision_recall_f1(2);
        assert_eq!((s.precision.value, s.recall.value, s.f1.value), (100.0, 100.0, 100.0));
        assert_eq!(perfect.normalized()[2], vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn three_one_one() {
        // class 0: TP 3, FP 1, FN 1
        let cm = ConfusionMatrix {
            counts: vec![vec![3, 1, 0], vec![1, 0, 0], vec![0, 0, 0]],
            class_names: names(3),
        };
        let s = cm.precision_recall_f1(0);
        assert_eq!(s.precision.value, 75.0);
        assert_eq!(s.recall.value, 75.0);
        assert_eq!(s.f1.value, 75.0);
        let s1 = cm.precision_recall_f1(1);
        assert_eq!((s1.precision.value, !s1.any_undefined()), (0.0, true));
        let s2 = cm.precision_recall_f1(2);
        assert!(s2.precision.undefined && s2.recall.undefined && s2.f1.undefined);
        assert_eq!(s2.f1.value, 0.0);
        assert!(cm.macro_average().f1.undefined);
    }

    #[test]
    fn normalised_rows_and_csv() {
        let cm = ConfusionMatrix {
            counts: vec![vec![8, 2], vec![0, 0]],
            class_names: names(2),
        };
        assert_eq!(cm.normalized(), vec![vec![0.8, 0.2], vec![0.0, 0.0]]);
        assert_eq!(ConfusionMatrix::from_counts_csv(&cm.counts_csv()).unwrap(), cm);
        let csv = cm.metrics_csv();
        assert!(csv.starts_with("class,precision,recall,f1\nc0,"));
        assert!(csv.contains("\naccuracy,80.0000,80.0000,80.0000\n"));
    }
}
