//! Confusion matrices, Cohen's kappa and the `1 − κ` competition loss.
//!
//! Rows are true classes and columns are predicted classes.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("confusion matrix needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("confusion matrix must be square: {rows} rows for {labels} labels")]
    NotSquare { rows: usize, labels: usize },
    #[error("confusion matrix is empty (no samples)")]
    Empty,
    #[error("kappa undefined: expected agreement is 1")]
    UndefinedKappa,
    #[error("malformed matrix CSV at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    /// Row-major K×K counts.
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>, rows: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let k = labels.len();
        if k < 2 {
            return Err(MetricsError::TooFewClasses(k));
        }
        if rows.len() != k || rows.iter().any(|r| r.len() != k) {
            return Err(MetricsError::NotSquare {
                rows: rows.len(),
                labels: k,
            });
        }
        let counts: Vec<u64> = rows.into_iter().flatten().collect();
        if counts.iter().all(|&c| c == 0) {
            return Err(MetricsError::Empty);
        }
        Ok(Self { labels, counts })
    }

    /// Matrix with labels `c0, c1, …`.
    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let labels = (0..rows.len()).map(|i| format!("c{i}")).collect();
        Self::new(labels, rows)
    }

    /// Tallies `(true, predicted)` class-index pairs.
    pub fn from_predictions(labels: Vec<String>, pairs: &[(usize, usize)]) -> Result<Self, MetricsError> {
        let k = labels.len();
        let mut rows = vec![vec![0u64; k]; k];
        for &(t, p) in pairs {
            if t >= k || p >= k {
                return Err(MetricsError::NotSquare { rows: t.max(p) + 1, labels: k });
            }
            rows[t][p] += 1;
        }
        Self::new(labels, rows)
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.classes() + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        (0..self.classes()).map(|j| self.get(k, j)).sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.classes()).map(|i| self.get(i, k)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes()).map(|r| r.to_vec()).collect()
    }

    /// Parses a confusion matrix CSV, rows = true class, columns = predicted.
    ///
    /// Two layouts are accepted: a bare K×K block of counts (labels become
    /// `c0..cK`), or a labelled block whose header row holds the predicted
    /// labels after one corner cell and whose first column holds the true labels.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, MetricsError> {
        let rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut lines: Vec<(usize, Vec<String>)> = Vec::new();
        for (i, rec) in rdr.into_records().enumerate() {
            let line = i + 1;
            let rec = rec.map_err(|e| MetricsError::Csv { line, msg: e.to_string() })?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            lines.push((line, rec.iter().map(str::to_string).collect()));
        }
        let Some((_, first)) = lines.first() else {
            return Err(MetricsError::Csv { line: 1, msg: "empty matrix".into() });
        };
        let labelled = first.iter().any(|f| f.parse::<u64>().is_err());
        let counts = |line: usize, fields: &[String]| {
            fields
                .iter()
                .map(|f| {
                    f.parse::<u64>().map_err(|_| MetricsError::Csv {
                        line,
                        msg: format!("{f:?} is not a non-negative integer count"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        };
        let width = |line: usize, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(MetricsError::Csv {
                    line,
                    msg: format!("expected {want} fields, found {got}"),
                })
            }
        };
        if !labelled {
            let k = first.len();
            let mut rows = Vec::with_capacity(lines.len());
            for (line, fields) in &lines {
                width(*line, fields.len(), k)?;
                rows.push(counts(*line, fields)?);
            }
            if rows.len() != k {
                return Err(MetricsError::Csv {
                    line: lines.last().map_or(1, |l| l.0),
                    msg: format!("expected {k} rows for a {k}x{k} matrix, found {}", rows.len()),
                });
            }
            return Self::from_rows(rows);
        }
        let predicted: Vec<String> = first.iter().skip(1).cloned().collect();
        let mut true_labels = Vec::new();
        let mut rows = Vec::new();
        for (line, fields) in &lines[1..] {
            width(*line, fields.len(), predicted.len() + 1)?;
            true_labels.push(fields[0].clone());
            rows.push(counts(*line, &fields[1..])?);
        }
        if true_labels != predicted {
            return Err(MetricsError::Csv {
                line: 1,
                msg: "row labels must match the header's predicted labels in order".into(),
            });
        }
        Self::new(predicted, rows)
    }
}

/// Cohen's kappa `(p_o − p_e)/(1 − p_e)`.
///
/// Evaluated as `(N·Σdiag − Σ row·col) / (N² − Σ row·col)` in exact integer
/// arithmetic with a single final division.
pub fn cohens_kappa<T: Scalar>(m: &ConfusionMatrix) -> Result<T, MetricsError> {
    let n = m.total() as i128;
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let k = m.classes();
    let diag: i128 = (0..k).map(|i| m.get(i, i) as i128).sum();
    let chance: i128 = (0..k).map(|i| m.row_sum(i) as i128 * m.col_sum(i) as i128).sum();
    let den = n * n - chance;
    if den == 0 {
        return Err(MetricsError::UndefinedKappa);
    }
    let num = n * diag - chance;
    let to_t = |x: i128| T::from_i128(x).expect("finite count");
    Ok(to_t(num) / to_t(den))
}

/// Competition loss `L = 1 − κ`.
pub fn competition_loss<T: Scalar>(m: &ConfusionMatrix) -> Result<T, MetricsError> {
    Ok(T::one() - cohens_kappa::<T>(m)?)
}

/// Best and baseline scores reported for the OPS-SAT competition; reference only.
pub const OPSSAT_BEST_LOSS: f64 = 0.367140;
pub const OPSSAT_BASELINE_LOSS: f64 = 0.539694;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub labels: Vec<String>,
    pub counts: Vec<u64>,
}

impl ClassDistribution {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub const OPSSAT_LABELS: [&str; 8] = [
    "Agricultural",
    "Cloud",
    "Mountain",
    "Natural",
    "River",
    "Ice",
    "Snow",
    "Water",
];

/// Per-class patch counts of the OPS-SAT evaluation set (588 patches).
pub fn opssat_eval_distribution() -> ClassDistribution {
    ClassDistribution {
        labels: OPSSAT_LABELS.iter().map(|s| s.to_string()).collect(),
        counts: vec![36, 114, 99, 58, 31, 37, 106, 107],
    }
}

/// OPS-SAT training set: 10 labelled patches per class.
pub fn opssat_train_distribution() -> ClassDistribution {
    ClassDistribution {
        labels: OPSSAT_LABELS.iter().map(|s| s.to_string()).collect(),
        counts: vec![10; 8],
    }
}
