//! Continual-learning metrics over a triangular accuracy matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `rows[t][j]` is the test accuracy on problem `j` after solving problem
/// `t`, for `j <= t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn validate(&self) -> Result<()> {
        for (t, row) in self.rows.iter().enumerate() {
            if row.len() != t + 1 {
                return Err(Error::Shape(format!("row {t} has {} entries, expected {}", row.len(), t + 1)));
            }
        }
        Ok(())
    }

    /// Accuracy of each problem right after it was solved.
    pub fn initial(&self) -> Vec<f64> {
        self.rows.iter().enumerate().map(|(t, r)| r[t]).collect()
    }

    /// Accuracy of each problem after the whole sequence.
    pub fn last(&self) -> Vec<f64> {
        self.rows.last().cloned().unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean final accuracy.
    pub a: f64,
    /// Final accuracy on the last problem minus the standalone reference;
    /// absent without a reference.
    pub tr_last: Option<f64>,
    /// Mean change from initial to final accuracy.
    pub f: f64,
    pub matrix: AccuracyMatrix,
}

pub fn compute_metrics(matrix: &AccuracyMatrix, sa_reference: Option<f64>) -> Result<MetricsReport> {
    matrix.validate()?;
    if matrix.rows.is_empty() {
        return Err(Error::Shape("no problems solved".into()));
    }
    let last = matrix.last();
    let initial = matrix.initial();
    let n = last.len() as f64;
    let a = last.iter().sum::<f64>() / n;
    let f = last.iter().zip(&initial).map(|(l, i)| l - i).sum::<f64>() / n;
    Ok(MetricsReport {
        a,
        tr_last: sa_reference.map(|sa| last[last.len() - 1] - sa),
        f,
        matrix: matrix.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_three_problem_case() {
        let m = AccuracyMatrix {
            rows: vec![vec![0.9], vec![0.85, 0.7], vec![0.8, 0.7, 0.6]],
        };
        let r = compute_metrics(&m, Some(0.5)).unwrap();
        assert!((r.a - (0.8 + 0.7 + 0.6) / 3.0).abs() < 1e-12);
        assert!((r.f - ((0.8 - 0.9) + 0.0 + 0.0) / 3.0).abs() < 1e-12);
        assert!((r.tr_last.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(compute_metrics(&m, None).unwrap().tr_last, None);
    }

    #[test]
    fn constant_accuracies() {
        let m = AccuracyMatrix {
            rows: (0..4).map(|t| vec![0.8; t + 1]).collect(),
        };
        let r = compute_metrics(&m, None).unwrap();
        assert!((r.a - 0.8).abs() < 1e-15);
        assert_eq!(r.f, 0.0);
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        let m = AccuracyMatrix {
            rows: vec![vec![0.9], vec![0.85]],
        };
        assert!(compute_metrics(&m, None).is_err());
    }
}
