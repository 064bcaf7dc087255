//! RMSE, MAE and Common Part of Commuters (CPC).
//!
//! All metrics take flat slices. OD matrices are passed row-major; a stack of
//! matrices (several evaluation intervals) is simply a longer slice, which
//! gives the micro-averaged form used in reports.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("cannot score an empty prediction")]
    Empty,
    #[error("shape mismatch: {predicted} predicted vs {actual} actual values")]
    ShapeMismatch { predicted: usize, actual: usize },
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("negative flow {value} at position {index}")]
    Negative { index: usize, value: f64 },
    #[error("relative change against a zero baseline is undefined")]
    ZeroBaseline,
}

/// Predicted and actual values of equal length; actuals are non-negative.
#[derive(Debug, Clone, Copy)]
pub struct PredictionPair<'a> {
    predicted: &'a [f64],
    actual: &'a [f64],
}

impl<'a> PredictionPair<'a> {
    pub fn new(predicted: &'a [f64], actual: &'a [f64]) -> Result<Self, MetricError> {
        if predicted.len() != actual.len() {
            return Err(MetricError::ShapeMismatch { predicted: predicted.len(), actual: actual.len() });
        }
        if predicted.is_empty() {
            return Err(MetricError::Empty);
        }
        for (i, (&p, &a)) in predicted.iter().zip(actual).enumerate() {
            if !p.is_finite() || !a.is_finite() {
                return Err(MetricError::NonFinite(i));
            }
            if a < 0.0 {
                return Err(MetricError::Negative { index: i, value: a });
            }
        }
        Ok(Self { predicted, actual })
    }

    pub fn predicted(&self) -> &'a [f64] {
        self.predicted
    }

    pub fn actual(&self) -> &'a [f64] {
        self.actual
    }

    pub fn len(&self) -> usize {
        self.actual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actual.is_empty()
    }

    fn diffs(&self) -> impl Iterator<Item = f64> + 'a {
        self.predicted.iter().zip(self.actual).map(|(p, a)| p - a)
    }
}

/// Root mean squared error.
pub fn rmse(pair: &PredictionPair<'_>) -> f64 {
    (pair.diffs().map(|d| d * d).sum::<f64>() / pair.len() as f64).sqrt()
}

/// Mean absolute error.
pub fn mae(pair: &PredictionPair<'_>) -> f64 {
    pair.diffs().map(f64::abs).sum::<f64>() / pair.len() as f64
}

/// `2 * sum(min(p, a)) / (sum(p) + sum(a))`.
///
/// Two all-zero inputs are identical flow sets and score 1; when exactly one
/// side has no mass the score is 0. Negative entries on either side are
/// rejected, so predictions must be clamped first.
pub fn cpc(predicted: &[f64], actual: &[f64]) -> Result<f64, MetricError> {
    if predicted.len() != actual.len() {
        return Err(MetricError::ShapeMismatch { predicted: predicted.len(), actual: actual.len() });
    }
    let mut common = 0.0;
    let mut sum_p = 0.0;
    let mut sum_a = 0.0;
    for (i, (&p, &a)) in predicted.iter().zip(actual).enumerate() {
        if !p.is_finite() || !a.is_finite() {
            return Err(MetricError::NonFinite(i));
        }
        if p < 0.0 || a < 0.0 {
            return Err(MetricError::Negative { index: i, value: p.min(a) });
        }
        common += p.min(a);
        sum_p += p;
        sum_a += a;
    }
    let total = sum_p + sum_a;
    if total == 0.0 {
        return Ok(1.0);
    }
    if sum_p == 0.0 || sum_a == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * common / total)
}

/// Signed fractional change `(candidate - baseline) / baseline`.
pub fn relative_change(candidate: f64, baseline: f64) -> Result<f64, MetricError> {
    if baseline == 0.0 {
        return Err(MetricError::ZeroBaseline);
    }
    Ok((candidate - baseline) / baseline)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair<'a>(p: &'a [f64], a: &'a [f64]) -> PredictionPair<'a> {
        PredictionPair::new(p, a).unwrap()
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&pair(&[1.0, 2.0], &[1.0, 2.0])), 0.0);
        assert!((rmse(&pair(&[3.0, 4.0], &[0.0, 0.0])) - 12.5f64.sqrt()).abs() < 1e-9);
        assert!((rmse(&pair(&[3.0, 4.0], &[0.0, 0.0])) - 3.53553).abs() < 1e-5);
        assert_eq!(rmse(&pair(&[5.0], &[3.0])), 2.0);
    }

    #[test]
    fn mae_cases() {
        assert_eq!(mae(&pair(&[1.0, 2.0], &[1.0, 2.0])), 0.0);
        assert_eq!(mae(&pair(&[3.0, 4.0], &[0.0, 0.0])), 3.5);
        assert_eq!(mae(&pair(&[2.0, 0.0], &[1.0, 1.0])), 1.0);
    }

    #[test]
    fn pair_errors() {
        assert_eq!(PredictionPair::new(&[], &[]).unwrap_err(), MetricError::Empty);
        assert!(matches!(PredictionPair::new(&[1.0], &[1.0, 2.0]), Err(MetricError::ShapeMismatch { .. })));
        assert_eq!(PredictionPair::new(&[f64::NAN], &[1.0]).unwrap_err(), MetricError::NonFinite(0));
        assert!(matches!(PredictionPair::new(&[1.0], &[-1.0]), Err(MetricError::Negative { .. })));
    }

    #[test]
    fn cpc_cases() {
        let m = [1.0, 2.0, 0.0, 4.0];
        assert_eq!(cpc(&m, &m).unwrap(), 1.0);
        assert_eq!(cpc(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cpc(&[2.0, 0.0, 0.0, 2.0], &[1.0, 1.0, 1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(cpc(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cpc(&[0.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(matches!(cpc(&[-1.0], &[1.0]), Err(MetricError::Negative { .. })));
        assert!(matches!(cpc(&[1.0], &[1.0, 1.0]), Err(MetricError::ShapeMismatch { .. })));
    }

    #[test]
    fn relative_changes() {
        assert!((relative_change(0.62, 0.58).unwrap() - 0.0690).abs() < 5e-5);
        assert!((relative_change(6.09, 8.02).unwrap() + 0.2407).abs() < 1e-4);
        assert_eq!(relative_change(3.0, 3.0).unwrap(), 0.0);
        assert_eq!(relative_change(1.0, 0.0), Err(MetricError::ZeroBaseline));
    }
}
