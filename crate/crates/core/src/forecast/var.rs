//! Vector autoregression with intercept, fitted by multivariate least squares.

use nalgebra::{DMatrix, DVector};

use super::lstsq::{self, LstsqError};
use super::{ForecastError, ForecastRequest, ForecastResponse};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VarOptions {
    /// Pick the lag in `1..=max_lag` minimizing AIC instead of using `max_lag`.
    pub select_order: bool,
    /// Fall back to a ridge solve on rank-deficient designs.
    pub allow_ridge: bool,
}

/// Fitted VAR over the active (non-constant) dimensions.
#[derive(Debug, Clone)]
struct VarFit {
    order: usize,
    intercept: DVector<f64>,
    /// `lags[l]` multiplies `x[t-1-l]`; each is `d x d`.
    lags: Vec<DMatrix<f64>>,
    residuals: DMatrix<f64>,
    ridge: bool,
}

/// Design `[1, x[t-1]', ..., x[t-order]']` and targets `x[t]'` for `t` in `start..len`.
fn design(series: &[DVector<f64>], order: usize, start: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = series[0].len();
    let rows = series.len() - start;
    let mut x = DMatrix::<f64>::zeros(rows, 1 + order * d);
    let mut y = DMatrix::<f64>::zeros(rows, d);
    for (r, t) in (start..series.len()).enumerate() {
        x[(r, 0)] = 1.0;
        for l in 0..order {
            for j in 0..d {
                x[(r, 1 + l * d + j)] = series[t - 1 - l][j];
            }
        }
        for j in 0..d {
            y[(r, j)] = series[t][j];
        }
    }
    (x, y)
}

fn fit(series: &[DVector<f64>], order: usize, start: usize, allow_ridge: bool) -> Result<VarFit, LstsqError> {
    let d = series[0].len();
    let (x, y) = design(series, order, start);
    let solved = lstsq::solve(&x, &y, allow_ridge)?;
    let b = &solved.coef;
    let intercept = b.row(0).transpose();
    let lags = (0..order)
        .map(|l| DMatrix::from_fn(d, d, |i, j| b[(1 + l * d + j, i)]))
        .collect();
    let residuals = &y - &x * b;
    Ok(VarFit { order, intercept, lags, residuals, ridge: solved.ridge })
}

/// `ln det(S) + 2 * order * d^2 / rows` with `S` the ML residual covariance.
fn aic(f: &VarFit) -> f64 {
    let rows = f.residuals.nrows() as f64;
    let d = f.residuals.ncols();
    let cov = f.residuals.transpose() * &f.residuals / rows;
    let log_det = match cov.cholesky() {
        Some(ch) => 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
        None => f64::NEG_INFINITY,
    };
    log_det + 2.0 * (f.order * d * d) as f64 / rows
}

fn rank_error(series: &str, e: LstsqError) -> ForecastError {
    match e {
        LstsqError::RankDeficient { rank, columns } => {
            ForecastError::RankDeficient { series: series.to_string(), rank, columns }
        }
        LstsqError::Singular => ForecastError::Singular { series: series.to_string(), detail: "ridge system singular".into() },
    }
}

/// VAR(max_lag), or the AIC-best order up to `max_lag`, forecast recursively.
///
/// Dimensions that are constant over the whole history are held at their
/// constant and left out of the regression; a fully constant history is
/// returned as persistence. When selecting the order, every candidate is
/// scored on the same rows (those after `max_lag`); candidates with a
/// rank-deficient design are skipped unless ridge is allowed. The chosen
/// order is then refitted on all rows it can use.
pub fn forecast_var(req: &ForecastRequest, max_lag: usize, opts: VarOptions) -> Result<ForecastResponse, ForecastError> {
    req.validate()?;
    if max_lag == 0 {
        return Err(ForecastError::InvalidSpec("VAR max lag must be at least 1".into()));
    }
    let t = req.history.len();
    let dim = req.dim();
    let needed = dim * max_lag + max_lag + 2;
    if t < needed {
        return Err(ForecastError::InsufficientHistory { series: req.series_id.clone(), needed, got: t });
    }
    let mut resp = ForecastResponse::new(&req.series_id, Vec::new());
    if req.is_constant() {
        resp.forecast = vec![req.history[t - 1].clone(); req.horizon];
        return Ok(resp);
    }

    let active: Vec<usize> = (0..dim)
        .filter(|&k| req.history.iter().any(|v| v[k] != req.history[0][k]))
        .collect();
    let series: Vec<DVector<f64>> = req
        .history
        .iter()
        .map(|v| DVector::from_iterator(active.len(), active.iter().map(|&k| v[k])))
        .collect();

    let order = if opts.select_order && max_lag > 1 {
        let mut best: Option<(f64, usize)> = None;
        let mut last_err = None;
        for order in 1..=max_lag {
            match fit(&series, order, max_lag, opts.allow_ridge) {
                Ok(f) => {
                    let score = aic(&f);
                    if best.is_none_or(|(b, _)| score < b) {
                        best = Some((score, order));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        match (best, last_err) {
            (Some((_, order)), _) => order,
            (None, Some(e)) => return Err(rank_error(&req.series_id, e)),
            (None, None) => unreachable!("at least one candidate order"),
        }
    } else {
        max_lag
    };
    let fitted = fit(&series, order, order, opts.allow_ridge).map_err(|e| rank_error(&req.series_id, e))?;

    let mut ext = series.clone();
    for _ in 0..req.horizon {
        let n = ext.len();
        let mut next = fitted.intercept.clone();
        for (l, a) in fitted.lags.iter().enumerate() {
            next += a * &ext[n - 1 - l];
        }
        ext.push(next);
    }
    let last = &req.history[t - 1];
    resp.forecast = ext[t..]
        .iter()
        .map(|v| {
            let mut full = last.clone();
            for (slot, &k) in active.iter().enumerate() {
                full[k] = v[slot];
            }
            full
        })
        .collect();
    if resp.forecast.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ForecastError::NonFinite { series: req.series_id.clone() });
    }

    resp.coefficients.insert("order".into(), vec![fitted.order as f64]);
    resp.coefficients.insert("active_dims".into(), active.iter().map(|&k| k as f64).collect());
    resp.coefficients.insert("intercept".into(), fitted.intercept.iter().copied().collect());
    for (l, a) in fitted.lags.iter().enumerate() {
        // row-major
        resp.coefficients.insert(format!("lag{}", l + 1), a.transpose().iter().copied().collect());
    }
    if fitted.ridge {
        resp.coefficients.insert("ridge_penalty".into(), vec![lstsq::RIDGE_PENALTY]);
    }
    Ok(resp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::forecast_arima;

    fn fixed(allow_ridge: bool) -> VarOptions {
        VarOptions { select_order: false, allow_ridge }
    }

    #[test]
    fn constant_history_is_persistence() {
        let req = ForecastRequest::new("s", vec![vec![2.0, 5.0]; 12], 3, 60);
        let r = forecast_var(&req, 2, VarOptions { select_order: true, allow_ridge: false }).unwrap();
        assert_eq!(r.forecast, vec![vec![2.0, 5.0]; 3]);
    }

    #[test]
    fn univariate_matches_ar() {
        let x: Vec<f64> = (0..30).map(|t| 5.0 + (t as f64 * 0.7).sin() * 3.0 + ((t * 31) % 7) as f64 * 0.2).collect();
        let req = ForecastRequest::new("s", x.iter().map(|&v| vec![v]).collect(), 3, 60);
        for lag in 1..=3 {
            let v = forecast_var(&req, lag, fixed(false)).unwrap();
            let a = forecast_arima(&req, lag, 0, 0, false).unwrap();
            for (fv, fa) in v.forecast.iter().zip(&a.forecast) {
                assert!((fv[0] - fa[0]).abs() < 1e-8, "lag {lag}: {} vs {}", fv[0], fa[0]);
            }
        }
    }

    #[test]
    fn constant_dimension_is_held() {
        let hist: Vec<Vec<f64>> = (0..20).map(|t| vec![(t as f64 * 0.5).sin() + 2.0, 0.0]).collect();
        let req = ForecastRequest::new("s", hist, 2, 60);
        let r = forecast_var(&req, 2, fixed(false)).unwrap();
        assert!(r.forecast.iter().all(|v| v[1] == 0.0));
        assert_eq!(r.coefficients["active_dims"], vec![0.0]);
    }

    #[test]
    fn insufficient_history() {
        let req = ForecastRequest::new("s", vec![vec![1.0, 2.0], vec![2.0, 1.0]], 1, 60);
        assert!(matches!(
            forecast_var(&req, 1, fixed(false)),
            Err(ForecastError::InsufficientHistory { needed: 5, got: 2, .. })
        ));
    }

    #[test]
    fn collinear_dimensions_need_ridge() {
        // Second dimension is an exact multiple of the first.
        let hist: Vec<Vec<f64>> = (0..20)
            .map(|t| {
                let a = (t as f64 * 0.9).sin() + ((t * 13) % 5) as f64;
                vec![a, 2.0 * a]
            })
            .collect();
        let req = ForecastRequest::new("s", hist, 1, 60);
        assert!(matches!(forecast_var(&req, 1, fixed(false)), Err(ForecastError::RankDeficient { .. })));
        let r = forecast_var(&req, 1, fixed(true)).unwrap();
        assert_eq!(r.coefficients["ridge_penalty"], vec![RIDGE]);
        assert!(r.forecast[0].iter().all(|v| v.is_finite()));
    }

    const RIDGE: f64 = lstsq::RIDGE_PENALTY;
}
