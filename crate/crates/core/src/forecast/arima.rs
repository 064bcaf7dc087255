//! ARIMA(p, d, q) fitted per dimension by Hannan–Rissanen two-stage least squares.
//!
//! 1. Difference the series `d` times.
//! 2. If `q > 0`, fit a long autoregression (order `max(8, 2(p+q))`, shrunk to
//!    what the history supports) and keep its residuals as innovation proxies.
//! 3. Regress the differenced series on its own `p` lags and `q` lagged
//!    innovation proxies (plus an intercept when `d == 0`).
//! 4. Forecast recursively with future innovations at zero and past ones at
//!    their long-AR proxies, then integrate.

use nalgebra::DMatrix;

use super::lstsq::{self, LstsqError};
use super::{ForecastError, ForecastRequest, ForecastResponse};

#[derive(Debug, Clone, PartialEq)]
struct ArmaFit {
    intercept: f64,
    ar: Vec<f64>,
    ma: Vec<f64>,
}

fn difference(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

fn lstsq_error(series: &str, e: LstsqError) -> ForecastError {
    match e {
        LstsqError::RankDeficient { rank, columns } => ForecastError::Singular {
            series: series.to_string(),
            detail: format!("rank {rank} of {columns} columns; set allow_ridge to fall back to a ridge penalty"),
        },
        LstsqError::Singular => ForecastError::Singular { series: series.to_string(), detail: "ridge system singular".into() },
    }
}

/// Regresses `w[t]` on `[1?, w[t-1..=t-p], e[t-1..=t-q]]` for `t` in `start..w.len()`.
#[allow(clippy::too_many_arguments)]
fn regress(
    w: &[f64],
    e: &[f64],
    p: usize,
    q: usize,
    start: usize,
    intercept: bool,
    allow_ridge: bool,
    series: &str,
) -> Result<ArmaFit, ForecastError> {
    let ic = usize::from(intercept);
    let rows = w.len() - start;
    let cols = ic + p + q;
    let mut x = DMatrix::<f64>::zeros(rows, cols);
    let mut y = DMatrix::<f64>::zeros(rows, 1);
    for (r, t) in (start..w.len()).enumerate() {
        y[(r, 0)] = w[t];
        if intercept {
            x[(r, 0)] = 1.0;
        }
        for i in 0..p {
            x[(r, ic + i)] = w[t - 1 - i];
        }
        for j in 0..q {
            x[(r, ic + p + j)] = e[t - 1 - j];
        }
    }
    let fit = lstsq::solve(&x, &y, allow_ridge).map_err(|err| lstsq_error(series, err))?;
    let b = fit.coef.column(0);
    Ok(ArmaFit {
        intercept: if intercept { b[0] } else { 0.0 },
        ar: (0..p).map(|i| b[ic + i]).collect(),
        ma: (0..q).map(|j| b[ic + p + j]).collect(),
    })
}

struct Stages {
    long_order: usize,
    start: usize,
}

/// Long-AR order and first stage-2 row for a differenced series of length `n`,
/// or `None` when either regression would have fewer rows than columns + 1.
fn plan_stages(n: usize, p: usize, q: usize, intercept: bool) -> Option<Stages> {
    let ic = usize::from(intercept);
    if q == 0 {
        return (n > 2 * p + ic).then_some(Stages { long_order: 0, start: p });
    }
    let long = 8.max(2 * (p + q)).min(n.saturating_sub(ic + 1) / 2);
    let start = p.max(long + q);
    (long >= 1 && n > start + ic + p + q).then_some(Stages { long_order: long, start })
}

/// Fits an ARMA(p, q) to an already differenced series. Also returns the
/// long-AR innovation proxies (all zero when `q == 0`).
fn fit_arma(
    w: &[f64],
    p: usize,
    q: usize,
    intercept: bool,
    allow_ridge: bool,
    series: &str,
) -> Result<(ArmaFit, Vec<f64>), ForecastError> {
    let n = w.len();
    let Some(plan) = plan_stages(n, p, q, intercept) else {
        let needed = (n + 1..).find(|&m| plan_stages(m, p, q, intercept).is_some()).expect("feasible length exists");
        return Err(ForecastError::InsufficientHistory { series: series.into(), needed, got: n });
    };
    if q == 0 {
        return Ok((regress(w, &[], p, 0, p, intercept, allow_ridge, series)?, vec![0.0; n]));
    }
    let (long, start) = (plan.long_order, plan.start);
    let stage1 = regress(w, &[], long, 0, long, intercept, allow_ridge, series)?;
    let mut innovations = vec![0.0; n];
    for t in long..n {
        let pred = stage1.intercept + (0..long).map(|i| stage1.ar[i] * w[t - 1 - i]).sum::<f64>();
        innovations[t] = w[t] - pred;
    }
    let fit = regress(w, &innovations, p, q, start, intercept, allow_ridge, series)?;
    Ok((fit, innovations))
}

/// Recursive forecast with future innovations at zero. Past innovations are
/// the long-AR proxies rather than residuals re-filtered through the fitted
/// MA polynomial, which diverge when that polynomial is not invertible.
fn forecast_arma(w: &[f64], innovations: &[f64], fit: &ArmaFit, horizon: usize) -> Vec<f64> {
    let (p, q) = (fit.ar.len(), fit.ma.len());
    let mut ext = w.to_vec();
    let mut e = innovations.to_vec();
    for _ in 0..horizon {
        let t = ext.len();
        let ar: f64 = (0..p).map(|i| fit.ar[i] * ext[t - 1 - i]).sum();
        let ma: f64 = (0..q).filter(|&j| t > j).map(|j| fit.ma[j] * e[t - 1 - j]).sum();
        ext.push(fit.intercept + ar + ma);
        e.push(0.0);
    }
    ext.split_off(w.len())
}

/// Undoes `levels.len() - 1` differences, given the series at every level.
fn integrate(levels: &[Vec<f64>], mut forecast: Vec<f64>) -> Vec<f64> {
    for level in levels[..levels.len() - 1].iter().rev() {
        let mut acc = *level.last().expect("non-empty level");
        for v in forecast.iter_mut() {
            acc += *v;
            *v = acc;
        }
    }
    forecast
}

/// ARIMA(p, d, q) applied independently to every dimension of the request.
///
/// Constant dimensions are forecast as their constant. The response carries
/// per-dimension coefficients under `dim{k}.ar`, `dim{k}.ma`, `dim{k}.intercept`.
pub fn forecast_arima(
    req: &ForecastRequest,
    p: usize,
    d: usize,
    q: usize,
    allow_ridge: bool,
) -> Result<ForecastResponse, ForecastError> {
    req.validate()?;
    if p + q == 0 && d == 0 {
        return Err(ForecastError::InvalidSpec("ARIMA needs p + q >= 1 or d >= 1".into()));
    }
    let t = req.history.len();
    let needed = p + d + q + 2;
    if t < needed {
        return Err(ForecastError::InsufficientHistory { series: req.series_id.clone(), needed, got: t });
    }

    let dim = req.dim();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(dim);
    let mut resp = ForecastResponse::new(&req.series_id, Vec::new());
    for k in 0..dim {
        let x = req.column(k);
        if x.iter().all(|&v| v == x[0]) {
            columns.push(vec![x[0]; req.horizon]);
            continue;
        }
        let mut levels = vec![x];
        for _ in 0..d {
            let next = difference(levels.last().expect("level"));
            levels.push(next);
        }
        let w = levels.last().expect("level");
        let path = if p + q == 0 {
            vec![0.0; req.horizon]
        } else {
            let series = format!("{}[{k}]", req.series_id);
            let (fit, innovations) = fit_arma(w, p, q, d == 0, allow_ridge, &series)?;
            resp.coefficients.insert(format!("dim{k}.ar"), fit.ar.clone());
            resp.coefficients.insert(format!("dim{k}.ma"), fit.ma.clone());
            if d == 0 {
                resp.coefficients.insert(format!("dim{k}.intercept"), vec![fit.intercept]);
            }
            forecast_arma(w, &innovations, &fit, req.horizon)
        };
        columns.push(integrate(&levels, path));
    }

    resp.forecast = (0..req.horizon).map(|h| columns.iter().map(|c| c[h]).collect()).collect();
    if resp.forecast.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ForecastError::NonFinite { series: req.series_id.clone() });
    }
    Ok(resp)
}
