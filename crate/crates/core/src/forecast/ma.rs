use super::{ForecastError, ForecastRequest, ForecastResponse};

/// Mean of the last `min(window, t)` vectors, extended recursively: each
/// forecast step is appended to the window before computing the next.
pub fn forecast_ma(req: &ForecastRequest, window: usize) -> Result<ForecastResponse, ForecastError> {
    req.validate()?;
    if window == 0 {
        return Err(ForecastError::InvalidSpec("MA window must be at least 1".into()));
    }
    let d = req.dim();
    let w = window.min(req.history.len());
    let mut buf: Vec<Vec<f64>> = req.history[req.history.len() - w..].to_vec();
    let mut out = Vec::with_capacity(req.horizon);
    for _ in 0..req.horizon {
        let tail = &buf[buf.len() - w..];
        let mean: Vec<f64> = (0..d).map(|k| tail.iter().map(|v| v[k]).sum::<f64>() / w as f64).collect();
        buf.push(mean.clone());
        out.push(mean);
    }
    Ok(ForecastResponse::new(&req.series_id, out))
}

/// Repeats the last observed vector at every step.
pub fn forecast_persistence(req: &ForecastRequest) -> Result<ForecastResponse, ForecastError> {
    req.validate()?;
    let last = req.history.last().expect("validated non-empty").clone();
    Ok(ForecastResponse::new(&req.series_id, vec![last; req.horizon]))
}

/// Daily seasonal naive: step `h` (1-based) repeats `history[t - s + (h - 1) mod s]`
/// with season `s = round(86400 / interval_seconds)` clipped to `[1, t]`.
pub fn forecast_seasonal_naive(req: &ForecastRequest) -> Result<ForecastResponse, ForecastError> {
    req.validate()?;
    let t = req.history.len();
    let season = ((86_400.0 / f64::from(req.interval_seconds)).round() as usize).clamp(1, t);
    let out = (0..req.horizon).map(|h| req.history[t - season + h % season].clone()).collect();
    Ok(ForecastResponse::new(&req.series_id, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(values: &[f64], horizon: usize) -> ForecastRequest {
        ForecastRequest::new("s", values.iter().map(|&v| vec![v]).collect(), horizon, 3600)
    }

    #[test]
    fn ma_examples() {
        let one = forecast_ma(&scalar(&[2.0, 4.0, 6.0], 1), 3).unwrap();
        assert_eq!(one.forecast, vec![vec![4.0]]);

        let two = forecast_ma(&scalar(&[2.0, 4.0, 6.0], 2), 3).unwrap();
        assert_eq!(two.forecast[0][0], 4.0);
        // window becomes 4, 6, 4
        assert!((two.forecast[1][0] - 4.6667).abs() < 1e-4);

        let flat = forecast_ma(&scalar(&[5.0; 7], 5), 3).unwrap();
        assert!(flat.forecast.iter().all(|v| v[0] == 5.0));
    }

    #[test]
    fn ma_window_truncates_to_history() {
        let r = forecast_ma(&scalar(&[1.0, 3.0], 1), 10).unwrap();
        assert_eq!(r.forecast, vec![vec![2.0]]);
    }

    #[test]
    fn persistence_examples() {
        let req = ForecastRequest::new("s", vec![vec![1.0, 2.0], vec![5.0, 7.0]], 2, 60);
        assert_eq!(forecast_persistence(&req).unwrap().forecast, vec![vec![5.0, 7.0]; 2]);
        assert_eq!(forecast_persistence(&scalar(&[9.0], 1)).unwrap().forecast, vec![vec![9.0]]);
    }

    #[test]
    fn seasonal_naive_index_arithmetic() {
        // Ramp over two days of hourly data: value equals its 1-based position.
        let ramp: Vec<f64> = (1..=48).map(f64::from).collect();
        let r = forecast_seasonal_naive(&scalar(&ramp, 2)).unwrap();
        assert_eq!(r.forecast, vec![vec![25.0], vec![26.0]]);

        let wrap = forecast_seasonal_naive(&scalar(&ramp, 26)).unwrap();
        assert_eq!(wrap.forecast[24], vec![25.0]);

        // Daily interval: season 1, which is persistence.
        let daily = ForecastRequest::new("s", vec![vec![1.0], vec![4.0]], 3, 86_400);
        assert_eq!(forecast_seasonal_naive(&daily).unwrap().forecast, vec![vec![4.0]; 3]);

        // Season longer than the history clips to it.
        let short = forecast_seasonal_naive(&scalar(&[7.0, 8.0, 9.0], 4)).unwrap();
        assert_eq!(short.forecast, vec![vec![7.0], vec![8.0], vec![9.0], vec![7.0]]);
    }
}
