//! The adapter bridge against the stub adapter running as a real child process.

use std::time::{Duration, Instant};

use odflow::bridge::{handshake, AdapterConfig, BridgeError};
use odflow::forecast::{forecast_persistence, forecast_seasonal_naive, ForecastRequest};

fn stub(mode: &str) -> AdapterConfig {
    AdapterConfig {
        command: vec![env!("CARGO_BIN_EXE_odflow-stub-adapter").into(), "--mode".into(), mode.into()],
        handshake_timeout: Duration::from_secs(10),
        request_timeout: Duration::from_secs(10),
        max_in_flight: 1,
    }
}

fn req(series: &str, t: usize) -> ForecastRequest {
    let history = (0..t).map(|k| vec![k as f64, 2.5, 0.0]).collect();
    ForecastRequest::new(series, history, 2, 3600)
}

#[test]
fn persistence_stub_round_trips() {
    let mut s = handshake(&stub("persistence")).unwrap();
    assert_eq!(s.name(), "odflow-stub/persistence");
    for k in 1..5 {
        let r = req(&format!("s{k}"), k * 3);
        assert_eq!(s.forecast_remote(&r).unwrap(), forecast_persistence(&r).unwrap());
    }
    let report = s.shutdown();
    assert!(report.is_clean(), "{report:?}");
}

#[test]
fn seasonal_stub_matches_native_seasonal_naive() {
    let mut s = handshake(&stub("seasonal-naive")).unwrap();
    let r = ForecastRequest::new("day", (0..60).map(|k| vec![(k % 24) as f64]).collect(), 5, 3600);
    assert_eq!(s.forecast_remote(&r).unwrap(), forecast_seasonal_naive(&r).unwrap());
}

#[test]
fn handshake_failures() {
    let missing = AdapterConfig::new(vec!["/nonexistent/odflow-adapter".into()]);
    assert!(matches!(handshake(&missing), Err(BridgeError::Spawn { .. })));

    assert!(matches!(handshake(&stub("protocol2")), Err(BridgeError::ProtocolMismatch { expected: 1, got: 2 })));

    let silent = AdapterConfig { handshake_timeout: Duration::from_millis(300), ..stub("silent") };
    let start = Instant::now();
    assert!(matches!(handshake(&silent), Err(BridgeError::HandshakeTimeout(_))));
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn bad_replies_map_to_distinct_errors() {
    let r = req("x", 4);
    let mut wrong = handshake(&stub("wrong-horizon")).unwrap();
    assert!(matches!(wrong.forecast_remote(&r), Err(BridgeError::DimensionMismatch { .. })));
    let mut refusing = handshake(&stub("error-reply")).unwrap();
    assert!(matches!(refusing.forecast_remote(&r), Err(BridgeError::Adapter { id: Some(_), .. })));
    let mut unknown = handshake(&stub("unknown-type")).unwrap();
    assert!(matches!(unknown.forecast_remote(&r), Err(BridgeError::Protocol(_))));
    let mut garbage = handshake(&stub("malformed")).unwrap();
    assert!(matches!(garbage.forecast_remote(&r), Err(BridgeError::Malformed { .. })));
}

#[test]
fn silent_request_times_out() {
    let mut s = handshake(&AdapterConfig { request_timeout: Duration::from_millis(200), ..stub("hang") }).unwrap();
    let start = Instant::now();
    match s.forecast_remote(&req("slow", 3)) {
        Err(BridgeError::RequestTimeout { series, after, .. }) => {
            assert_eq!(series, "slow");
            assert_eq!(after, Duration::from_millis(200));
        }
        other => panic!("expected a timeout, got {other:?}"),
    }
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn pipelined_replies_out_of_order() {
    let mut s = handshake(&AdapterConfig { max_in_flight: 2, ..stub("reorder") }).unwrap();
    let reqs: Vec<ForecastRequest> = (0..8).map(|k| req(&format!("s{k}"), k + 1)).collect();
    let out = s.forecast_batch(&reqs).unwrap();
    for (r, o) in reqs.iter().zip(&out) {
        assert_eq!(o, &forecast_persistence(r).unwrap());
    }
}

#[test]
fn adapter_dying_mid_request() {
    let mut s = handshake(&stub("exit-on-forecast")).unwrap();
    match s.forecast_remote(&req("boom", 3)) {
        Err(BridgeError::SessionDead { diagnostics }) => {
            assert!(diagnostics.contains("simulated crash on request"), "{diagnostics}");
        }
        other => panic!("expected a dead session, got {other:?}"),
    }
    assert!(!s.is_alive());
    assert!(matches!(s.forecast_remote(&req("again", 3)), Err(BridgeError::SessionDead { .. })));
    let report = s.shutdown();
    assert_eq!(report.exit_code, Some(3));
}

#[test]
fn hung_shutdown_is_forced_and_second_is_noop() {
    let mut s = handshake(&stub("ignore-shutdown")).unwrap();
    let start = Instant::now();
    let first = s.shutdown_with_grace(Duration::from_millis(200));
    assert!(first.forced && !first.noop, "{first:?}");
    assert!(start.elapsed() < Duration::from_secs(5));
    let second = s.shutdown();
    assert!(second.noop);
    assert!(matches!(s.forecast_remote(&req("late", 2)), Err(BridgeError::Closed)));
}
