//! Replays the fuzz corpus seeds, plus byte-level mutations of each, through
//! the parsers so the invariants the fuzz targets check also run on stable.

use std::fs;
use std::path::PathBuf;

use vmplace::config::parse_host_config;
use vmplace::cost::parse_weights;
use vmplace::workload::{parse_daily_trace, parse_trace_csv, ScenarioConfig};

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    assert!(out.len() >= 3, "{target} corpus too small");
    out
}

/// Each seed, every single-byte deletion, and a few splices and truncations.
fn variants(text: &str) -> Vec<String> {
    let bytes = text.as_bytes();
    let mut out = vec![text.to_string()];
    for i in 0..bytes.len().min(200) {
        let mut b = bytes.to_vec();
        b.remove(i);
        out.extend(String::from_utf8(b).ok());
        for sub in *b"9-e,\n\"" {
            let mut b = bytes.to_vec();
            b[i] = sub;
            out.extend(String::from_utf8(b).ok());
        }
    }
    for cut in (0..bytes.len()).step_by(7) {
        out.extend(std::str::from_utf8(&bytes[..cut]).ok().map(str::to_string));
    }
    out
}

fn check_trace(trace: &vmplace::workload::Trace) {
    assert!(!trace.is_empty());
    assert!(trace.period().is_finite());
    assert!(trace.points().all(|(_, u)| (0.0..=1.0).contains(&u)));
    for t in [0.0, 1.0, 299.5, 1e6, trace.period()] {
        assert!((0.0..=1.0).contains(&trace.value_at(t)));
    }
}

#[test]
fn host_config_seeds() {
    let mut ok = 0;
    for (name, text) in seeds("host_config") {
        for v in variants(&text) {
            if let Ok(host) = parse_host_config(&v) {
                assert!(host.capacity_mips() > 0.0 && host.capacity_mips().is_finite(), "{name}: {v:?}");
                assert!(host.curve().watts()[1..].contains(&host.p_best()), "{name}: {v:?}");
                ok += 1;
            }
        }
    }
    assert!(ok > 0);
    assert!(parse_host_config(&seeds("host_config").into_iter().find(|s| s.0 == "both.toml").unwrap().1).is_err());
}

#[test]
fn scenario_config_seeds() {
    for (name, text) in seeds("scenario_config") {
        let parsed = ScenarioConfig::from_toml(&text);
        assert_eq!(parsed.is_ok(), name != "negative_rate.toml", "{name}: {parsed:?}");
        for v in variants(&text) {
            if let Ok(cfg) = ScenarioConfig::from_toml(&v) {
                cfg.validate().unwrap();
                assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg, "{name}");
            }
        }
    }
}

#[test]
fn trace_csv_seeds() {
    for (name, text) in seeds("trace_csv") {
        let parsed = parse_trace_csv("seed", &text);
        let good = matches!(name.as_str(), "basic.csv" | "single.csv");
        assert_eq!(parsed.is_ok(), good, "{name}: {parsed:?}");
        for v in variants(&text) {
            if let Ok(t) = parse_trace_csv("v", &v) {
                check_trace(&t);
            }
        }
    }
    let huge = "offset_seconds,utilization_percent\n0,1\n1e308,2\n";
    assert!(parse_trace_csv("huge", huge).is_err());
}

#[test]
fn daily_trace_seeds() {
    for (name, text) in seeds("daily_trace") {
        assert_eq!(parse_daily_trace("seed", &text).is_ok(), name != "over.txt", "{name}");
        for v in variants(&text) {
            if let Ok(t) = parse_daily_trace("v", &v) {
                check_trace(&t);
            }
        }
    }
    assert_eq!(parse_daily_trace("d", &seeds("daily_trace")[1].1).unwrap().len(), 288);
}

#[test]
fn weights_seeds() {
    for (name, text) in seeds("weights") {
        assert_eq!(parse_weights(&text).is_ok(), name != "two.txt", "{name}");
        for v in variants(&text) {
            if let Ok(w) = parse_weights(&v) {
                let parts = [w.security, w.power, w.balance];
                assert!(parts.iter().all(|p| p.is_finite() && *p >= 0.0), "{v}");
                assert!((parts.iter().sum::<f64>() - 1.0).abs() < 1e-6, "{v}");
            }
        }
    }
}
