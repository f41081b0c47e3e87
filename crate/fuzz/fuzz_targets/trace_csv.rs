#![no_main]
use libfuzzer_sys::fuzz_target;
use vmplace::workload::parse_trace_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(trace) = parse_trace_csv("fuzz", text) {
        assert!(!trace.is_empty());
        assert!(trace.points().all(|(_, u)| (0.0..=1.0).contains(&u)));
        for t in [0.0, 1.0, 299.5, 1e6, trace.period()] {
            assert!((0.0..=1.0).contains(&trace.value_at(t)));
        }
    }
});
