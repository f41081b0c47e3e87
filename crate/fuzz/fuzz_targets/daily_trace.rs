#![no_main]
use libfuzzer_sys::fuzz_target;
use vmplace::workload::parse_daily_trace;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(trace) = parse_daily_trace("fuzz", text) {
        assert!(trace.points().all(|(_, u)| (0.0..=1.0).contains(&u)));
        assert!((0.0..=1.0).contains(&trace.value_at(12345.0)));
    }
});
