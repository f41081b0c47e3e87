#![no_main]
use libfuzzer_sys::fuzz_target;
use vmplace::cost::parse_weights;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(w) = parse_weights(text) {
        let parts = [w.security, w.power, w.balance];
        assert!(parts.iter().all(|p| p.is_finite() && *p >= 0.0));
        assert!((parts.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
});
