#![no_main]
use libfuzzer_sys::fuzz_target;
use vmplace::config::parse_host_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(host) = parse_host_config(text) {
        assert!(host.capacity_mips() > 0.0 && host.capacity_mips().is_finite());
        assert!(host.curve().watts().iter().all(|w| w.is_finite() && *w >= 0.0));
        assert!(host.curve().watts()[1..].contains(&host.p_best()));
    }
});
