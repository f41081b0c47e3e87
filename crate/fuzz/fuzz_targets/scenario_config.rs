#![no_main]
use libfuzzer_sys::fuzz_target;
use vmplace::workload::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ScenarioConfig::from_toml(text) {
        cfg.validate().expect("parsed config must validate");
        let again = ScenarioConfig::from_toml(&cfg.to_toml()).expect("round trip");
        assert_eq!(again, cfg);
    }
});
