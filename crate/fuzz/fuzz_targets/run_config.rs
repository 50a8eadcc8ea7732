#![no_main]

use libfuzzer_sys::fuzz_target;
use swathfill_core::io::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        // Accepted configs are valid and round-trip through rendering.
        cfg.validate().expect("parsed config must validate");
        let again = RunConfig::parse(&cfg.to_text()).expect("serialized config must parse");
        assert_eq!(cfg, again);
    }
});
