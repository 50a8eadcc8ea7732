#![no_main]

use libfuzzer_sys::fuzz_target;
use swathfill_core::io::report::MetricReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = MetricReport::parse(text) {
        let again = MetricReport::parse(&report.to_text()).expect("serialized report must parse");
        assert_eq!(report, again);
    }
});
