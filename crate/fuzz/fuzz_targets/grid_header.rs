#![no_main]

use libfuzzer_sys::fuzz_target;
use swathfill_core::io::gridfile::GridHeader;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(header) = GridHeader::parse(text) {
        // A header that parses must round-trip through its own rendering.
        let again = GridHeader::parse(&header.to_text()).expect("serialized header must parse");
        assert_eq!(header, again);
    }
});
