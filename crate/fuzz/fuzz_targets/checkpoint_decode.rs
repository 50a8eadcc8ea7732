#![no_main]

use libfuzzer_sys::fuzz_target;
use swathfill_core::io::checkpoint;

// Input layout: header text, a zero byte, then the raw payload.
fuzz_target!(|data: &[u8]| {
    let Some(pos) = data.iter().position(|&b| b == 0) else { return };
    let (head, rest) = data.split_at(pos);
    let Ok(text) = std::str::from_utf8(head) else { return };
    let _ = checkpoint::decode(text, &rest[1..]);
});
