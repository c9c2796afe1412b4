#![no_main]

use cmcsweep::io::{parse_coo, write_coo};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = parse_coo(text) {
        assert_eq!(parse_coo(&write_coo(&m)).unwrap(), m);
    }
});
