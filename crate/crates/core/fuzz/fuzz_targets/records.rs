#![no_main]

use cmcsweep::io::{CriticalPointFile, SweepoutLedger};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = serde_json::from_slice::<CriticalPointFile>(data);
    let _ = serde_json::from_slice::<SweepoutLedger>(data);
});
