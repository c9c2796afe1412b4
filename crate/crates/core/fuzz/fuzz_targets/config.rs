#![no_main]

use cmcsweep::config::{parse_override, RunConfig};
use libfuzzer_sys::fuzz_target;

// First line is an override, the rest a TOML file.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let overrides: Vec<_> = parse_override(first).into_iter().collect();
    let _ = RunConfig::from_toml_str(rest, &overrides);
    let _ = RunConfig::from_toml_str(text, &[]);
});
