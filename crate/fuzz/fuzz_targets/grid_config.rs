#![no_main]

use libfuzzer_sys::fuzz_target;
use uvls::grid::{GridConfig, GridSystem};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // anything that validates must also build
    if let Ok(cfg) = GridConfig::from_toml(text) {
        let _ = GridSystem::build(cfg);
    }
});
