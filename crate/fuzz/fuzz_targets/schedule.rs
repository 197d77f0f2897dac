#![no_main]

use libfuzzer_sys::fuzz_target;
use uvls::harness::parse_schedule;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rounds) = parse_schedule(text, 4, 5) {
        assert!(rounds.len() <= 5);
        assert!(rounds.iter().all(|r| r.len() == 4));
    }
});
