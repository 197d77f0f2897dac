#![no_main]

use libfuzzer_sys::fuzz_target;
use uvls::harness::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ck) = Checkpoint::from_json(text) {
        let _ = ck.restore();
    }
});
