#![no_main]

use libfuzzer_sys::fuzz_target;
use uvls::nn::DenseNet;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(net) = DenseNet::from_json(text) {
        let back = DenseNet::from_json(&net.to_json()).expect("round trip");
        assert_eq!(back.to_json(), net.to_json());
    }
});
