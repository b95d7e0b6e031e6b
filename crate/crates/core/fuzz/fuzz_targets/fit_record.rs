#![no_main]

use jumpalloc::jump_model::JumpModelFit;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(fit) = JumpModelFit::from_json(text) {
        let round = JumpModelFit::from_json(&fit.to_json().unwrap()).unwrap();
        assert_eq!(round, fit);
    }
});
