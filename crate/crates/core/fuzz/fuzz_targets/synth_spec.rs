#![no_main]

use jumpalloc::synth::{simulate, SynthSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(mut spec) = SynthSpec::from_json(text) {
        spec.n_days = spec.n_days.min(500);
        let (ds, states) = simulate(&spec).unwrap();
        assert_eq!(ds.len(), states.len());
    }
});
