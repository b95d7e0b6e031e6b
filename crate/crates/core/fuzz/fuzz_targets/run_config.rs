#![no_main]

use jumpalloc::cli::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = RunConfig::from_json(text) {
        let again = serde_json::to_string(&config).unwrap();
        let parsed = RunConfig::from_json(&again).unwrap();
        assert_eq!(parsed.hash(), config.hash());
    }
});
