#![no_main]

use jumpalloc::market_data::{parse_csv, CsvSchema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for schema in [
        CsvSchema::new("date", "close"),
        CsvSchema::new("date", "yield"),
    ] {
        if let Ok(series) = parse_csv(data, &schema) {
            assert!(series.dates().windows(2).all(|w| w[0] < w[1]));
            assert!(series.values().iter().all(|v| v.is_finite()));
        }
    }
});
