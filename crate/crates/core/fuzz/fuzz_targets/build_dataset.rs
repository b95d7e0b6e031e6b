#![no_main]

use jumpalloc::market_data::{build_dataset, parse_csv, CsvSchema};
use libfuzzer_sys::fuzz_target;

// Input is a price CSV and a yield CSV separated by a NUL byte.
fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|&b| b == 0) else {
        return;
    };
    let (prices, yields) = (&data[..split], &data[split + 1..]);
    let Ok(prices) = parse_csv(prices, &CsvSchema::new("date", "close")) else {
        return;
    };
    let Ok(yields) = parse_csv(yields, &CsvSchema::new("date", "yield")) else {
        return;
    };
    if let Ok(ds) = build_dataset(&prices, &yields) {
        assert_eq!(ds.dates().len(), ds.risk_free_daily().len());
        assert!(ds.index_returns().values().iter().all(|r| *r > -1.0));
    }
});
