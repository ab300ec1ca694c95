#![no_main]

use libfuzzer_sys::fuzz_target;
use pctnews::evaluation::ComparisonTable;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(table) = ComparisonTable::from_csv(text) {
        let csv = table.to_csv();
        assert_eq!(ComparisonTable::from_csv(&csv).unwrap().to_csv(), csv);
    }
});
