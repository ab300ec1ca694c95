#![no_main]

use libfuzzer_sys::fuzz_target;
use pctnews::evaluation::MetricsReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = MetricsReport::from_json(text) {
        if report.per_example.iter().all(|e| e.prediction.is_finite() && e.actual.is_finite()) {
            let json = report.to_json().unwrap();
            assert_eq!(MetricsReport::from_json(&json).unwrap().to_json().unwrap(), json);
        }
    }
});
