#![no_main]

use libfuzzer_sys::fuzz_target;
use pctnews::data::{read_dataset, validate_dataset, write_dataset};

fuzz_target!(|data: &[u8]| {
    let report = validate_dataset(data);
    match read_dataset(data) {
        Ok(dataset) => {
            assert!(report.is_valid(), "loader accepted what the validator rejected");
            let mut buf = Vec::new();
            write_dataset(&dataset, &mut buf).unwrap();
            assert_eq!(read_dataset(buf.as_slice()).unwrap(), dataset);
        }
        Err(_) => assert!(!report.is_valid(), "validator accepted what the loader rejected"),
    }
});
