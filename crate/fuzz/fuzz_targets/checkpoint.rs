#![no_main]

use libfuzzer_sys::fuzz_target;
use pctnews::checkpoint::{sniff, CheckpointKind, EncoderCheckpoint};
use pctnews::lstm::LstmCheckpoint;

fuzz_target!(|data: &[u8]| {
    match sniff(data) {
        Ok(CheckpointKind::Encoder) => {
            if let Ok(ck) = EncoderCheckpoint::from_bytes(data) {
                let bytes = ck.to_bytes().unwrap();
                assert_eq!(EncoderCheckpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
            }
        }
        Ok(CheckpointKind::Lstm) => {
            if let Ok(ck) = LstmCheckpoint::from_bytes(data) {
                let bytes = ck.to_bytes().unwrap();
                assert_eq!(LstmCheckpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
            }
        }
        Err(_) => {
            assert!(EncoderCheckpoint::from_bytes(data).is_err());
            assert!(LstmCheckpoint::from_bytes(data).is_err());
        }
    }
});
