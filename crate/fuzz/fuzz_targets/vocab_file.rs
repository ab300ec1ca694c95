#![no_main]

use libfuzzer_sys::fuzz_target;
use pctnews::tokenizer::Vocabulary;

fuzz_target!(|data: &[u8]| {
    if let Ok(vocab) = Vocabulary::read(data) {
        let mut buf = Vec::new();
        vocab.write(&mut buf).unwrap();
        assert_eq!(Vocabulary::read(buf.as_slice()).unwrap(), vocab);
    }
});
