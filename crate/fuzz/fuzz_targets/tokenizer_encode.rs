#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use pctnews::tokenizer::{build_vocab, encode, Vocabulary};

fn vocab() -> &'static Vocabulary {
    static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
    VOCAB.get_or_init(|| {
        build_vocab(
            &[
                "Acme beats estimates as profit surges | Newswire | Acme Corp | 2023-01-05",
                "Shares plunge after recall probe | Market Daily | Globex | 2023-02-11",
            ],
            300,
        )
        .unwrap()
    })
}

fuzz_target!(|data: &[u8]| {
    let Some((&len, rest)) = data.split_first() else { return };
    let text = String::from_utf8_lossy(rest);
    let max_len = len as usize;
    match encode(&text, vocab(), max_len) {
        Ok(seq) => {
            if let Err(msg) = seq.check(vocab().len()) {
                panic!("invariant violated for {text:?} at max_len {max_len}: {msg}");
            }
        }
        Err(_) => assert!(max_len < 2),
    }
});
