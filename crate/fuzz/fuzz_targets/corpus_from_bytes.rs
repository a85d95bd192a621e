#![no_main]
use charrnn::data::corpus_from_bytes;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((vocab, corpus)) = corpus_from_bytes("fuzz", data) {
        assert!(corpus.tokens.iter().all(|&t| t < vocab.len()));
        assert_eq!(vocab.decode(&corpus.tokens).unwrap().as_bytes(), data);
    }
});
