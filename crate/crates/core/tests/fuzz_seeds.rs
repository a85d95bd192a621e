//! Replays the checked-in fuzz seed corpora with the fuzz targets' own
//! assertions, so the corpora stay meaningful without a nightly toolchain.

use std::fs;
use std::path::PathBuf;

use charrnn::checkpoint::{decode, AnyCheckpoint};
use charrnn::data::corpus_from_bytes;
use charrnn::eval::{read_metrics, MetricsRecord};
use proptest::prelude::*;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn check_checkpoint(data: &[u8]) -> bool {
    let encoded = match decode(data) {
        Ok(AnyCheckpoint::F32(c)) => c.encode(),
        Ok(AnyCheckpoint::F64(c)) => c.encode(),
        Err(_) => return false,
    };
    assert_eq!(encoded, data);
    true
}

fn check_corpus(data: &[u8]) -> bool {
    match corpus_from_bytes("fuzz", data) {
        Ok((vocab, corpus)) => {
            assert!(corpus.tokens.iter().all(|&t| t < vocab.len()));
            assert_eq!(vocab.decode(&corpus.tokens).unwrap().as_bytes(), data);
            true
        }
        Err(_) => false,
    }
}

fn check_metrics(data: &[u8]) -> bool {
    let mut ok = false;
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(record) = MetricsRecord::parse_csv_row(text) {
            let row = record.to_csv_row();
            let again = MetricsRecord::parse_csv_row(&row).expect("written rows parse");
            assert_eq!(again.to_csv_row(), row);
            ok = true;
        }
    }
    ok | read_metrics(data).is_ok()
}

#[test]
fn checkpoint_seeds() {
    let accepted: Vec<String> = seeds("checkpoint_decode")
        .into_iter()
        .filter(|(_, d)| check_checkpoint(d))
        .map(|(n, _)| n)
        .collect();
    assert_eq!(accepted, ["valid_f32", "valid_f64"]);
}

#[test]
fn corpus_seeds() {
    let accepted: Vec<String> = seeds("corpus_from_bytes")
        .into_iter()
        .filter(|(_, d)| check_corpus(d))
        .map(|(n, _)| n)
        .collect();
    assert_eq!(accepted, ["ascii", "text", "unicode"]);
}

#[test]
fn metrics_seeds() {
    let accepted: Vec<String> = seeds("metrics_row")
        .into_iter()
        .filter(|(_, d)| check_metrics(d))
        .map(|(n, _)| n)
        .collect();
    assert_eq!(accepted, ["file", "row"]);
}

proptest! {
    #[test]
    fn corpus_never_panics(data in proptest::collection::vec(any::<u8>(), 0..64)) {
        check_corpus(&data);
    }

    #[test]
    fn text_corpora_round_trip(text in "\\PC{0,40}") {
        prop_assert_eq!(check_corpus(text.as_bytes()), !text.is_empty());
    }

    #[test]
    fn metrics_never_panic(text in "[0-9e.,+\\-naNif\n]{0,60}") {
        check_metrics(text.as_bytes());
    }

    #[test]
    fn mutated_checkpoints_never_panic(
        index in 0usize..10_000,
        byte in any::<u8>(),
        cut in 0usize..10_000,
    ) {
        let (_, mut data) = seeds("checkpoint_decode").remove(3);
        let i = index % data.len();
        data[i] = byte;
        data.truncate(data.len() - cut % data.len());
        check_checkpoint(&data);
    }
}
