//! Replays the config fuzz seeds with the fuzz target's assertions.

use std::fs;
use std::path::PathBuf;

use charrnn_cli::RunConfig;
use proptest::prelude::*;

fn check(text: &str) -> bool {
    match RunConfig::parse_text(text) {
        Ok(cfg) => {
            let snapshot = cfg.to_text();
            let again = RunConfig::parse_text(&snapshot).expect("snapshot parses");
            assert_eq!(again.to_text(), snapshot);
            let _ = cfg.validate();
            true
        }
        Err(_) => false,
    }
}

#[test]
fn config_seeds() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/config_parse");
    let mut accepted: Vec<String> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| check(&fs::read_to_string(p).unwrap()))
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    accepted.sort();
    // `invalid_k1` parses; validation is a separate step.
    assert_eq!(accepted, ["full", "invalid_k1", "typical"]);
    let full = RunConfig::parse_text(&fs::read_to_string(dir.join("full")).unwrap()).unwrap();
    assert!(full.validate().is_ok());
    let bad = RunConfig::parse_text(&fs::read_to_string(dir.join("invalid_k1")).unwrap()).unwrap();
    assert!(bad.validate().is_err());
}

proptest! {
    #[test]
    fn arbitrary_text_never_panics(text in "\\PC{0,80}") {
        check(&text);
    }

    #[test]
    fn key_value_lines_never_panic(
        lines in proptest::collection::vec(
            ("(k1|k2|scheme|dataset|bench_archs|loss_window|precision|run_name|cell_clip|zzz)",
             "[ -~]{0,12}"),
            0..8,
        )
    ) {
        let text: String = lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        check(&text);
    }
}
