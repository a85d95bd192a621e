#![no_main]
use charrnn_cli::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::parse_text(text) {
        let snapshot = cfg.to_text();
        let again = RunConfig::parse_text(&snapshot).expect("snapshot parses");
        assert_eq!(again.to_text(), snapshot);
        let _ = cfg.validate();
    }
});
