#![no_main]
use charrnn::eval::{read_metrics, MetricsRecord};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(record) = MetricsRecord::parse_csv_row(text) {
            let row = record.to_csv_row();
            let again = MetricsRecord::parse_csv_row(&row).expect("written rows parse");
            assert_eq!(again.to_csv_row(), row);
        }
    }
    let _ = read_metrics(data);
});
