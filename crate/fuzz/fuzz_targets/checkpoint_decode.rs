#![no_main]
use charrnn::checkpoint::{decode, AnyCheckpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let encoded = match decode(data) {
        Ok(AnyCheckpoint::F32(c)) => c.encode(),
        Ok(AnyCheckpoint::F64(c)) => c.encode(),
        Err(_) => return,
    };
    assert_eq!(encoded, data);
});
