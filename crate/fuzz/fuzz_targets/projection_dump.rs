#![no_main]

use libfuzzer_sys::fuzz_target;
use tarp::projection::{decode_dump, encode_dump};

fuzz_target!(|data: &[u8]| {
    if let Ok(proj) = decode_dump(data) {
        assert_eq!(proj.entries().nrows(), proj.m());
        assert_eq!(proj.entries().ncols(), proj.column_map().len());
        let bytes = encode_dump(&proj);
        assert_eq!(decode_dump(&bytes).expect("re-decode"), proj);
    }
});
