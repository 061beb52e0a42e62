//! Arbitrary bytes through the CSV reader, with and without a header row
//! and with the response picked by index or by name.

#![no_main]

use libfuzzer_sys::fuzz_target;
use tarp::data::{read_csv_from_reader, read_prediction_rows_from_reader, CsvOptions, ResponseColumn};

fuzz_target!(|data: &[u8]| {
    let Some((&selector, body)) = data.split_first() else {
        return;
    };
    let response = if selector & 1 == 0 {
        ResponseColumn::Index(usize::from(selector >> 1) % 8)
    } else {
        ResponseColumn::Name("y".to_string())
    };
    let options = CsvOptions {
        header_row: selector & 1 == 1 || selector & 2 == 2,
        response,
    };
    if let Ok(ds) = read_csv_from_reader(body, &options) {
        assert_eq!(ds.x().nrows(), ds.n());
        assert_eq!(ds.y().len(), ds.n());
        assert!(ds.x().iter().all(|v| v.is_finite()));
        assert_eq!(ds.names().len(), ds.p());
    }
    if let Ok(rows) = read_prediction_rows_from_reader(body, &options) {
        assert_eq!(rows.names.len(), rows.x.ncols());
        if let Some(y) = &rows.y {
            assert_eq!(y.len(), rows.x.nrows());
        }
    }
});
