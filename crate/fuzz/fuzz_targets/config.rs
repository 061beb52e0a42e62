//! Config text parser. Anything it accepts must validate and survive a
//! render/parse cycle unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use tarp::config::{parse_config, render_config};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = parse_config(text) {
        cfg.validate().expect("parsed config validates");
        let again = parse_config(&render_config(&cfg)).expect("rendered config parses");
        assert_eq!(again, cfg);
    }
});
