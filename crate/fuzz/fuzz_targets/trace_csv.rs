#![no_main]

use libfuzzer_sys::fuzz_target;
use xorcast::traffic::{parse_trace, write_trace};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(flows) = parse_trace(text, 250) {
        // Whatever parses must survive a write and re-read unchanged.
        let mut buf = Vec::new();
        write_trace(&mut buf, flows.values().flatten()).unwrap();
        let again = parse_trace(std::str::from_utf8(&buf).unwrap(), 250).unwrap();
        assert_eq!(again, flows);
    }
});
