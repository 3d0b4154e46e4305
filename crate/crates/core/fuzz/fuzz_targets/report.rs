#![no_main]

use idrive::sim::Report;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(r) = Report::parse(data) {
        let _ = Report::parse(&r.serialize()).unwrap();
    }
});
