#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let _ = idrive::sim::parse_routes(data, Path::new("."));
});
