#![no_main]

use idrive::data::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(m) = Manifest::parse(data) {
        assert_eq!(Manifest::parse(&m.serialize()).unwrap(), m);
    }
});
