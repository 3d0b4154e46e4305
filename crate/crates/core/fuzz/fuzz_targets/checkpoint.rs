#![no_main]

use idrive::tensor::{peek_precision, Checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = peek_precision(data);
    if let Ok(c) = Checkpoint::<f32>::decode(data) {
        let bytes = c.encode();
        assert_eq!(Checkpoint::<f32>::decode(&bytes).unwrap().encode(), bytes);
    }
    let _ = Checkpoint::<f64>::decode(data);
});
