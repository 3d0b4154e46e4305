#![no_main]

use idrive::data::{decode_lidar_bin, encode_lidar_bin};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(pc) = decode_lidar_bin(data, 0) {
        assert_eq!(encode_lidar_bin(&pc), data);
    }
});
