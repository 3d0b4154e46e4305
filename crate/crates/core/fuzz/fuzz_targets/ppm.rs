#![no_main]

use idrive::image::RgbImage;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = RgbImage::decode_ppm(data) {
        assert_eq!(RgbImage::decode_ppm(&img.encode_ppm()).unwrap(), img);
    }
});
