#![no_main]

use libfuzzer_sys::fuzz_target;
use regdistill::data::Dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = Dataset::from_bytes(data) {
        assert_eq!(d.to_bytes(), data);
    }
});
