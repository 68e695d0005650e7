#![no_main]

use libfuzzer_sys::fuzz_target;
use regdistill::data::{peek_precision, Checkpoint, CHECKPOINT_MAGIC};

fuzz_target!(|data: &[u8]| {
    let _ = peek_precision(CHECKPOINT_MAGIC, data);
    if let Ok(c) = Checkpoint::<f32>::from_bytes(data) {
        assert_eq!(c.to_bytes(), data);
    }
    if let Ok(c) = Checkpoint::<f64>::from_bytes(data) {
        assert_eq!(c.to_bytes(), data);
    }
});
