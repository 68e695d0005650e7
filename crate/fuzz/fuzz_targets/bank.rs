#![no_main]

use libfuzzer_sys::fuzz_target;
use regdistill::data::BankFile;
use regdistill::eval::FeatureBank;

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = BankFile::from_bytes(data) {
        assert_eq!(file.to_bytes(), data);
        let _ = FeatureBank::from_file(&file);
    }
});
