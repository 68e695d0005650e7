#![no_main]

use libfuzzer_sys::fuzz_target;
use regdistill::data::FeatureCache;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = FeatureCache::from_bytes(data) {
        assert_eq!(c.to_bytes(), data);
        for &id in c.ids() {
            assert!(c.lookup(id).is_some());
        }
    }
});
