#![no_main]

use libfuzzer_sys::fuzz_target;
use regdistill::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        // an accepted document echoes to an equivalent one
        let again = ExperimentConfig::parse(&cfg.echo()).expect("echo parses");
        assert_eq!(again, cfg);
    }
});
