#![no_main]

use gt_control::config::{RunConfig, BENCHMARK_DEFAULTS};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Full untrusted-config path: JSON decode, then resolution into a solver
    // configuration (tableau validation, classification, bounds checks).
    // Errors are expected; panics are not.
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_json(s) {
            let _ = cfg.phi_setting();
            let _ = cfg.resolve(&BENCHMARK_DEFAULTS);
        }
    }
});
