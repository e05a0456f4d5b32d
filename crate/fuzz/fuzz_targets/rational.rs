#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // The rational parser sees raw config-file tokens; it must reject
    // garbage without panicking, and anything it accepts must survive a
    // print/parse round trip.
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(r) = gt_control::rational::parse_rational(s) {
            let again = gt_control::rational::parse_rational(&r.to_string()).unwrap();
            assert_eq!(r, again);
        }
    }
});
