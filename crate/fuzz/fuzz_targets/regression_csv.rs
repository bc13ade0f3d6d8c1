#![no_main]

use grow_core::io::parse_regression_csv;
use grow_core::regression::log_evalue_regression;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(reg) = parse_regression_csv(text) {
        assert!(reg.n() >= reg.d() + 2);
        let _ = log_evalue_regression(&reg, 0.0, 0.5);
    }
});
